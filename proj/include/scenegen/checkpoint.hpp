#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenegen/tensor.hpp"

namespace scenegen {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Binary container for model state:
//   "SWCKPT01"  u32 version  u64 header length  header JSON  raw tensor data
// The header carries free-form metadata plus a table of (name, shape, dtype)
// entries in storage order. Tensors are stored in the precision of the
// writer and converted on read.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
};

// Writes to a temporary file and renames it into place, so an interrupted
// write never leaves a truncated archive under `path`.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);
// Header only; skips the tensor payload.
nlohmann::json read_archive_meta(const std::filesystem::path& path);

}  // namespace scenegen
