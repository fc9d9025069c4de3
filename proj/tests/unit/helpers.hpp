#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenegen/conditioning.hpp"
#include "scenegen/denoiser.hpp"
#include "scenegen/model.hpp"
#include "scenegen/rng.hpp"

namespace scenegen::test {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// 16x16, two resolutions, a handful of channels: fast enough for exhaustive
// checks.
DenoiserConfig tiny_denoiser_config(int image_size = 16);
ModelConfig tiny_model_config(int image_size = 16, int num_classes = 5);

std::vector<std::string> toy_class_names();

// Annotation of the given size with class 0 everywhere, plus boxes whose
// interiors are painted with their class.
SceneAnnotation make_annotation(int width, int height, const std::vector<BoundingBox>& boxes);

// Random spatial/text/dims conditioning for a batch of n.
ConditionBatch random_conditions(const DenoiserConfig& cfg, int n, Rng& rng);

std::vector<char> read_bytes(const std::filesystem::path& p);

// Byte contents of every regular file under `root`, keyed by relative path.
std::vector<std::pair<std::string, std::vector<char>>> snapshot_tree(const std::filesystem::path& root);

}  // namespace scenegen::test
