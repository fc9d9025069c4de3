#include "scenegen/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "scenegen/error.hpp"

namespace scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'W', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

const char* native_dtype() { return sizeof(real) == 4 ? "f32" : "f64"; }

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError("truncated checkpoint " + path.string());
  }
  return v;
}

json read_header(std::istream& in, const fs::path& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto len = read_pod<std::uint64_t>(in, path);
  if (len > (1ull << 32)) throw IoError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw IoError("truncated checkpoint header in " + path.string());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
}

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

const Tensor& Archive::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw ValidationError("checkpoint has no tensor '" + name + "'");
  return *t;
}

void save_archive(const fs::path& path, const Archive& archive) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  json table = json::array();
  for (const auto& t : archive.tensors) {
    const Shape& s = t.tensor.shape();
    table.push_back({{"name", t.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"dtype", native_dtype()}});
  }
  const std::string header = json{{"meta", archive.meta}, {"tensors", table}}.dump();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, 8);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : archive.tensors) {
      out.write(reinterpret_cast<const char*>(t.tensor.data()),
                static_cast<std::streamsize>(t.tensor.size() * sizeof(real)));
    }
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Archive load_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const json header = read_header(in, path);
  Archive a;
  a.meta = header.value("meta", json::object());
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw IoError("bad tensor shape in " + path.string());
    t.tensor = Tensor(Shape{dims[0], dims[1], dims[2], dims[3]});
    const std::string dtype = entry.at("dtype").get<std::string>();
    const std::size_t n = t.tensor.size();
    if (dtype == "f32") {
      std::vector<float> buf(n);
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4))) {
        throw IoError("truncated tensor '" + t.name + "' in " + path.string());
      }
      for (std::size_t i = 0; i < n; ++i) t.tensor[i] = static_cast<real>(buf[i]);
    } else if (dtype == "f64") {
      std::vector<double> buf(n);
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 8))) {
        throw IoError("truncated tensor '" + t.name + "' in " + path.string());
      }
      for (std::size_t i = 0; i < n; ++i) t.tensor[i] = static_cast<real>(buf[i]);
    } else {
      throw IoError("unknown dtype '" + dtype + "' in " + path.string());
    }
    a.tensors.push_back(std::move(t));
  }
  return a;
}

json read_archive_meta(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_header(in, path).value("meta", json::object());
}

}  // namespace scenegen
