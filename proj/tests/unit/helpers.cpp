#include "helpers.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iterator>
#include <random>

#include <unistd.h>

namespace fs = std::filesystem;

namespace scenegen::test {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("scenegen_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

DenoiserConfig tiny_denoiser_config(int image_size) {
  DenoiserConfig c;
  c.image_size = image_size;
  c.base_channels = 8;
  c.channel_multipliers = {1, 2};
  c.time_embed_dim = 16;
  c.text_embed_dim = 12;
  c.condition_channels = 6;
  c.groups = 4;
  return c;
}

ModelConfig tiny_model_config(int image_size, int num_classes) {
  ModelConfig m;
  m.denoiser = tiny_denoiser_config(image_size);
  m.text.embed_dim = 8;
  m.text.layers = 2;
  m.text.max_tokens = 48;
  m.finalize(num_classes);
  return m;
}

std::vector<std::string> toy_class_names() {
  return {"ground", "road", "truck", "excavator", "loader"};
}

SceneAnnotation make_annotation(int width, int height, const std::vector<BoundingBox>& boxes) {
  SceneAnnotation a;
  a.width = width;
  a.height = height;
  a.boxes = boxes;
  a.class_names = toy_class_names();
  a.mask.assign(static_cast<std::size_t>(width) * height, 0);
  for (const auto& b : boxes) {
    for (int y = b.y1; y < b.y2; ++y) {
      for (int x = b.x1; x < b.x2; ++x) a.mask[y * width + x] = static_cast<std::uint8_t>(b.class_id);
    }
  }
  return a;
}

ConditionBatch random_conditions(const DenoiserConfig& cfg, int n, Rng& rng) {
  ConditionBatch c;
  const int s = cfg.image_size;
  c.spatial = Tensor(n, cfg.condition_channels, s, s);
  std::uniform_int_distribution<int> cls(0, cfg.condition_channels - 2);
  std::bernoulli_distribution coin(0.3);
  for (int i = 0; i < n; ++i) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        c.spatial.at(i, cls(rng), y, x) = 1;
        c.spatial.at(i, cfg.condition_channels - 1, y, x) = coin(rng) ? 1 : 0;
      }
    }
  }
  c.text = randn(Shape{n, cfg.text_embed_dim, 1, 1}, rng);
  c.dims = Tensor(n, 2, 1, 1, real(1));
  return c;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::pair<std::string, std::vector<char>>> snapshot_tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::vector<char>>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), read_bytes(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace scenegen::test
