#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenegen/conditioning.hpp"
#include "scenegen/image_io.hpp"
#include "scenegen/rng.hpp"

namespace scenegen {

enum class Split { train, val, generate_only };

std::string to_string(Split split);
Split parse_split(const std::string& s);

struct PaletteEntry {
  int id = 0;
  std::string name;
  std::array<std::uint8_t, 3> color{};
  bool vehicle = false;
};

// One line of manifest.jsonl. Paths are relative to the dataset root.
struct ManifestRecord {
  std::string id;
  std::string image;  // empty for generate-only records
  std::string mask;
  int width = 0;
  int height = 0;
  std::vector<BoundingBox> boxes;
  std::string prompt;  // regenerated from the labels when empty
  Split split = Split::train;
};

// Dataset layout:
//   root/manifest.jsonl   header line {format_version, palette}, then records
//   root/images/*.png     RGB scenes
//   root/masks/*.png      single-channel class-index maps
struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  std::filesystem::path root;
  int format_version = kFormatVersion;
  std::vector<PaletteEntry> palette;
  std::vector<ManifestRecord> records;

  std::vector<std::string> class_names() const;
  std::filesystem::path manifest_path() const { return root / "manifest.jsonl"; }
};

// A loaded sample. `image` is (1, 3, h, w) in [-1, 1], empty when absent.
struct SceneRecord {
  std::string id;
  Tensor image;
  SceneAnnotation annotation;
  std::string prompt;
  Split split = Split::train;
};

// Accepts the dataset directory or the manifest file itself. Checks JSON
// structure, file existence, box bounds and palette coverage, and reports
// every failing record in one ValidationError.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest);

// Decodes every referenced file and returns one message per problem (empty
// when the dataset is consistent).
std::vector<std::string> validate_dataset(const DatasetManifest& manifest);

SceneRecord load_record(const DatasetManifest& manifest, std::size_t index);
std::vector<SceneRecord> load_records(const DatasetManifest& manifest);

struct AugmentOptions {
  double flip_probability = 0.5;
  double max_hue_degrees = 18.0;
};

// Horizontal flip of image, mask and boxes; the prompt is regenerated.
SceneRecord flip_record(const SceneRecord& rec);
// Rotates hue in HSV space; values stay in [-1, 1].
Tensor rotate_hue(const Tensor& image, double degrees);
SceneRecord augment(const SceneRecord& rec, Rng& rng,
                    const AugmentOptions& opts = {});

// Palette of the procedural scenes: two background classes, three vehicles.
std::vector<PaletteEntry> toy_palette();

// Renders `n` scenes of size x size pixels into `out_dir` and writes the
// manifest. Deterministic given the seed; size must be 32, 64 or 128.
DatasetManifest generate_toy_scenes(int n, int size, std::uint64_t seed,
                                    const std::filesystem::path& out_dir,
                                    Split split = Split::train);

}  // namespace scenegen
