#include "scenegen/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scenegen/error.hpp"

namespace scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::generate_only: return "generate-only";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "generate-only") return Split::generate_only;
  throw ValidationError("unknown split '" + s + "'");
}

std::vector<std::string> DatasetManifest::class_names() const {
  std::vector<std::string> names(palette.size());
  for (const auto& p : palette) names.at(p.id) = p.name;
  return names;
}

namespace {

json palette_to_json(const std::vector<PaletteEntry>& palette) {
  json arr = json::array();
  for (const auto& p : palette) {
    arr.push_back({{"id", p.id},
                   {"name", p.name},
                   {"color", {p.color[0], p.color[1], p.color[2]}},
                   {"vehicle", p.vehicle}});
  }
  return arr;
}

json record_to_json(const ManifestRecord& r) {
  json boxes = json::array();
  for (const auto& b : r.boxes) {
    boxes.push_back({{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2},
                     {"class_id", b.class_id}});
  }
  return {{"id", r.id},     {"image", r.image}, {"mask", r.mask},
          {"width", r.width}, {"height", r.height}, {"boxes", boxes},
          {"prompt", r.prompt}, {"split", to_string(r.split)}};
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.image = j.value("image", std::string());
  r.mask = j.at("mask").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  for (const auto& b : j.at("boxes")) {
    r.boxes.push_back({b.at("x1").get<int>(), b.at("y1").get<int>(),
                       b.at("x2").get<int>(), b.at("y2").get<int>(),
                       b.at("class_id").get<int>()});
  }
  r.prompt = j.value("prompt", std::string());
  r.split = parse_split(j.value("split", std::string("train")));
  return r;
}

std::string join_lines(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += "\n  " + s;
  return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  fs::path file = fs::is_directory(path) ? path / "manifest.jsonl" : path;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());

  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty manifest " + file.string());
  try {
    const json header = json::parse(line);
    m.format_version = header.at("format_version").get<int>();
    for (const auto& p : header.at("palette")) {
      PaletteEntry e;
      e.id = p.at("id").get<int>();
      e.name = p.at("name").get<std::string>();
      const auto c = p.at("color");
      for (int k = 0; k < 3; ++k) e.color[k] = c.at(k).get<std::uint8_t>();
      e.vehicle = p.value("vehicle", false);
      m.palette.push_back(e);
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest header in " + file.string() + ": " + e.what());
  }
  if (m.format_version != DatasetManifest::kFormatVersion) {
    throw ValidationError("unsupported manifest format_version " +
                          std::to_string(m.format_version));
  }
  if (m.palette.empty() || m.palette.size() > 255) {
    throw ValidationError("palette must hold 1..255 classes");
  }
  for (std::size_t i = 0; i < m.palette.size(); ++i) {
    if (m.palette[i].id != static_cast<int>(i)) {
      throw ValidationError("palette ids must be 0..N-1 in order");
    }
  }

  std::vector<std::string> problems;
  std::set<std::string> ids;
  int line_no = 1;
  const int num_classes = static_cast<int>(m.palette.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const std::exception& e) {
      problems.push_back("line " + std::to_string(line_no) + ": malformed record: " + e.what());
      continue;
    }
    const std::string tag = "record '" + r.id + "'";
    if (!ids.insert(r.id).second) problems.push_back(tag + ": duplicate id");
    if (r.width < 1 || r.height < 1) problems.push_back(tag + ": non-positive size");
    if (r.image.empty()) {
      if (r.split != Split::generate_only) problems.push_back(tag + ": image required for split " + to_string(r.split));
    } else if (!fs::exists(m.root / r.image)) {
      problems.push_back(tag + ": missing image " + (m.root / r.image).string());
    }
    if (r.mask.empty() || !fs::exists(m.root / r.mask)) {
      problems.push_back(tag + ": missing mask " + (m.root / r.mask).string());
    }
    for (const auto& b : r.boxes) {
      try {
        validate_box(b, r.width, r.height);
      } catch (const Error& e) {
        problems.push_back(tag + ": " + e.what());
      }
      if (b.class_id < 0 || b.class_id >= num_classes) {
        problems.push_back(tag + ": box class " + std::to_string(b.class_id) + " not in palette");
      }
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty() && problems.empty()) {
    problems.push_back("manifest has no records");
  }
  if (!problems.empty()) {
    throw ValidationError("invalid dataset " + file.string() + ":" + join_lines(problems));
  }
  return m;
}

void write_manifest(const DatasetManifest& m) {
  fs::create_directories(m.root);
  std::ofstream out(m.manifest_path(), std::ios::binary);
  if (!out) throw IoError("cannot write " + m.manifest_path().string());
  out << json{{"format_version", m.format_version},
              {"palette", palette_to_json(m.palette)}}.dump()
      << '\n';
  for (const auto& r : m.records) out << record_to_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing " + m.manifest_path().string());
}

namespace {

SceneAnnotation annotation_from(const DatasetManifest& m, const ManifestRecord& r,
                                const Image& mask) {
  SceneAnnotation ann;
  ann.width = r.width;
  ann.height = r.height;
  ann.boxes = r.boxes;
  ann.class_names = m.class_names();
  ann.mask.resize(static_cast<std::size_t>(r.width) * r.height);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) ann.mask[y * r.width + x] = mask.at(y, x, 0);
  }
  return ann;
}

}  // namespace

std::vector<std::string> validate_dataset(const DatasetManifest& m) {
  std::vector<std::string> problems;
  const int num_classes = static_cast<int>(m.palette.size());
  for (const auto& r : m.records) {
    const fs::path mask_path = m.root / r.mask;
    try {
      const Image mask = read_png(mask_path);
      if (mask.channels != 1 || mask.width != r.width || mask.height != r.height) {
        problems.push_back(mask_path.string() + ": expected " + std::to_string(r.width) + "x" +
                           std::to_string(r.height) + " single-channel mask");
      } else {
        const auto bad = std::find_if(mask.pixels.begin(), mask.pixels.end(),
                                      [&](std::uint8_t v) { return v >= num_classes; });
        if (bad != mask.pixels.end()) {
          problems.push_back(mask_path.string() + ": class index " + std::to_string(*bad) +
                             " not in palette");
        }
      }
    } catch (const Error& e) {
      problems.push_back(mask_path.string() + ": " + e.what());
    }
    if (r.image.empty()) continue;
    const fs::path image_path = m.root / r.image;
    try {
      const Image img = read_png(image_path);
      if (img.channels != 3 || img.width != r.width || img.height != r.height) {
        problems.push_back(image_path.string() + ": expected " + std::to_string(r.width) + "x" +
                           std::to_string(r.height) + " RGB image");
      }
    } catch (const Error& e) {
      problems.push_back(image_path.string() + ": " + e.what());
    }
  }
  return problems;
}

SceneRecord load_record(const DatasetManifest& m, std::size_t index) {
  const ManifestRecord& r = m.records.at(index);
  const Image mask = read_png(m.root / r.mask);
  if (mask.channels != 1 || mask.width != r.width || mask.height != r.height) {
    throw ValidationError("mask " + (m.root / r.mask).string() + " does not match record size");
  }
  SceneRecord rec;
  rec.id = r.id;
  rec.split = r.split;
  rec.annotation = annotation_from(m, r, mask);
  rec.annotation.validate();
  if (!r.image.empty()) {
    const Image img = read_png(m.root / r.image);
    if (img.width != r.width || img.height != r.height) {
      throw ValidationError("image " + (m.root / r.image).string() + " does not match record size");
    }
    rec.image = normalize_image(img);
  }
  rec.prompt = r.prompt.empty() ? labels_to_prompt(rec.annotation) : r.prompt;
  return rec;
}

std::vector<SceneRecord> load_records(const DatasetManifest& m) {
  std::vector<SceneRecord> out(m.records.size());
  std::vector<std::string> errors(m.records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    try {
      out[i] = load_record(m, i);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ValidationError(e);
  }
  return out;
}

SceneRecord flip_record(const SceneRecord& rec) {
  SceneRecord out = rec;
  out.annotation = flip_horizontal(rec.annotation);
  if (!rec.image.empty()) {
    const int w = rec.image.w();
    for (int c = 0; c < rec.image.c(); ++c) {
      for (int y = 0; y < rec.image.h(); ++y) {
        for (int x = 0; x < w; ++x) out.image.at(0, c, y, x) = rec.image.at(0, c, y, w - 1 - x);
      }
    }
  }
  out.prompt = labels_to_prompt(out.annotation);
  return out;
}

Tensor rotate_hue(const Tensor& image, double degrees) {
  if (image.c() != 3) throw DimensionError("rotate_hue expects 3 channels");
  Tensor out(image.shape());
  const double shift = degrees / 360.0;
  for (int n = 0; n < image.n(); ++n) {
    for (int y = 0; y < image.h(); ++y) {
      for (int x = 0; x < image.w(); ++x) {
        double rgb[3];
        for (int c = 0; c < 3; ++c) {
          rgb[c] = std::clamp((static_cast<double>(image.at(n, c, y, x)) + 1.0) * 0.5, 0.0, 1.0);
        }
        const double mx = std::max({rgb[0], rgb[1], rgb[2]});
        const double mn = std::min({rgb[0], rgb[1], rgb[2]});
        const double v = mx;
        const double d = mx - mn;
        const double s = mx > 0.0 ? d / mx : 0.0;
        double h = 0.0;
        if (d > 0.0) {
          if (mx == rgb[0]) h = (rgb[1] - rgb[2]) / d;
          else if (mx == rgb[1]) h = 2.0 + (rgb[2] - rgb[0]) / d;
          else h = 4.0 + (rgb[0] - rgb[1]) / d;
          h /= 6.0;
        }
        h = h + shift;
        h -= std::floor(h);
        // HSV -> RGB
        const double hh = h * 6.0;
        const int sector = static_cast<int>(std::floor(hh)) % 6;
        const double f = hh - std::floor(hh);
        const double p = v * (1.0 - s);
        const double q = v * (1.0 - s * f);
        const double tt = v * (1.0 - s * (1.0 - f));
        double r = v, g = tt, b = p;
        switch (sector) {
          case 0: r = v; g = tt; b = p; break;
          case 1: r = q; g = v; b = p; break;
          case 2: r = p; g = v; b = tt; break;
          case 3: r = p; g = q; b = v; break;
          case 4: r = tt; g = p; b = v; break;
          default: r = v; g = p; b = q; break;
        }
        out.at(n, 0, y, x) = static_cast<real>(r * 2.0 - 1.0);
        out.at(n, 1, y, x) = static_cast<real>(g * 2.0 - 1.0);
        out.at(n, 2, y, x) = static_cast<real>(b * 2.0 - 1.0);
      }
    }
  }
  return out;
}

SceneRecord augment(const SceneRecord& rec, Rng& rng, const AugmentOptions& opts) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = unit(rng) < opts.flip_probability;
  const double hue = (unit(rng) * 2.0 - 1.0) * opts.max_hue_degrees;
  SceneRecord out = flip ? flip_record(rec) : rec;
  if (!out.image.empty() && hue != 0.0) out.image = rotate_hue(out.image, hue);
  return out;
}

std::vector<PaletteEntry> toy_palette() {
  return {
      {0, "ground", {134, 112, 86}, false},
      {1, "road", {72, 72, 78}, false},
      {2, "truck", {224, 184, 40}, true},
      {3, "excavator", {200, 64, 36}, true},
      {4, "loader", {48, 104, 200}, true},
  };
}

namespace {

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

struct ToyScene {
  Image image;
  Image mask;
  std::vector<BoundingBox> boxes;
};

ToyScene render_toy_scene(int size, Rng& rng, const std::vector<PaletteEntry>& palette) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ToyScene s{Image(size, size, 3), Image(size, size, 1), {}};

  // Background: ground with a low-frequency lighting gradient, crossed by a
  // slanted road band.
  const double road_center = size * (0.25 + 0.5 * unit(rng));
  const double road_half = size * (0.10 + 0.08 * unit(rng));
  const double slope = (unit(rng) * 2.0 - 1.0) * 0.3;
  const double light_dx = (unit(rng) * 2.0 - 1.0) * 0.15;
  const double light_dy = (unit(rng) * 2.0 - 1.0) * 0.15;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double yc = y + 0.5, xc = x + 0.5;
      const bool road = std::abs(yc - (road_center + slope * (xc - 0.5 * size))) < road_half;
      const int cls = road ? 1 : 0;
      const double light = 1.0 + light_dx * (xc / size - 0.5) * 2.0 + light_dy * (yc / size - 0.5) * 2.0;
      const double grain = gauss(rng) * (road ? 5.0 : 11.0);
      s.mask.at(y, x, 0) = static_cast<std::uint8_t>(cls);
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = clamp_u8(palette[cls].color[c] * light + grain);
    }
  }

  // Vehicles: non-overlapping rectangles with a one-pixel gap.
  std::vector<int> vehicle_ids;
  for (const auto& p : palette) {
    if (p.vehicle) vehicle_ids.push_back(p.id);
  }
  const int count = static_cast<int>(unit(rng) * 5.0);  // 0..4
  for (int k = 0; k < count; ++k) {
    const int cls = vehicle_ids[static_cast<std::size_t>(unit(rng) * vehicle_ids.size()) % vehicle_ids.size()];
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int bw = std::max(3, static_cast<int>(std::lround(size * (0.15 + 0.15 * unit(rng)))));
      const int bh = std::max(3, static_cast<int>(std::lround(size * (0.12 + 0.10 * unit(rng)))));
      const int x1 = static_cast<int>(unit(rng) * (size - bw + 1));
      const int y1 = static_cast<int>(unit(rng) * (size - bh + 1));
      const BoundingBox box{x1, y1, x1 + bw, y1 + bh, cls};
      const bool clash = std::any_of(s.boxes.begin(), s.boxes.end(), [&](const BoundingBox& o) {
        return box.x1 < o.x2 + 1 && o.x1 < box.x2 + 1 && box.y1 < o.y2 + 1 && o.y1 < box.y2 + 1;
      });
      if (clash) continue;
      s.boxes.push_back(box);
      const auto& base = palette[cls].color;
      const bool cab_left = unit(rng) < 0.5;
      const int cab_w = std::max(1, bw / 3);
      const int wheel_h = bh >= 6 ? 2 : 1;
      for (int y = box.y1; y < box.y2; ++y) {
        for (int x = box.x1; x < box.x2; ++x) {
          const bool wheel = y >= box.y2 - wheel_h && ((x - box.x1) % 4) < 2;
          const bool cab = cab_left ? x < box.x1 + cab_w : x >= box.x2 - cab_w;
          const double shade = wheel ? 0.35 : (cab ? 1.15 : 1.0);
          const double grain = gauss(rng) * 4.0;
          s.mask.at(y, x, 0) = static_cast<std::uint8_t>(cls);
          for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = clamp_u8(base[c] * shade + grain);
        }
      }
      break;
    }
  }
  return s;
}

}  // namespace

DatasetManifest generate_toy_scenes(int n, int size, std::uint64_t seed,
                                    const fs::path& out_dir, Split split) {
  if (n < 1) throw ConfigError("toy dataset needs n >= 1");
  if (size != 32 && size != 64 && size != 128) {
    throw ConfigError("toy scene size must be 32, 64 or 128 (got " + std::to_string(size) + ")");
  }
  DatasetManifest m;
  m.root = out_dir;
  m.palette = toy_palette();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  const auto names = m.class_names();
  m.records.resize(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      Rng rng = make_rng({seed, static_cast<std::uint64_t>(i)});
      ToyScene scene = render_toy_scene(size, rng, m.palette);
      char id[32];
      std::snprintf(id, sizeof id, "toy_%06d", i);
      ManifestRecord r;
      r.id = id;
      r.image = "images/" + r.id + ".png";
      r.mask = "masks/" + r.id + ".png";
      r.width = size;
      r.height = size;
      r.boxes = scene.boxes;
      r.split = split;
      SceneAnnotation ann;
      ann.width = size;
      ann.height = size;
      ann.boxes = scene.boxes;
      ann.mask = scene.mask.pixels;
      ann.class_names = names;
      ann.validate();
      r.prompt = labels_to_prompt(ann);
      write_png(out_dir / r.image, scene.image);
      write_png(out_dir / r.mask, scene.mask);
      m.records[i] = std::move(r);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw IoError(e);
  }
  write_manifest(m);
  return m;
}

}  // namespace scenegen
