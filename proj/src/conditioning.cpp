#include "scenegen/conditioning.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>

#include "scenegen/error.hpp"

namespace scenegen {
namespace {

std::string number_word(int n) {
  static const char* words[] = {"no",    "one",  "two",   "three", "four",
                                "five",  "six",  "seven", "eight", "nine",
                                "ten",   "eleven", "twelve"};
  if (n >= 0 && n <= 12) return words[n];
  return std::to_string(n);
}

std::string plural(const std::string& noun) {
  if (noun == "person") return "people";
  auto ends_with = [&](std::string_view s) {
    return noun.size() >= s.size() &&
           noun.compare(noun.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with("s") || ends_with("x") || ends_with("ch") || ends_with("sh")) {
    return noun + "es";
  }
  return noun + "s";
}

const char* third_of(const BoundingBox& b, int width) {
  const long twice_center = static_cast<long>(b.x1) + b.x2;
  if (3 * twice_center < 2L * width) return "left";
  if (3 * twice_center < 4L * width) return "center";
  return "right";
}

// Source index for output index `j` under nearest-neighbor resampling with
// half-pixel centers; exact ties go to the candidate nearer the image center.
int nearest_source(int j, int dst, int src) {
  const std::int64_t num = (2LL * j + 1) * src - dst;
  const std::int64_t den = 2LL * dst;
  if (num <= 0) return 0;
  std::int64_t f = num / den;
  const std::int64_t rem = num % den;
  if (2 * rem > den) {
    ++f;
  } else if (2 * rem == den && 2 * f + 1 < src - 1) {
    ++f;
  }
  return static_cast<int>(std::min<std::int64_t>(f, src - 1));
}

}  // namespace

void SceneAnnotation::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("annotation has empty size");
  if (mask.size() != static_cast<std::size_t>(width) * height) {
    throw ValidationError("mask size does not match " + std::to_string(width) +
                          "x" + std::to_string(height));
  }
  if (class_names.empty()) throw ValidationError("annotation has no class names");
  for (auto v : mask) {
    if (v >= class_names.size()) {
      throw ValidationError("mask class index " + std::to_string(v) +
                            " outside palette of " +
                            std::to_string(class_names.size()));
    }
  }
  for (const auto& b : boxes) {
    validate_box(b, width, height);
    if (b.class_id < 0 || b.class_id >= num_classes()) {
      throw ValidationError("unknown box class_id " + std::to_string(b.class_id));
    }
  }
}

SceneAnnotation flip_horizontal(const SceneAnnotation& ann) {
  SceneAnnotation out = ann;
  for (int y = 0; y < ann.height; ++y) {
    for (int x = 0; x < ann.width; ++x) {
      out.mask[y * ann.width + x] = ann.mask[y * ann.width + (ann.width - 1 - x)];
    }
  }
  for (auto& b : out.boxes) {
    const int x1 = ann.width - b.x2;
    const int x2 = ann.width - b.x1;
    b.x1 = x1;
    b.x2 = x2;
  }
  return out;
}

std::string labels_to_prompt(const SceneAnnotation& ann,
                             std::string_view template_id) {
  if (template_id != kDefaultPromptTemplate) {
    throw ValidationError("unknown prompt template '" + std::string(template_id) + "'");
  }
  std::map<int, std::vector<BoundingBox>> by_class;
  for (const auto& b : ann.boxes) {
    if (b.class_id < 0 || b.class_id >= ann.num_classes()) {
      throw ValidationError("unknown box class_id " + std::to_string(b.class_id));
    }
    by_class[b.class_id].push_back(b);
  }
  std::ostringstream os;
  os << "a surface mining scene with ";
  if (by_class.empty()) {
    os << "no vehicles";
    return os.str();
  }
  std::vector<std::string> groups;
  for (auto& [cls, list] : by_class) {
    std::stable_sort(list.begin(), list.end(),
                     [](const BoundingBox& a, const BoundingBox& b) {
                       if (a.x1 + a.x2 != b.x1 + b.x2) return a.x1 + a.x2 < b.x1 + b.x2;
                       return a.y1 + a.y2 < b.y1 + b.y2;
                     });
    const std::string& name = ann.class_names[cls];
    std::string g = number_word(static_cast<int>(list.size())) + " " +
                    (list.size() == 1 ? name : plural(name)) + " (";
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i) g += ", ";
      g += third_of(list[i], ann.width);
    }
    g += ")";
    groups.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (i > 0) os << (i + 1 == groups.size() ? " and " : ", ");
    os << groups[i];
  }
  return os.str();
}

Tensor encode_text_layered(TextEncoder& encoder, std::string_view prompt) {
  return encoder.encode(prompt);
}

Tensor rasterize_conditions(const SceneAnnotation& ann, int height, int width) {
  if (height < 1 || width < 1) {
    throw ValidationError("rasterize_conditions: degenerate target " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  ann.validate();
  const int classes = ann.num_classes();
  Tensor out(1, classes + 1, height, width);
  std::vector<int> src_x(width), src_y(height);
  for (int x = 0; x < width; ++x) src_x[x] = nearest_source(x, width, ann.width);
  for (int y = 0; y < height; ++y) src_y[y] = nearest_source(y, height, ann.height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      out.at(0, ann.class_at(src_y[y], src_x[x]), y, x) = real(1);
    }
  }
  for (const auto& b : ann.boxes) {
    for (int y = 0; y < height; ++y) {
      const std::int64_t cy = (2LL * y + 1) * ann.height;
      if (!(2LL * b.y1 * height < cy && cy < 2LL * b.y2 * height)) continue;
      for (int x = 0; x < width; ++x) {
        const std::int64_t cx = (2LL * x + 1) * ann.width;
        if (2LL * b.x1 * width < cx && cx < 2LL * b.x2 * width) {
          out.at(0, classes, y, x) = real(1);
        }
      }
    }
  }
  return out;
}

ConditionBundle assemble_condition(const SceneAnnotation& ann,
                                   TextEncoder& encoder,
                                   std::string_view template_id, int height,
                                   int width) {
  ConditionBundle b;
  b.spatial = rasterize_conditions(ann, height, width);
  b.prompt = labels_to_prompt(ann, template_id);
  b.text_embedding = encode_text_layered(encoder, b.prompt);
  b.height = ann.height;
  b.width = ann.width;
  return b;
}

ConditionBatch make_condition_batch(std::span<const ConditionBundle> bundles,
                                    int model_image_size) {
  ConditionBatch batch;
  std::vector<Tensor> spatial, text;
  for (const auto& b : bundles) {
    spatial.push_back(b.spatial);
    text.push_back(b.text_embedding);
  }
  batch.spatial = stack_batch(spatial);
  batch.text = stack_batch(text);
  batch.dims = Tensor(static_cast<int>(bundles.size()), 2);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    batch.dims[2 * i] = static_cast<real>(double(bundles[i].height) / model_image_size);
    batch.dims[2 * i + 1] = static_cast<real>(double(bundles[i].width) / model_image_size);
  }
  return batch;
}

}  // namespace scenegen
