#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scenegen/denoiser.hpp"
#include "scenegen/foreground_weight.hpp"
#include "scenegen/text_encoder.hpp"

namespace scenegen {

// Labels of one scene: per-pixel class map, boxes and the class-name table.
struct SceneAnnotation {
  int width = 0;
  int height = 0;
  std::vector<BoundingBox> boxes;
  std::vector<std::uint8_t> mask;  // row-major height x width class indices
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::uint8_t class_at(int y, int x) const { return mask[y * width + x]; }
  // Throws ValidationError naming the first violated invariant.
  void validate() const;
};

SceneAnnotation flip_horizontal(const SceneAnnotation& ann);

// The conditioning signal of a single scene.
struct ConditionBundle {
  Tensor spatial;         // (1, classes + 1, h, w): one-hot mask + box raster
  std::string prompt;
  Tensor text_embedding;  // (1, layers * embed_dim)
  int height = 0;
  int width = 0;
};

inline constexpr std::string_view kDefaultPromptTemplate = "v1";

// Deterministic scene description. Template "v1":
//   "a surface mining scene with two trucks (left, center) and one excavator
//    (right)"
// Classes appear in id order; positions are thirds of the image width by box
// center, listed left to right.
std::string labels_to_prompt(const SceneAnnotation& ann,
                             std::string_view template_id = kDefaultPromptTemplate);

// Layered embedding of a prompt, shape (1, layers * embed_dim).
Tensor encode_text_layered(TextEncoder& encoder, std::string_view prompt);

// (1, classes + 1, h, w). Mask channels come from nearest-neighbor
// resampling; the last channel is 1 where the pixel center lies strictly
// inside a scaled box. Both rules are mirror-symmetric, so rasterization
// commutes with a horizontal flip whenever the width ratio maps no output
// column onto the image center.
Tensor rasterize_conditions(const SceneAnnotation& ann, int height, int width);

ConditionBundle assemble_condition(const SceneAnnotation& ann,
                                   TextEncoder& encoder,
                                   std::string_view template_id, int height,
                                   int width);

// Stacks bundles into the network input. `dims` are normalized by
// `model_image_size`.
ConditionBatch make_condition_batch(std::span<const ConditionBundle> bundles,
                                    int model_image_size);

}  // namespace scenegen
