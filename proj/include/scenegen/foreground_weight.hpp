#pragma once

#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen {

// Two-phase cosine schedule for the foreground loss weight: rises from w_min
// to w_max over the first `eta` fraction of training, then decays back.
struct WeightScheduleConfig {
  double w_min = 1.0;
  double w_max = 3.0;
  double eta = 0.3;
  long total_steps = 1;

  void validate() const;
};

// Half-open pixel box [x1, x2) x [y1, y2).
struct BoundingBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;
  int class_id = 0;

  bool operator==(const BoundingBox&) const = default;
  double center_x() const { return 0.5 * (x1 + x2); }
};

// Throws ValidationError unless 0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height.
void validate_box(const BoundingBox& box, int width, int height);

// Per-pixel loss weights, shape (batch, 1, height, width).
struct WeightMatrix {
  Tensor values;
};

// Foreground weight at training step t in [0, total_steps].
double weight_at_step(double step, const WeightScheduleConfig& cfg);

// Ones everywhere, weight_at_step(step) inside every box. Boxes are written in
// order, so with per-box weights the last box wins on overlaps.
WeightMatrix build_weight_matrix(
    const std::vector<std::vector<BoundingBox>>& boxes, double step,
    const WeightScheduleConfig& cfg, int batch, int height, int width);

// Bilinear resampling with half-pixel centers, clamped at the borders. Only
// reduction (or identity) is supported.
WeightMatrix downsample_weight(const WeightMatrix& w, int height, int width);

// mean over (n, c, h, w) of w[n, h, w] * (eps_true - eps_pred)^2
double weighted_diffusion_loss(const Tensor& eps_true, const Tensor& eps_pred,
                               const WeightMatrix& w);

struct LossWithGrad {
  double loss = 0.0;
  Tensor grad;  // d loss / d eps_pred
};
LossWithGrad weighted_diffusion_loss_with_grad(const Tensor& eps_true,
                                               const Tensor& eps_pred,
                                               const WeightMatrix& w);

// Sum of squared error inside `mask` (n, 1, h, w; nonzero = inside) and the
// number of contributing elements.
struct RegionError {
  double sum = 0.0;
  double count = 0.0;
  double mean() const { return count > 0 ? sum / count : 0.0; }
};
RegionError region_squared_error(const Tensor& eps_true, const Tensor& eps_pred,
                                 const Tensor& mask);

}  // namespace scenegen
