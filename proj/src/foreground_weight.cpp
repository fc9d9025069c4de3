#include "scenegen/foreground_weight.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scenegen/error.hpp"

namespace scenegen {

void WeightScheduleConfig::validate() const {
  if (!(w_min >= 0.0)) throw ConfigError("fg_weight.min must be >= 0");
  if (!(w_max >= w_min)) throw ConfigError("fg_weight.max must be >= fg_weight.min");
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("fg_weight.eta must lie in (0, 1)");
  if (total_steps < 1) throw ConfigError("weight schedule needs total_steps >= 1");
}

void validate_box(const BoundingBox& b, int width, int height) {
  if (!(0 <= b.x1 && b.x1 < b.x2 && b.x2 <= width && 0 <= b.y1 &&
        b.y1 < b.y2 && b.y2 <= height)) {
    throw ValidationError("box (" + std::to_string(b.x1) + "," +
                          std::to_string(b.y1) + "," + std::to_string(b.x2) +
                          "," + std::to_string(b.y2) + ") outside " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
}

double weight_at_step(double step, const WeightScheduleConfig& cfg) {
  cfg.validate();
  const double total = static_cast<double>(cfg.total_steps);
  if (!(step >= 0.0 && step <= total)) {
    throw RangeError("weight_at_step: step " + std::to_string(step) +
                     " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  const double frac = step / total;
  const double span = cfg.w_max - cfg.w_min;
  if (frac <= cfg.eta) {
    return cfg.w_min +
           (1.0 - std::cos(frac / cfg.eta * std::numbers::pi)) / 2.0 * span;
  }
  return cfg.w_max -
         (1.0 - std::cos((frac - cfg.eta) / (1.0 - cfg.eta) * std::numbers::pi)) /
             2.0 * span;
}

WeightMatrix build_weight_matrix(
    const std::vector<std::vector<BoundingBox>>& boxes, double step,
    const WeightScheduleConfig& cfg, int batch, int height, int width) {
  if (static_cast<int>(boxes.size()) != batch) {
    throw DimensionError("build_weight_matrix: one box list per sample required");
  }
  for (const auto& list : boxes) {
    for (const auto& b : list) validate_box(b, width, height);
  }
  WeightMatrix w{Tensor(batch, 1, height, width, real(1))};
  const real wt = static_cast<real>(weight_at_step(step, cfg));
  for (int n = 0; n < batch; ++n) {
    for (const auto& b : boxes[n]) {
      for (int y = b.y1; y < b.y2; ++y) {
        for (int x = b.x1; x < b.x2; ++x) w.values.at(n, 0, y, x) = wt;
      }
    }
  }
  return w;
}

WeightMatrix downsample_weight(const WeightMatrix& w, int height, int width) {
  const Tensor& src = w.values;
  if (height < 1 || width < 1) throw RangeError("downsample target must be >= 1");
  if (height > src.h() || width > src.w()) {
    throw RangeError("downsample_weight only reduces resolution");
  }
  WeightMatrix out{Tensor(src.n(), src.c(), height, width)};
  const double sy = static_cast<double>(src.h()) / height;
  const double sx = static_cast<double>(src.w()) / width;
  auto coord = [](int i, double scale, int limit, int& lo, int& hi, double& frac) {
    double c = (i + 0.5) * scale - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(limit - 1));
    lo = static_cast<int>(std::floor(c));
    hi = std::min(lo + 1, limit - 1);
    frac = c - lo;
  };
  for (int n = 0; n < src.n(); ++n) {
    for (int c = 0; c < src.c(); ++c) {
      for (int y = 0; y < height; ++y) {
        int y0, y1;
        double fy;
        coord(y, sy, src.h(), y0, y1, fy);
        for (int x = 0; x < width; ++x) {
          int x0, x1;
          double fx;
          coord(x, sx, src.w(), x0, x1, fx);
          const double top = (1 - fx) * src.at(n, c, y0, x0) + fx * src.at(n, c, y0, x1);
          const double bot = (1 - fx) * src.at(n, c, y1, x0) + fx * src.at(n, c, y1, x1);
          out.values.at(n, c, y, x) = static_cast<real>((1 - fy) * top + fy * bot);
        }
      }
    }
  }
  return out;
}

namespace {

void check_loss_inputs(const Tensor& eps_true, const Tensor& eps_pred,
                       const WeightMatrix& w) {
  require_same_shape(eps_true, eps_pred, "weighted_diffusion_loss");
  const Tensor& wv = w.values;
  if (wv.n() != eps_true.n() || wv.c() != 1 || wv.h() != eps_true.h() ||
      wv.w() != eps_true.w()) {
    throw DimensionError("weight matrix " + wv.shape().str() +
                         " does not broadcast over " + eps_true.shape().str());
  }
  for (real v : wv.vec()) {
    if (!(v >= 0)) throw ValidationError("loss weights must be non-negative");
  }
}

}  // namespace

double weighted_diffusion_loss(const Tensor& eps_true, const Tensor& eps_pred,
                               const WeightMatrix& w) {
  check_loss_inputs(eps_true, eps_pred, w);
  const std::size_t plane = eps_true.shape().plane();
  double sum = 0.0;
  for (int n = 0; n < eps_true.n(); ++n) {
    const real* wn = w.values.sample(n);
    for (int c = 0; c < eps_true.c(); ++c) {
      const real* a = eps_true.sample(n) + c * plane;
      const real* b = eps_pred.sample(n) + c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = static_cast<double>(a[p]) - b[p];
        sum += wn[p] * d * d;
      }
    }
  }
  return sum / static_cast<double>(eps_true.size());
}

LossWithGrad weighted_diffusion_loss_with_grad(const Tensor& eps_true,
                                               const Tensor& eps_pred,
                                               const WeightMatrix& w) {
  LossWithGrad out;
  out.loss = weighted_diffusion_loss(eps_true, eps_pred, w);
  out.grad = Tensor(eps_pred.shape());
  const std::size_t plane = eps_true.shape().plane();
  const double scale = 2.0 / static_cast<double>(eps_true.size());
  for (int n = 0; n < eps_true.n(); ++n) {
    const real* wn = w.values.sample(n);
    for (int c = 0; c < eps_true.c(); ++c) {
      const real* a = eps_true.sample(n) + c * plane;
      const real* b = eps_pred.sample(n) + c * plane;
      real* g = out.grad.sample(n) + c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        g[p] = static_cast<real>(scale * wn[p] * (static_cast<double>(b[p]) - a[p]));
      }
    }
  }
  return out;
}

RegionError region_squared_error(const Tensor& eps_true, const Tensor& eps_pred,
                                 const Tensor& mask) {
  require_same_shape(eps_true, eps_pred, "region_squared_error");
  if (mask.n() != eps_true.n() || mask.c() != 1 || mask.h() != eps_true.h() ||
      mask.w() != eps_true.w()) {
    throw DimensionError("region mask " + mask.shape().str());
  }
  RegionError r;
  const std::size_t plane = eps_true.shape().plane();
  for (int n = 0; n < eps_true.n(); ++n) {
    const real* m = mask.sample(n);
    for (int c = 0; c < eps_true.c(); ++c) {
      const real* a = eps_true.sample(n) + c * plane;
      const real* b = eps_pred.sample(n) + c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (m[p] == real(0)) continue;
        const double d = static_cast<double>(a[p]) - b[p];
        r.sum += d * d;
        r.count += 1.0;
      }
    }
  }
  return r;
}

}  // namespace scenegen
