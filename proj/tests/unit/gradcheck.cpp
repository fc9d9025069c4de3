// Finite-difference gradient checks in double precision.

#include <doctest.h>

#include <cmath>
#include <functional>

#include "helpers.hpp"
#include "scenegen/denoiser.hpp"
#include "scenegen/foreground_weight.hpp"
#include "scenegen/metrics.hpp"
#include "scenegen/text_encoder.hpp"

using namespace scenegen;

static_assert(sizeof(real) == sizeof(double), "gradient checks need the double-precision build");

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct GradReport {
  double worst = 0.0;
  int checked = 0;
};

// Compares analytic gradients of loss() against central differences for a
// spread of entries of every parameter.
GradReport check_params(const nn::ParamRefs& params, const std::function<double()>& loss,
                        int per_param = 3) {
  GradReport r;
  const double h = 1e-6;
  for (auto* p : params) {
    if (!p->trainable || p->value.empty()) continue;
    const std::size_t n = p->value.size();
    for (int k = 0; k < per_param; ++k) {
      const std::size_t i = (k * 7919 + 13) % n;
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss();
      p->value[i] = keep - h;
      const double lm = loss();
      p->value[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double an = p->grad[i];
      const double scale = std::max(std::abs(fd), std::abs(an));
      if (scale < 1e-7) continue;
      const double rel = std::abs(fd - an) / scale;
      r.worst = std::max(r.worst, rel);
      if (rel > 1e-3) MESSAGE(p->name << "[" << i << "] analytic " << an << " numeric " << fd);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace

TEST_CASE("denoiser base path gradients match finite differences") {
  const DenoiserConfig cfg = test::tiny_denoiser_config(16);
  Rng rng = make_rng({51});
  Denoiser model(cfg, rng);
  const Tensor x = randn(Shape{2, 3, 16, 16}, rng);
  const std::vector<int> t{5, 640};
  const ConditionBatch c = test::random_conditions(cfg, 2, rng);
  const Tensor probe = randn(x.shape(), rng);

  const Tensor y = model.base_forward(x, t, c.text, c.dims);
  nn::zero_grad(model.parameters());
  const Tensor g_text = model.backward(probe);
  auto loss = [&] { return dot(model.base_forward(x, t, c.text, c.dims), probe); };
  const GradReport r = check_params(model.parameters(), loss);
  CHECK(r.checked > 100);
  CHECK(r.worst <= 1e-3);

  // Gradient w.r.t. the text embedding input.
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < c.text.size(); i += 5) {
    Tensor tp = c.text, tm = c.text;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (dot(model.base_forward(x, t, tp, c.dims), probe) -
                       dot(model.base_forward(x, t, tm, c.dims), probe)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g_text[i]) / std::max(1e-7, std::max(std::abs(fd), std::abs(g_text[i]))));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("denoiser control path gradients match finite differences") {
  const DenoiserConfig cfg = test::tiny_denoiser_config(16);
  Rng rng = make_rng({52});
  Denoiser model(cfg, rng);
  model.attach_control_branch();
  // Move the projections off zero so every branch parameter gets a gradient.
  nn::ParamRefs zeros;
  model.branch().collect_zero_projections(zeros);
  for (auto* p : zeros) fill_normal(p->value, rng, 0.2);
  const Tensor x = randn(Shape{2, 3, 16, 16}, rng);
  const std::vector<int> t{17, 300};
  const ConditionBatch c = test::random_conditions(cfg, 2, rng);
  const Tensor probe = randn(x.shape(), rng);

  model.control_forward(x, t, c);
  nn::zero_grad(model.trainable_parameters());
  model.backward(probe);
  auto loss = [&] { return dot(model.control_forward(x, t, c), probe); };
  const GradReport r = check_params(model.trainable_parameters(), loss);
  CHECK(r.checked > 100);
  CHECK(r.worst <= 1e-3);
}

TEST_CASE("text encoder gradients match finite differences") {
  TextEncoderConfig tc;
  tc.embed_dim = 8;
  tc.layers = 3;
  Rng rng = make_rng({53});
  TextEncoder enc(tc, rng);
  const std::vector<std::vector<int>> toks{enc.tokenize("a surface mining scene with two trucks (left, right)"),
                                           enc.tokenize("a surface mining scene with no vehicles")};
  const Tensor out = enc.forward(toks);
  const Tensor probe = randn(out.shape(), rng);
  nn::ParamRefs ps;
  enc.collect(ps);
  nn::zero_grad(ps);
  enc.backward(probe);
  auto loss = [&] { return dot(enc.forward(toks), probe); };
  const GradReport r = check_params(ps, loss, 6);
  CHECK(r.checked > 10);
  CHECK(r.worst <= 1e-3);
}

TEST_CASE("feature extractor gradients match finite differences") {
  ExtractorConfig ec;
  ec.image_size = 16;
  ec.width = 8;
  ec.feature_dim = 12;
  ec.num_targets = 4;
  FeatureExtractor fx(ec, 54);
  Rng rng = make_rng({54});
  const Tensor x = randn(Shape{2, 3, 16, 16}, rng);
  const Tensor out = fx.forward(x);
  const Tensor probe = randn(out.shape(), rng);
  const auto ps = fx.parameters();
  nn::zero_grad(ps);
  fx.backward(probe);
  auto loss = [&] { return dot(fx.forward(x), probe); };
  const GradReport r = check_params(ps, loss);
  CHECK(r.checked > 20);
  CHECK(r.worst <= 1e-3);
}

TEST_CASE("weighted loss gradient is exact in double precision") {
  Rng rng = make_rng({55});
  const Tensor a = randn(Shape{2, 3, 4, 4}, rng);
  const Tensor b = randn(Shape{2, 3, 4, 4}, rng);
  WeightMatrix w{Tensor(2, 1, 4, 4, 1.0)};
  for (std::size_t i = 0; i < w.values.size(); i += 3) w.values[i] = 2.5;
  const LossWithGrad lg = weighted_diffusion_loss_with_grad(a, b, w);
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor bp = b, bm = b;
    bp[i] += 1e-4;
    bm[i] -= 1e-4;
    const double fd = (weighted_diffusion_loss(a, bp, w) - weighted_diffusion_loss(a, bm, w)) / 2e-4;
    CHECK(std::abs(fd - lg.grad[i]) <= 1e-9);
  }
}
