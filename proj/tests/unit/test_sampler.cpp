#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "scenegen/error.hpp"
#include "scenegen/sampler.hpp"

using namespace scenegen;

namespace {

// Noise prediction that knows the clean image: the exact epsilon that
// explains x_t under the forward process.
EpsModel oracle_for(const Tensor& x0, const NoiseSchedule& sched) {
  return [&x0, &sched](const Tensor& x, std::span<const int> t) {
    Tensor eps(x.shape());
    const std::size_t per = x.shape().sample();
    for (int i = 0; i < x.n(); ++i) {
      const double a = std::sqrt(sched.alpha_bar(t[i]));
      const double s = std::sqrt(1.0 - sched.alpha_bar(t[i]));
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t k = i * per + j;
        eps[k] = static_cast<real>((x[k] - a * x0[k]) / s);
      }
    }
    return eps;
  };
}

// Smooth deterministic stand-in for a trained network.
Tensor toy_eps(const Tensor& x, std::span<const int> t) {
  Tensor e(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) e[i] = static_cast<real>(0.5 * std::tanh(x[i]) + 1e-4 * t[0]);
  return e;
}

}  // namespace

TEST_CASE("ddpm update with a zero prediction") {
  const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  Rng rng = make_rng({31});
  const Tensor x = randn(Shape{1, 3, 4, 4}, rng);
  const Tensor zero(x.shape());
  for (int t : {1, 2, 500, 999}) {
    const Tensor y = ddpm_update(x, zero, t, s, zero);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(double(y[i]) == doctest::Approx(double(x[i]) / std::sqrt(s.alpha(t))).epsilon(1e-6));
    }
  }
  // beta = 1e-300 makes alpha exactly 1 in double precision.
  const NoiseSchedule id = schedule_from_betas({1e-300, 1e-300, 1e-300});
  CHECK(max_abs_diff(ddpm_update(x, zero, 2, id, zero), x) == 0.0);
}

TEST_CASE("ddpm noise is dropped on the last step") {
  const NoiseSchedule s = build_linear_schedule(10, 1e-2, 0.2);
  Rng rng = make_rng({32});
  const Tensor x = randn(Shape{1, 1, 4, 4}, rng);
  const Tensor noise = randn(x.shape(), rng);
  const Tensor zero(x.shape());
  CHECK(max_abs_diff(ddpm_update(x, zero, 1, s, noise), ddpm_update(x, zero, 1, s, zero)) == 0.0);
  CHECK(max_abs_diff(ddpm_update(x, zero, 2, s, noise), ddpm_update(x, zero, 2, s, zero)) > 0.0);
  CHECK_THROWS_AS(ddpm_update(x, zero, 0, s, zero), RangeError);
  CHECK_THROWS_AS(ddpm_step(toy_eps, x, 0, s, zero), RangeError);
  CHECK_THROWS_AS(ddpm_update(x, zero, 1, s, Tensor(1, 1, 2, 2)), DimensionError);
}

TEST_CASE("one ddim step with the oracle lands on the forward marginal") {
  const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  Rng rng = make_rng({33});
  const Tensor x0 = randn(Shape{1, 3, 8, 8}, rng);
  const Tensor eps = randn(x0.shape(), rng);
  for (auto [t, tp] : {std::pair{999, 979}, std::pair{500, 0}, std::pair{20, 19}}) {
    const Tensor xt = forward_diffuse(x0, t, eps, s);
    const Tensor y = ddim_update(xt, eps, t, tp, s, 0.0, Tensor(x0.shape()));
    const Tensor expect = forward_diffuse(x0, tp, eps, s);
    CHECK(max_abs_diff(y, expect) <= 1e-4);
  }
  CHECK_THROWS_AS(ddim_update(x0, eps, 10, 10, s, 0.0, eps), RangeError);
  CHECK_THROWS_AS(ddim_update(x0, eps, 10, 11, s, 0.0, eps), RangeError);
}

TEST_CASE("ddim sigma at eta 1 equals the ddpm posterior sigma") {
  const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  for (int t = 1; t < 1000; t += 41) {
    CHECK(std::abs(ddim_sigma(s, t, t - 1, 1.0) - s.posterior_sigma(t)) <= 1e-10);
  }
  CHECK(ddim_sigma(s, 500, 400, 0.0) == 0.0);
}

TEST_CASE("literal ddim variant drops the direction term") {
  const NoiseSchedule s = build_linear_schedule(100, 1e-3, 0.02);
  Rng rng = make_rng({34});
  const Tensor x = randn(Shape{1, 1, 4, 4}, rng);
  const Tensor eps = randn(x.shape(), rng);
  const Tensor noise = randn(x.shape(), rng);
  const Tensor lit = ddim_update(x, eps, 50, 40, s, 0.5, noise, DdimVariant::literal);
  const Tensor x0_hat = predict_x0(x, eps, 50, s);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double expect = std::sqrt(s.alpha_bar(40)) * x0_hat[i] + std::sqrt(1 - s.alpha(40)) * 0.5 * noise[i];
    CHECK(double(lit[i]) == doctest::Approx(expect).epsilon(1e-5));
  }
  CHECK(parse_ddim_variant("literal") == DdimVariant::literal);
  CHECK_THROWS_AS(parse_ddim_variant("printed"), ConfigError);
}

TEST_CASE("inference timesteps") {
  for (auto [T, n] : {std::pair{1000, 50}, std::pair{1000, 1000}, std::pair{1000, 7}, std::pair{10, 1}}) {
    const auto ts = inference_timesteps(T, n);
    REQUIRE(static_cast<int>(ts.size()) == n);
    CHECK(ts.back() == 0);
    CHECK(ts.front() < T);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  }
  CHECK_THROWS_AS(inference_timesteps(1000, 0), ConfigError);
  CHECK_THROWS_AS(inference_timesteps(1000, 1001), ConfigError);
}

TEST_CASE("clean-image clipping") {
  const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  Rng rng = make_rng({36});
  const Tensor x = randn(Shape{2, 3, 8, 8}, rng);
  const Tensor eps = randn(Shape{2, 3, 8, 8}, rng);
  for (int t : {0, 10, 400, 999}) {
    const Tensor raw = predict_x0(x, eps, t, s);
    const Tensor clipped_eps = clip_prediction(x, eps, t, s);
    const Tensor clipped = predict_x0(x, clipped_eps, t, s);
    long changed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (raw[i] >= -1 && raw[i] <= 1) {
        CHECK(clipped_eps[i] == eps[i]);
      } else {
        ++changed;
        CHECK(clipped[i] == doctest::Approx(raw[i] > 0 ? 1.0 : -1.0).epsilon(1e-3));
      }
    }
    CHECK(changed > 0);
  }
  CHECK_THROWS_AS(clip_prediction(x, Tensor(Shape{1, 3, 8, 8}), 5, s), DimensionError);

  // An exploding prediction stays bounded only with clipping.
  const auto blowup = [](const Tensor& xt, std::span<const int>) {
    Tensor e = xt;
    e *= real(0.9);
    return e;
  };
  SamplerConfig cfg;
  cfg.num_inference_steps = 10;
  const std::uint64_t key = 4;
  const Tensor bounded = sample(blowup, Shape{1, 3, 8, 8}, cfg, s, std::span(&key, 1));
  cfg.clip_denoised = false;
  const Tensor loose = sample(blowup, Shape{1, 3, 8, 8}, cfg, s, std::span(&key, 1));
  double max_b = 0, max_l = 0;
  for (std::size_t i = 0; i < bounded.size(); ++i) {
    max_b = std::max(max_b, std::abs(static_cast<double>(bounded[i])));
    max_l = std::max(max_l, std::abs(static_cast<double>(loose[i])));
  }
  CHECK(max_b <= 1.0 + 1e-3);
  CHECK(max_l > 2.0);
}

TEST_CASE("oracle round trip through the full ddpm chain") {
  const NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  Rng rng = make_rng({35});
  Tensor x0 = randn(Shape{1, 3, 16, 16}, rng);
  for (auto& v : x0.vec()) v = static_cast<real>(std::tanh(v));
  SamplerConfig cfg;
  cfg.kind = SamplerKind::ddpm;
  const std::uint64_t key = 1;
  const Tensor out = sample(oracle_for(x0, s), x0.shape(), cfg, s, std::span(&key, 1));
  CHECK(max_abs_diff(out, x0) <= 1e-3);
}

TEST_CASE("sampling determinism and key streams") {
  const NoiseSchedule s = build_linear_schedule(100, 1e-3, 0.02);
  SamplerConfig cfg;
  cfg.num_inference_steps = 10;
  const std::vector<std::uint64_t> keys{5, 6, 7};
  const Shape shape{3, 3, 4, 4};
  const Tensor a = sample(toy_eps, shape, cfg, s, keys);
  const Tensor b = sample(toy_eps, shape, cfg, s, keys);
  CHECK(a.vec() == b.vec());

  // A sample depends only on its own key, not on its batch neighbours.
  const std::uint64_t k6 = 6;
  const Tensor single = sample(toy_eps, Shape{1, 3, 4, 4}, cfg, s, std::span(&k6, 1));
  CHECK(max_abs_diff(slice_batch(a, 1, 1), single) == 0.0);

  SamplerConfig other = cfg;
  other.seed = 1;
  CHECK(max_abs_diff(sample(toy_eps, shape, other, s, keys), a) > 0.0);

  SamplerConfig eta = cfg;
  eta.ddim_eta = 1.0;
  CHECK(sample(toy_eps, shape, eta, s, keys).vec() == sample(toy_eps, shape, eta, s, keys).vec());
  CHECK_THROWS_AS(sample(toy_eps, shape, cfg, s, std::span(keys.data(), 2)), DimensionError);

  SamplerConfig bad = cfg;
  bad.num_inference_steps = 101;
  CHECK_THROWS_AS(bad.validate(100), ConfigError);
  bad = cfg;
  bad.ddim_eta = -0.1;
  CHECK_THROWS_AS(bad.validate(100), ConfigError);
  CHECK_THROWS_AS(parse_sampler_kind("euler"), ConfigError);
}

TEST_CASE("conditional generation with a denoiser") {
  const DenoiserConfig dc = test::tiny_denoiser_config();
  Rng rng = make_rng({36});
  Denoiser model(dc, rng);
  model.attach_control_branch();
  const ConditionBatch cond = test::random_conditions(dc, 2, rng);
  const NoiseSchedule s = build_linear_schedule(50, 1e-3, 0.05);
  SamplerConfig cfg;
  cfg.num_inference_steps = 5;
  const std::vector<std::uint64_t> keys{1, 2};
  const auto a = generate(model, cond, cfg, s, keys);
  const auto b = generate(model, cond, cfg, s, keys);
  REQUIRE(a.size() == 2);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
  CHECK(a[0].width == 16);
  SamplerConfig other = cfg;
  other.seed = 9;
  CHECK_FALSE(generate(model, cond, other, s, keys)[0] == a[0]);

  Denoiser empty;
  CHECK_THROWS_AS(generate(empty, cond, cfg, s, keys), StateError);
}
