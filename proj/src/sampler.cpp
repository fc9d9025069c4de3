#include "scenegen/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "scenegen/error.hpp"
#include "scenegen/rng.hpp"

namespace scenegen {

std::string to_string(SamplerKind kind) {
  return kind == SamplerKind::ddpm ? "ddpm" : "ddim";
}

SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "ddpm") return SamplerKind::ddpm;
  if (s == "ddim") return SamplerKind::ddim;
  throw ConfigError("unknown sampler '" + s + "' (expected ddpm|ddim)");
}

DdimVariant parse_ddim_variant(const std::string& s) {
  if (s == "standard") return DdimVariant::standard;
  if (s == "literal") return DdimVariant::literal;
  throw ConfigError("unknown ddim variant '" + s + "' (expected standard|literal)");
}

void SamplerConfig::validate(int train_steps) const {
  if (num_inference_steps < 1 || num_inference_steps > train_steps) {
    throw ConfigError("sampler steps must lie in [1, " +
                      std::to_string(train_steps) + "]");
  }
  if (!(ddim_eta >= 0.0)) throw ConfigError("ddim_eta must be >= 0");
}

Tensor ddpm_update(const Tensor& x_t, const Tensor& eps, int t,
                   const NoiseSchedule& sched, const Tensor& noise) {
  if (t < 1 || t >= sched.num_steps()) {
    throw RangeError("ddpm_step: timestep " + std::to_string(t) +
                     " outside [1, " + std::to_string(sched.num_steps()) + ")");
  }
  require_same_shape(x_t, eps, "ddpm_step");
  require_same_shape(x_t, noise, "ddpm_step noise");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double sigma = t == 1 ? 0.0 : sched.sigma(t);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<real>(inv_sqrt_alpha * (x_t[i] - eps_coef * eps[i]) +
                               sigma * noise[i]);
  }
  return out;
}

Tensor ddpm_step(const EpsModel& model, const Tensor& x_t, int t,
                 const NoiseSchedule& sched, const Tensor& noise) {
  if (t < 1) throw RangeError("ddpm_step: t must be >= 1");
  std::vector<int> ts(x_t.n(), t);
  return ddpm_update(x_t, model(x_t, ts), t, sched, noise);
}

double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, double ddim_eta) {
  const double ab_t = sched.alpha_bar(t);
  const double ab_p = sched.alpha_bar(t_prev);
  return ddim_eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) *
         std::sqrt(1.0 - ab_t / ab_p);
}

Tensor ddim_update(const Tensor& x_t, const Tensor& eps, int t, int t_prev,
                   const NoiseSchedule& sched, double ddim_eta,
                   const Tensor& noise, DdimVariant variant) {
  if (t_prev >= t) {
    throw RangeError("ddim_step: t_prev " + std::to_string(t_prev) +
                     " must be below t " + std::to_string(t));
  }
  if (t_prev < 0 || t >= sched.num_steps()) {
    throw RangeError("ddim_step: timestep out of range");
  }
  require_same_shape(x_t, eps, "ddim_step");
  require_same_shape(x_t, noise, "ddim_step noise");
  const double ab_t = sched.alpha_bar(t);
  const double ab_p = sched.alpha_bar(t_prev);
  const double sqrt_ab_t = std::sqrt(ab_t);
  const double sqrt_1m_ab_t = std::sqrt(1.0 - ab_t);
  const double sqrt_ab_p = std::sqrt(ab_p);
  double dir = 0.0, noise_coef = 0.0;
  if (variant == DdimVariant::standard) {
    const double sigma = ddim_sigma(sched, t, t_prev, ddim_eta);
    dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    noise_coef = sigma;
  } else {
    noise_coef = std::sqrt(1.0 - sched.alpha(t_prev)) * ddim_eta;
  }
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0_hat = (x_t[i] - sqrt_1m_ab_t * eps[i]) / sqrt_ab_t;
    double v = sqrt_ab_p * x0_hat + dir * eps[i];
    if (noise_coef != 0.0) v += noise_coef * noise[i];
    out[i] = static_cast<real>(v);
  }
  return out;
}

Tensor ddim_step(const EpsModel& model, const Tensor& x_t, int t, int t_prev,
                 const NoiseSchedule& sched, double ddim_eta,
                 const Tensor& noise, DdimVariant variant) {
  if (t_prev >= t) throw RangeError("ddim_step: t_prev must be below t");
  std::vector<int> ts(x_t.n(), t);
  return ddim_update(x_t, model(x_t, ts), t, t_prev, sched, ddim_eta, noise,
                     variant);
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps, int t,
                  const NoiseSchedule& sched) {
  require_same_shape(x_t, eps, "predict_x0");
  const double sqrt_ab = std::sqrt(sched.alpha_bar(t));
  const double sqrt_1m_ab = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<real>((x_t[i] - sqrt_1m_ab * eps[i]) / sqrt_ab);
  }
  return out;
}

Tensor clip_prediction(const Tensor& x_t, const Tensor& eps, int t,
                       const NoiseSchedule& sched) {
  require_same_shape(x_t, eps, "clip_prediction");
  const double sqrt_ab = std::sqrt(sched.alpha_bar(t));
  const double sqrt_1m_ab = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out = eps;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (x_t[i] - sqrt_1m_ab * eps[i]) / sqrt_ab;
    if (x0 > 1.0 || x0 < -1.0) {
      out[i] = static_cast<real>((x_t[i] - sqrt_ab * std::clamp(x0, -1.0, 1.0)) / sqrt_1m_ab);
    }
  }
  return out;
}

std::vector<int> inference_timesteps(int train_steps, int inference_steps) {
  if (inference_steps < 1 || inference_steps > train_steps) {
    throw ConfigError("inference steps must lie in [1, T]");
  }
  std::vector<int> ts(inference_steps);
  for (int i = 0; i < inference_steps; ++i) {
    ts[i] = static_cast<int>(static_cast<long long>(i) * train_steps / inference_steps);
  }
  std::reverse(ts.begin(), ts.end());
  return ts;
}

namespace {

// Fills `t` (n samples) with per-sample noise from each sample's stream.
void draw_noise(Tensor& t, std::vector<Rng>& streams) {
  std::normal_distribution<double> dist(0.0, 1.0);
  const std::size_t per = t.shape().sample();
  for (int i = 0; i < t.n(); ++i) {
    real* p = t.sample(i);
    for (std::size_t j = 0; j < per; ++j) p[j] = static_cast<real>(dist(streams[i]));
  }
}

// The state at timestep 0 still holds sqrt(1 - abar_0) of noise; the
// returned image is the model's clean estimate at that step.
Tensor final_estimate(const EpsModel& model, const Tensor& x, const NoiseSchedule& sched) {
  const std::vector<int> ts(x.n(), 0);
  return predict_x0(x, model(x, ts), 0, sched);
}

// Applies clip_prediction at each sample's timestep.
EpsModel clipped(const EpsModel& model, const NoiseSchedule& sched) {
  return [&model, &sched](const Tensor& x, std::span<const int> t) {
    Tensor eps = model(x, t);
    const std::size_t per = x.shape().sample();
    for (int i = 0; i < x.n(); ++i) {
      const Tensor xi = slice_batch(x, i, 1), ei = slice_batch(eps, i, 1);
      const Tensor ci = clip_prediction(xi, ei, t[i], sched);
      std::copy(ci.data(), ci.data() + per, eps.sample(i));
    }
    return eps;
  };
}

}  // namespace

Tensor sample(const EpsModel& raw_model, Shape shape, const SamplerConfig& cfg,
              const NoiseSchedule& sched, std::span<const std::uint64_t> keys) {
  cfg.validate(sched.num_steps());
  if (static_cast<int>(keys.size()) != shape.n) {
    throw DimensionError("sample: one key per sample required");
  }
  const EpsModel model = cfg.clip_denoised ? clipped(raw_model, sched) : raw_model;
  std::vector<Rng> streams;
  for (auto k : keys) streams.push_back(make_rng({cfg.seed, k}));
  Tensor x(shape);
  draw_noise(x, streams);
  Tensor noise(shape);
  if (cfg.kind == SamplerKind::ddpm) {
    for (int t = sched.num_steps() - 1; t >= 1; --t) {
      draw_noise(noise, streams);
      x = ddpm_step(model, x, t, sched, noise);
    }
    return final_estimate(model, x, sched);
  }
  const auto ts = inference_timesteps(sched.num_steps(), cfg.num_inference_steps);
  const bool stochastic = cfg.ddim_eta != 0.0;
  // The start index may be below T-1 when the stride does not divide T; the
  // initial noise is still treated as a sample at the first listed timestep.
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    if (stochastic) draw_noise(noise, streams);
    x = ddim_step(model, x, ts[i], ts[i + 1], sched, cfg.ddim_eta, noise, cfg.variant);
  }
  return final_estimate(model, x, sched);
}

std::vector<Image> generate(Denoiser& model, const ConditionBatch& cond,
                            const SamplerConfig& cfg, const NoiseSchedule& sched,
                            std::span<const std::uint64_t> keys) {
  if (nn::count_elements(model.parameters()) == 0) throw StateError("generate: model has no weights loaded");
  const auto& mc = model.config();
  const Shape shape{cond.text.n(), mc.in_channels, mc.image_size, mc.image_size};
  EpsModel eps = [&](const Tensor& x, std::span<const int> t) {
    return model.forward(x, t, cond);
  };
  Tensor x = sample(eps, shape, cfg, sched, keys);
  std::vector<Image> images;
  for (int i = 0; i < shape.n; ++i) images.push_back(denormalize_image(x, i));
  return images;
}

}  // namespace scenegen
