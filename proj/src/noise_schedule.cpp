#include "scenegen/noise_schedule.hpp"

#include <cmath>

#include "scenegen/error.hpp"

namespace scenegen {

std::string to_string(SigmaKind kind) {
  return kind == SigmaKind::beta ? "beta" : "posterior";
}

SigmaKind parse_sigma_kind(const std::string& s) {
  if (s == "beta") return SigmaKind::beta;
  if (s == "posterior") return SigmaKind::posterior;
  throw ConfigError("unknown sigma kind '" + s + "' (expected beta|posterior)");
}

double NoiseSchedule::posterior_sigma(int t) const {
  if (t <= 0) return 0.0;
  return std::sqrt(beta_.at(t) * (1.0 - alpha_bar_.at(t - 1)) /
                   (1.0 - alpha_bar_.at(t)));
}

NoiseSchedule schedule_from_betas(std::vector<double> betas, SigmaKind sigma) {
  if (betas.empty()) throw ConfigError("noise schedule needs at least one step");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("beta values must lie in (0, 1)");
    }
  }
  NoiseSchedule s;
  s.sigma_kind_ = sigma;
  s.beta_ = std::move(betas);
  const std::size_t n = s.beta_.size();
  s.alpha_.resize(n);
  s.alpha_bar_.resize(n);
  s.sigma_.resize(n);
  double prod = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    s.alpha_[t] = 1.0 - s.beta_[t];
    prod *= s.alpha_[t];
    s.alpha_bar_[t] = prod;
  }
  for (std::size_t t = 0; t < n; ++t) {
    s.sigma_[t] = sigma == SigmaKind::beta
                      ? std::sqrt(s.beta_[t])
                      : s.posterior_sigma(static_cast<int>(t));
  }
  return s;
}

NoiseSchedule build_linear_schedule(int num_steps, double beta_start,
                                    double beta_end, SigmaKind sigma) {
  if (num_steps < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(num_steps);
  for (int t = 0; t < num_steps; ++t) {
    betas[t] = beta_start + (beta_end - beta_start) * t / (num_steps - 1);
  }
  return schedule_from_betas(std::move(betas), sigma);
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  std::vector<int> ts(x0.n(), t);
  return forward_diffuse(x0, ts, eps, sched);
}

Tensor forward_diffuse_coeff(const Tensor& x0, const Tensor& eps,
                             double alpha_bar) {
  require_same_shape(x0, eps, "forward_diffuse");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) {
    throw RangeError("alpha_bar must lie in [0, 1]");
  }
  const real a = static_cast<real>(std::sqrt(alpha_bar));
  const real b = static_cast<real>(std::sqrt(1.0 - alpha_bar));
  Tensor out(x0.shape());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = a * x0[j] + b * eps[j];
  return out;
}

Tensor forward_diffuse(const Tensor& x0, std::span<const int> t,
                       const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_diffuse");
  if (static_cast<int>(t.size()) != x0.n()) {
    throw DimensionError("forward_diffuse: one timestep per sample required");
  }
  Tensor out(x0.shape());
  const std::size_t per = x0.shape().sample();
  for (int i = 0; i < x0.n(); ++i) {
    if (t[i] < 0 || t[i] >= sched.num_steps()) {
      throw RangeError("forward_diffuse: timestep " + std::to_string(t[i]) +
                       " outside [0, " + std::to_string(sched.num_steps()) +
                       ")");
    }
    const real a = static_cast<real>(std::sqrt(sched.alpha_bar(t[i])));
    const real b = static_cast<real>(std::sqrt(1.0 - sched.alpha_bar(t[i])));
    const real* xs = x0.sample(i);
    const real* es = eps.sample(i);
    real* o = out.sample(i);
    for (std::size_t j = 0; j < per; ++j) o[j] = a * xs[j] + b * es[j];
  }
  return out;
}

}  // namespace scenegen
