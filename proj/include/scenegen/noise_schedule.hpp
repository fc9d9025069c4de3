#pragma once

#include <span>
#include <string>
#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen {

enum class SigmaKind {
  beta,       // sigma_t = sqrt(beta_t)
  posterior,  // sigma_t = sqrt(beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t))
};

std::string to_string(SigmaKind kind);
SigmaKind parse_sigma_kind(const std::string& s);

// Per-timestep diffusion coefficients, indexed 0..T-1. Immutable once built.
//
// The forward process uses the variance-preserving convention
//   x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int num_steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return alpha_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double sigma(int t) const { return sigma_.at(t); }
  SigmaKind sigma_kind() const { return sigma_kind_; }
  double beta_start() const { return beta_.front(); }
  double beta_end() const { return beta_.back(); }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  // sqrt(beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)); 0 at t == 0.
  double posterior_sigma(int t) const;

  friend NoiseSchedule build_linear_schedule(int, double, double, SigmaKind);
  friend NoiseSchedule schedule_from_betas(std::vector<double>, SigmaKind);

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_;
  SigmaKind sigma_kind_ = SigmaKind::beta;
};

// Linearly spaced betas; requires 0 < beta_start <= beta_end < 1 and T >= 2.
NoiseSchedule build_linear_schedule(int num_steps, double beta_start,
                                    double beta_end,
                                    SigmaKind sigma = SigmaKind::beta);

// Arbitrary betas, each in (0, 1); at least one step.
NoiseSchedule schedule_from_betas(std::vector<double> betas,
                                  SigmaKind sigma = SigmaKind::beta);

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched);

// Same mix for an explicit alpha_bar in [0, 1], including the limits.
Tensor forward_diffuse_coeff(const Tensor& x0, const Tensor& eps,
                             double alpha_bar);

// Per-sample timesteps, one per batch row.
Tensor forward_diffuse(const Tensor& x0, std::span<const int> t,
                       const Tensor& eps, const NoiseSchedule& sched);

}  // namespace scenegen
