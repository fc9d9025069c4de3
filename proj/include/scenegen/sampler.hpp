#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scenegen/denoiser.hpp"
#include "scenegen/image_io.hpp"
#include "scenegen/noise_schedule.hpp"

namespace scenegen {

enum class SamplerKind { ddpm, ddim };

// `standard` is the usual DDIM update (x0 estimate + direction + noise).
// `literal` reproduces the shortened printed form
//   x_prev = sqrt(abar_prev) x0_hat + sqrt(1 - alpha_prev) * ddim_eta * noise
// which drops the direction term; kept only for comparison runs.
enum class DdimVariant { standard, literal };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& s);
DdimVariant parse_ddim_variant(const std::string& s);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ddim;
  int num_inference_steps = 50;  // DDIM only; DDPM walks every timestep
  double ddim_eta = 0.0;
  std::uint64_t seed = 0;
  DdimVariant variant = DdimVariant::standard;
  // Clamp every clean-image estimate to the data range [-1, 1] while sampling.
  bool clip_denoised = true;

  void validate(int train_steps) const;
};

// Noise prediction for a batch at per-sample timesteps.
using EpsModel = std::function<Tensor(const Tensor& x, std::span<const int> t)>;

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sigma_t noise
// The noise term is dropped at t == 1. Requires t >= 1.
Tensor ddpm_update(const Tensor& x_t, const Tensor& eps, int t,
                   const NoiseSchedule& sched, const Tensor& noise);
Tensor ddpm_step(const EpsModel& model, const Tensor& x_t, int t,
                 const NoiseSchedule& sched, const Tensor& noise);

// ddim_eta * sqrt((1 - abar_prev) / (1 - abar_t)) * sqrt(1 - abar_t / abar_prev)
double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, double ddim_eta);

Tensor ddim_update(const Tensor& x_t, const Tensor& eps, int t, int t_prev,
                   const NoiseSchedule& sched, double ddim_eta,
                   const Tensor& noise,
                   DdimVariant variant = DdimVariant::standard);
Tensor ddim_step(const EpsModel& model, const Tensor& x_t, int t, int t_prev,
                 const NoiseSchedule& sched, double ddim_eta,
                 const Tensor& noise,
                 DdimVariant variant = DdimVariant::standard);

// Clean-image estimate (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
Tensor predict_x0(const Tensor& x_t, const Tensor& eps, int t,
                  const NoiseSchedule& sched);

// Noise prediction whose clean-image estimate lies in [-1, 1]. Elements whose
// estimate is already in range are copied unchanged; the others are replaced
// by the noise that reproduces x_t from the clamped estimate.
Tensor clip_prediction(const Tensor& x_t, const Tensor& eps, int t,
                       const NoiseSchedule& sched);

// Uniform stride over [0, T): strictly decreasing, last element 0.
std::vector<int> inference_timesteps(int train_steps, int inference_steps);

// Runs the reverse process from unit Gaussian noise. Sample i draws all of its
// noise from a stream keyed by (cfg.seed, keys[i]), so results do not depend
// on batch composition. Both samplers walk down to timestep 0 and return the
// clean-image estimate there, in model units. With cfg.clip_denoised every
// model prediction passes through clip_prediction first.
Tensor sample(const EpsModel& model, Shape shape, const SamplerConfig& cfg,
              const NoiseSchedule& sched, std::span<const std::uint64_t> keys);

// Full conditional generation with a denoiser; returns 8-bit RGB images.
std::vector<Image> generate(Denoiser& model, const ConditionBatch& cond,
                            const SamplerConfig& cfg, const NoiseSchedule& sched,
                            std::span<const std::uint64_t> keys);

}  // namespace scenegen
