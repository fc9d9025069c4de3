#pragma once

#include <span>
#include <vector>

#include "scenegen/tensor.hpp"

// Compute kernels behind the network layers.
//
// `kernels::` holds the OpenMP versions used everywhere in the library. Work
// is split over the batch (or batch x group) axis with a static schedule and
// per-thread gradient buffers reduced in thread order, so results are
// reproducible for a fixed thread count. `kernels::reference::` holds the
// straightforward serial loops the tests and the benchmark compare against.
namespace scenegen::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

// weight: (out, in, k, k); bias: out values or empty. `y` is resized.
void conv2d_forward(const Tensor& x, const Tensor& weight,
                    std::span<const real> bias, const ConvGeometry& g,
                    Tensor& y);

// Gradients w.r.t. weight and bias are accumulated (+=); `gx` is overwritten.
// Any of the outputs may be null to skip that computation.
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gy,
                     const ConvGeometry& g, Tensor* gx, Tensor* gweight,
                     std::vector<real>* gbias);

// x: (n, in, 1, 1); weight: (out, in, 1, 1); y: (n, out, 1, 1).
void linear_forward(const Tensor& x, const Tensor& weight,
                    std::span<const real> bias, Tensor& y);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& gy,
                     Tensor* gx, Tensor* gweight, std::vector<real>* gbias);

void silu_forward(const Tensor& x, Tensor& y);
void silu_backward(const Tensor& x, const Tensor& gy, Tensor& gx);

// Saves per-(sample, group) mean and reciprocal std for the backward pass.
void group_norm_forward(const Tensor& x, int groups, std::span<const real> gamma,
                        std::span<const real> beta, real eps, Tensor& y,
                        std::vector<real>& mean, std::vector<real>& rstd);
void group_norm_backward(const Tensor& x, const Tensor& gy, int groups,
                         std::span<const real> gamma,
                         const std::vector<real>& mean,
                         const std::vector<real>& rstd, Tensor& gx,
                         std::vector<real>* ggamma, std::vector<real>* gbeta);

void upsample_nearest2x_forward(const Tensor& x, Tensor& y);
void upsample_nearest2x_backward(const Tensor& gy, Tensor& gx);

namespace reference {

void conv2d_forward(const Tensor& x, const Tensor& weight,
                    std::span<const real> bias, const ConvGeometry& g,
                    Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gy,
                     const ConvGeometry& g, Tensor* gx, Tensor* gweight,
                     std::vector<real>* gbias);
void silu_forward(const Tensor& x, Tensor& y);
void silu_backward(const Tensor& x, const Tensor& gy, Tensor& gx);
void group_norm_forward(const Tensor& x, int groups, std::span<const real> gamma,
                        std::span<const real> beta, real eps, Tensor& y,
                        std::vector<real>& mean, std::vector<real>& rstd);
void group_norm_backward(const Tensor& x, const Tensor& gy, int groups,
                         std::span<const real> gamma,
                         const std::vector<real>& mean,
                         const std::vector<real>& rstd, Tensor& gx,
                         std::vector<real>* ggamma, std::vector<real>* gbeta);

}  // namespace reference

// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();

}  // namespace scenegen::kernels
