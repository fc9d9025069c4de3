#pragma once

#include <optional>
#include <string>
#include <vector>

#include "scenegen/kernels.hpp"
#include "scenegen/rng.hpp"
#include "scenegen/tensor.hpp"

namespace scenegen::nn {

// A learnable tensor plus its gradient accumulator. Frozen parameters keep an
// empty accumulator and their layers skip the weight-gradient computation.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void set_trainable(bool on);
  void zero_grad();
};

using ParamRefs = std::vector<Parameter*>;

std::size_t count_elements(const ParamRefs& params);
void set_trainable(const ParamRefs& params, bool on);
void zero_grad(const ParamRefs& params);

// Layers below cache whatever their backward pass needs from the most recent
// forward call. `backward` accumulates parameter gradients and returns the
// gradient w.r.t. the layer input.

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in, int out, int kernel, int stride, int pad,
         Rng& rng, bool zero_init = false);

  const Tensor& forward(const Tensor& x);
  Tensor backward(const Tensor& gy, bool input_grad = true);
  void collect(ParamRefs& out);

  Parameter weight;
  Parameter bias;
  kernels::ConvGeometry geometry;

 private:
  Tensor x_;
  Tensor y_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out, Rng& rng, bool zero_init = false);

  const Tensor& forward(const Tensor& x);
  Tensor backward(const Tensor& gy, bool input_grad = true);
  void collect(ParamRefs& out);

  Parameter weight;  // (out, in, 1, 1)
  Parameter bias;

 private:
  Tensor x_;
  Tensor y_;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(std::string name, int groups, int channels);

  const Tensor& forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(ParamRefs& out);

  Parameter gamma;
  Parameter beta;
  int groups = 1;

 private:
  Tensor x_;
  Tensor y_;
  std::vector<real> mean_;
  std::vector<real> rstd_;
};

class SiLU {
 public:
  const Tensor& forward(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  Tensor x_;
  Tensor y_;
};

// Pre-activation residual block with an additive timestep/condition
// embedding: norm-act-conv, + proj(act(temb)), norm-act-conv, + skip(x).
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in, int out, int embed_dim,
           int groups, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& temb);
  // Adds the embedding gradient into `g_temb` (allocated on first use).
  Tensor backward(const Tensor& gy, Tensor& g_temb, bool input_grad = true);
  void collect(ParamRefs& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0;
  int out_ = 0;
  GroupNorm norm1_;
  SiLU act1_;
  Conv2d conv1_;
  SiLU temb_act_;
  Linear temb_proj_;
  GroupNorm norm2_;
  SiLU act2_;
  Conv2d conv2_;
  std::optional<Conv2d> skip_;
};

// Sinusoidal features of integer timesteps, shape (n, dim).
Tensor timestep_features(std::span<const int> timesteps, int dim);

// Adds a per-(sample, channel) vector over all spatial positions.
void add_channel_bias(Tensor& x, const Tensor& per_channel);
// Sums a gradient over spatial positions: (n, c, h, w) -> (n, c, 1, 1).
Tensor sum_spatial(const Tensor& g);

}  // namespace scenegen::nn
