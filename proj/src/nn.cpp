#include "scenegen/nn.hpp"

#include <cmath>

#include "scenegen/error.hpp"

namespace scenegen::nn {

void Parameter::set_trainable(bool on) {
  trainable = on;
  if (on) {
    if (!(grad.shape() == value.shape())) grad = Tensor(value.shape());
  } else {
    grad = Tensor();
  }
}

void Parameter::zero_grad() {
  if (trainable) {
    if (!(grad.shape() == value.shape())) grad = Tensor(value.shape());
    grad.zero();
  }
}

std::size_t count_elements(const ParamRefs& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

void set_trainable(const ParamRefs& params, bool on) {
  for (auto* p : params) p->set_trainable(on);
}

void zero_grad(const ParamRefs& params) {
  for (auto* p : params) p->zero_grad();
}

namespace {

Parameter make_param(std::string name, Shape shape) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(shape);
  return p;
}

// Accumulator for a parameter, or null when the parameter is frozen.
Tensor* grad_of(Parameter& p) {
  if (!p.trainable) return nullptr;
  if (!(p.grad.shape() == p.value.shape())) p.grad = Tensor(p.value.shape());
  return &p.grad;
}

std::vector<real>* bias_grad_of(Parameter& p) {
  Tensor* g = grad_of(p);
  return g ? &g->vec() : nullptr;
}

}  // namespace

Conv2d::Conv2d(std::string name, int in, int out, int kernel, int stride,
               int pad, Rng& rng, bool zero_init)
    : weight(make_param(name + ".weight", Shape{out, in, kernel, kernel})),
      bias(make_param(name + ".bias", Shape{out, 1, 1, 1})),
      geometry{in, out, kernel, stride, pad} {
  if (!zero_init) {
    fill_normal(weight.value, rng, 1.0 / std::sqrt(double(in) * kernel * kernel));
  }
}

const Tensor& Conv2d::forward(const Tensor& x) {
  x_ = x;
  kernels::conv2d_forward(x_, weight.value, bias.value.span(), geometry, y_);
  return y_;
}

Tensor Conv2d::backward(const Tensor& gy, bool input_grad) {
  Tensor gx;
  kernels::conv2d_backward(x_, weight.value, gy, geometry,
                           input_grad ? &gx : nullptr, grad_of(weight),
                           bias_grad_of(bias));
  return gx;
}

void Conv2d::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Linear::Linear(std::string name, int in, int out, Rng& rng, bool zero_init)
    : weight(make_param(name + ".weight", Shape{out, in, 1, 1})),
      bias(make_param(name + ".bias", Shape{out, 1, 1, 1})) {
  if (!zero_init) fill_normal(weight.value, rng, 1.0 / std::sqrt(double(in)));
}

const Tensor& Linear::forward(const Tensor& x) {
  x_ = x;
  kernels::linear_forward(x_, weight.value, bias.value.span(), y_);
  return y_;
}

Tensor Linear::backward(const Tensor& gy, bool input_grad) {
  Tensor gx;
  kernels::linear_backward(x_, weight.value, gy, input_grad ? &gx : nullptr,
                           grad_of(weight), bias_grad_of(bias));
  return gx;
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

GroupNorm::GroupNorm(std::string name, int groups_, int channels)
    : gamma(make_param(name + ".gamma", Shape{channels, 1, 1, 1})),
      beta(make_param(name + ".beta", Shape{channels, 1, 1, 1})),
      groups(groups_) {
  if (groups <= 0 || channels % groups != 0) {
    throw ConfigError("group norm: " + std::to_string(channels) +
                      " channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  gamma.value.fill(real(1));
}

const Tensor& GroupNorm::forward(const Tensor& x) {
  x_ = x;
  kernels::group_norm_forward(x_, groups, gamma.value.span(), beta.value.span(),
                              real(1e-5), y_, mean_, rstd_);
  return y_;
}

Tensor GroupNorm::backward(const Tensor& gy) {
  Tensor gx;
  kernels::group_norm_backward(x_, gy, groups, gamma.value.span(), mean_, rstd_,
                               gx, bias_grad_of(gamma), bias_grad_of(beta));
  return gx;
}

void GroupNorm::collect(ParamRefs& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

const Tensor& SiLU::forward(const Tensor& x) {
  x_ = x;
  kernels::silu_forward(x_, y_);
  return y_;
}

Tensor SiLU::backward(const Tensor& gy) const {
  Tensor gx;
  kernels::silu_backward(x_, gy, gx);
  return gx;
}

ResBlock::ResBlock(const std::string& name, int in, int out, int embed_dim,
                   int groups, Rng& rng)
    : in_(in),
      out_(out),
      norm1_(name + ".norm1", std::min(groups, in), in),
      conv1_(name + ".conv1", in, out, 3, 1, 1, rng),
      temb_proj_(name + ".temb_proj", embed_dim, out, rng),
      norm2_(name + ".norm2", std::min(groups, out), out),
      conv2_(name + ".conv2", out, out, 3, 1, 1, rng) {
  if (in != out) skip_.emplace(name + ".skip", in, out, 1, 1, 0, rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& temb) {
  Tensor h = conv1_.forward(act1_.forward(norm1_.forward(x)));
  add_channel_bias(h, temb_proj_.forward(temb_act_.forward(temb)));
  Tensor y = conv2_.forward(act2_.forward(norm2_.forward(h)));
  y += skip_ ? skip_->forward(x) : x;
  return y;
}

Tensor ResBlock::backward(const Tensor& gy, Tensor& g_temb, bool input_grad) {
  Tensor gh = norm2_.backward(act2_.backward(conv2_.backward(gy)));
  Tensor ge = temb_act_.backward(temb_proj_.backward(sum_spatial(gh)));
  if (g_temb.empty()) {
    g_temb = std::move(ge);
  } else {
    g_temb += ge;
  }
  Tensor gx = norm1_.backward(act1_.backward(conv1_.backward(gh)));
  if (!input_grad) {
    if (skip_) skip_->backward(gy, false);
    return {};
  }
  gx += skip_ ? skip_->backward(gy) : gy;
  return gx;
}

void ResBlock::collect(ParamRefs& out) {
  norm1_.collect(out);
  conv1_.collect(out);
  temb_proj_.collect(out);
  norm2_.collect(out);
  conv2_.collect(out);
  if (skip_) skip_->collect(out);
}

Tensor timestep_features(std::span<const int> timesteps, int dim) {
  if (dim % 2 != 0) throw ConfigError("timestep feature dim must be even");
  const int half = dim / 2;
  Tensor out(static_cast<int>(timesteps.size()), dim);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double arg = timesteps[i] * freq;
      out[i * dim + k] = static_cast<real>(std::sin(arg));
      out[i * dim + half + k] = static_cast<real>(std::cos(arg));
    }
  }
  return out;
}

void add_channel_bias(Tensor& x, const Tensor& per_channel) {
  if (per_channel.n() != x.n() ||
      static_cast<int>(per_channel.shape().sample()) != x.c()) {
    throw DimensionError("add_channel_bias: " + per_channel.shape().str() +
                         " vs " + x.shape().str());
  }
  const std::size_t plane = x.shape().plane();
  for (int i = 0; i < x.n(); ++i) {
    for (int c = 0; c < x.c(); ++c) {
      const real b = per_channel[static_cast<std::size_t>(i) * x.c() + c];
      real* p = x.sample(i) + c * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += b;
    }
  }
}

Tensor sum_spatial(const Tensor& g) {
  Tensor out(g.n(), g.c());
  const std::size_t plane = g.shape().plane();
  for (int i = 0; i < g.n(); ++i) {
    for (int c = 0; c < g.c(); ++c) {
      const real* p = g.sample(i) + c * plane;
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += p[j];
      out[static_cast<std::size_t>(i) * g.c() + c] = static_cast<real>(s);
    }
  }
  return out;
}

}  // namespace scenegen::nn
