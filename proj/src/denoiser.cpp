#include "scenegen/denoiser.hpp"

#include <cmath>

#include "scenegen/error.hpp"

namespace scenegen {

void DenoiserConfig::validate() const {
  if (image_size <= 0 || in_channels <= 0 || base_channels <= 0 ||
      time_embed_dim <= 0 || text_embed_dim <= 0 || condition_channels <= 0 ||
      groups <= 0) {
    throw ConfigError("denoiser dimensions must be positive");
  }
  if (channel_multipliers.empty()) {
    throw ConfigError("denoiser needs at least one channel multiplier");
  }
  if (time_embed_dim % 2 != 0) throw ConfigError("time_embed_dim must be even");
  const int factor = 1 << (num_resolutions() - 1);
  if (image_size % factor != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " not divisible by " + std::to_string(factor));
  }
  for (int m : channel_multipliers) {
    if (m <= 0) throw ConfigError("channel multipliers must be positive");
    if ((base_channels * m) % groups != 0) {
      throw ConfigError("channel count " + std::to_string(base_channels * m) +
                        " not divisible by groups " + std::to_string(groups));
    }
  }
}

Encoder::Encoder(const std::string& prefix, const DenoiserConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int e = cfg.time_embed_dim;
  const int levels = cfg.num_resolutions();
  time_fc1_ = nn::Linear(prefix + ".time_fc1", e, e, rng);
  time_fc2_ = nn::Linear(prefix + ".time_fc2", e, e, rng);
  text_proj_ = nn::Linear(prefix + ".text_proj", cfg.text_embed_dim, e, rng);
  dims_proj_ = nn::Linear(prefix + ".dims_proj", 2, e, rng);
  stem_ = nn::Conv2d(prefix + ".stem", cfg.in_channels, cfg.base_channels, 3, 1,
                     1, rng);
  int prev = cfg.base_channels;
  for (int l = 0; l < levels; ++l) {
    const int ch = cfg.channels_at(l);
    blocks_.emplace_back(prefix + ".block" + std::to_string(l), prev, ch, e,
                         cfg.groups, rng);
    if (l + 1 < levels) {
      downs_.emplace_back(prefix + ".down" + std::to_string(l), ch, ch, 3, 2, 1,
                          rng);
    }
    prev = ch;
  }
  mid_ = nn::ResBlock(prefix + ".mid", prev, prev, e, cfg.groups, rng);
}

Encoder::Output Encoder::forward(const Tensor& x, std::span<const int> t,
                                 const Tensor& text, const Tensor& dims,
                                 const Tensor* hint) {
  Output out;
  out.temb = time_fc2_.forward(
      time_act_.forward(time_fc1_.forward(nn::timestep_features(t, cfg_.time_embed_dim))));
  out.temb += text_proj_.forward(text);
  out.temb += dims_proj_.forward(dims);

  Tensor h = stem_.forward(x);
  if (hint) h += *hint;
  const int levels = cfg_.num_resolutions();
  for (int l = 0; l < levels; ++l) {
    h = blocks_[l].forward(h, out.temb);
    out.skips.push_back(h);
    if (l + 1 < levels) h = downs_[l].forward(h);
  }
  out.skips.push_back(mid_.forward(h, out.temb));
  return out;
}

Encoder::Grads Encoder::backward(std::vector<Tensor> g_skips,
                                 const Tensor* g_temb_in, bool want_hint,
                                 bool want_text) {
  const int levels = cfg_.num_resolutions();
  if (static_cast<int>(g_skips.size()) != levels + 1) {
    throw DimensionError("encoder backward: expected one gradient per skip");
  }
  Tensor g_temb;
  if (g_temb_in && !g_temb_in->empty()) g_temb = *g_temb_in;

  Tensor gh = mid_.backward(g_skips[levels], g_temb);
  for (int l = levels - 1; l >= 0; --l) {
    if (l + 1 < levels) gh = downs_[l].backward(gh);
    if (!g_skips[l].empty()) gh += g_skips[l];
    gh = blocks_[l].backward(gh, g_temb);
  }
  Grads grads;
  stem_.backward(gh, false);
  if (want_hint) grads.hint = std::move(gh);

  Tensor g_time = time_fc2_.backward(g_temb);
  time_fc1_.backward(time_act_.backward(g_time), false);
  Tensor g_text = text_proj_.backward(g_temb, want_text);
  dims_proj_.backward(g_temb, false);
  if (want_text) grads.text = std::move(g_text);
  return grads;
}

void Encoder::collect(nn::ParamRefs& out) {
  time_fc1_.collect(out);
  time_fc2_.collect(out);
  text_proj_.collect(out);
  dims_proj_.collect(out);
  stem_.collect(out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    blocks_[l].collect(out);
    if (l < downs_.size()) downs_[l].collect(out);
  }
  mid_.collect(out);
}

Decoder::Decoder(const std::string& prefix, const DenoiserConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int levels = cfg.num_resolutions();
  const int e = cfg.time_embed_dim;
  for (int l = 0; l < levels; ++l) {
    const int ch = cfg.channels_at(l);
    // Input is the upsampled path (or the middle block) concatenated with
    // the skip of the same level; both carry `ch` channels.
    blocks_.emplace_back(prefix + ".block" + std::to_string(l), 2 * ch, ch, e,
                         cfg.groups, rng);
    skip_channels_.push_back(ch);
  }
  for (int l = 0; l + 1 < levels; ++l) {
    ups_.emplace_back(prefix + ".up" + std::to_string(l), cfg.channels_at(l + 1),
                      cfg.channels_at(l), 3, 1, 1, rng);
  }
  out_norm_ = nn::GroupNorm(prefix + ".out_norm", cfg.groups, cfg.channels_at(0));
  out_conv_ = nn::Conv2d(prefix + ".out_conv", cfg.channels_at(0),
                         cfg.in_channels, 3, 1, 1, rng);
}

Tensor Decoder::forward(const std::vector<Tensor>& skips, const Tensor& temb) {
  const int levels = cfg_.num_resolutions();
  if (static_cast<int>(skips.size()) != levels + 1) {
    throw DimensionError("decoder: expected " + std::to_string(levels + 1) +
                         " skip tensors");
  }
  Tensor h = skips[levels];
  for (int l = levels - 1; l >= 0; --l) {
    h = blocks_[l].forward(concat_channels(h, skips[l]), temb);
    if (l > 0) {
      Tensor up;
      kernels::upsample_nearest2x_forward(h, up);
      h = ups_[l - 1].forward(up);
    }
  }
  return out_conv_.forward(out_act_.forward(out_norm_.forward(h)));
}

Decoder::Grads Decoder::backward(const Tensor& gy) {
  const int levels = cfg_.num_resolutions();
  Grads grads;
  grads.skips.resize(levels + 1);
  Tensor g = out_norm_.backward(out_act_.backward(out_conv_.backward(gy)));
  for (int l = 0; l < levels; ++l) {
    Tensor g_in = blocks_[l].backward(g, grads.temb);
    auto [g_h, g_skip] = split_channels(g_in, g_in.c() - skip_channels_[l]);
    grads.skips[l] = std::move(g_skip);
    if (l + 1 < levels) {
      Tensor g_up = ups_[l].backward(g_h);
      kernels::upsample_nearest2x_backward(g_up, g);
    } else {
      grads.skips[levels] = std::move(g_h);
    }
  }
  return grads;
}

void Decoder::collect(nn::ParamRefs& out) {
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    blocks_[l].collect(out);
    if (l < ups_.size()) ups_[l].collect(out);
  }
  out_norm_.collect(out);
  out_conv_.collect(out);
}

UNet::UNet(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = Encoder("base.enc", cfg_, rng);
  decoder_ = Decoder("base.dec", cfg_, rng);
}

void UNet::collect(nn::ParamRefs& out) {
  encoder_.collect(out);
  decoder_.collect(out);
}

void UNet::collect_encoder(nn::ParamRefs& out) { encoder_.collect(out); }

void ControlBranch::collect(nn::ParamRefs& out) {
  encoder.collect(out);
  collect_zero_projections(out);
}

void ControlBranch::collect_zero_projections(nn::ParamRefs& out) {
  hint.collect(out);
  for (auto& z : outputs) z.collect(out);
}

ControlBranch freeze_base_and_clone(UNet& base) {
  const DenoiserConfig& cfg = base.config();
  ControlBranch branch;
  branch.encoder = base.encoder();
  nn::ParamRefs copied;
  branch.encoder.collect(copied);
  const std::string from = "base.enc", to = "ctrl.enc";
  for (auto* p : copied) {
    if (p->name.rfind(from, 0) == 0) p->name = to + p->name.substr(from.size());
    p->set_trainable(true);
    p->zero_grad();
  }
  Rng unused(0);
  branch.hint = nn::Conv2d("ctrl.zero_in", cfg.condition_channels,
                           cfg.base_channels, 1, 1, 0, unused, true);
  const int levels = cfg.num_resolutions();
  for (int i = 0; i <= levels; ++i) {
    const int ch = cfg.channels_at(std::min(i, levels - 1));
    branch.outputs.emplace_back("ctrl.zero_out" + std::to_string(i), ch, ch, 1,
                                1, 0, unused, true);
  }
  nn::ParamRefs frozen;
  base.collect(frozen);
  nn::set_trainable(frozen, false);
  return branch;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng& rng) : base_(cfg, rng) {}

ControlBranch& Denoiser::branch() {
  if (!branch_) throw StateError("denoiser has no control branch");
  return *branch_;
}

void Denoiser::attach_control_branch() {
  if (branch_) throw StateError("control branch already attached");
  branch_ = freeze_base_and_clone(base_);
}

void Denoiser::set_noise_levels(const NoiseSchedule& sched) {
  skip_.resize(static_cast<std::size_t>(sched.num_steps()));
  for (int t = 0; t < sched.num_steps(); ++t) skip_[t] = std::sqrt(1.0 - sched.alpha_bar(t));
}

void Denoiser::add_input_skip(Tensor& y, const Tensor& x, std::span<const int> t) const {
  if (!base_.config().input_skip) return;
  if (skip_.empty()) throw StateError("denoiser input skip needs set_noise_levels");
  const std::size_t per = x.shape().sample();
  for (int i = 0; i < x.n(); ++i) {
    if (t[i] < 0 || t[i] >= static_cast<int>(skip_.size())) {
      throw RangeError("denoiser: timestep " + std::to_string(t[i]) + " outside the schedule");
    }
    const real c = static_cast<real>(skip_[t[i]]);
    const real* xs = x.sample(i);
    real* ys = y.sample(i);
    for (std::size_t j = 0; j < per; ++j) ys[j] += c * xs[j];
  }
}

void Denoiser::check_input(const Tensor& x, std::span<const int> t) const {
  const auto& cfg = base_.config();
  if (x.c() != cfg.in_channels || x.h() != cfg.image_size ||
      x.w() != cfg.image_size) {
    throw DimensionError("denoiser input " + x.shape().str() +
                         " does not match image_size " +
                         std::to_string(cfg.image_size));
  }
  if (static_cast<int>(t.size()) != x.n()) {
    throw DimensionError("denoiser: one timestep per sample required");
  }
}

Tensor Denoiser::base_forward(const Tensor& x, std::span<const int> t,
                              const Tensor& text, const Tensor& dims) {
  check_input(x, t);
  auto enc = base_.encoder().forward(x, t, text, dims);
  last_ = Mode::base;
  Tensor y = base_.decoder().forward(enc.skips, enc.temb);
  add_input_skip(y, x, t);
  return y;
}

Tensor Denoiser::control_forward(const Tensor& x, std::span<const int> t,
                                 const ConditionBatch& cond) {
  if (!branch_) throw StateError("control_forward called without a control branch");
  check_input(x, t);
  if (cond.spatial.n() != x.n() || cond.spatial.h() != x.h() ||
      cond.spatial.w() != x.w() ||
      cond.spatial.c() != base_.config().condition_channels) {
    throw DimensionError("condition map " + cond.spatial.shape().str() +
                         " does not match input " + x.shape().str());
  }
  auto enc = base_.encoder().forward(x, t, cond.text, cond.dims);
  const Tensor& hint = branch_->hint.forward(cond.spatial);
  auto ctrl = branch_->encoder.forward(x, t, cond.text, cond.dims, &hint);
  for (std::size_t i = 0; i < enc.skips.size(); ++i) {
    enc.skips[i] += branch_->outputs[i].forward(ctrl.skips[i]);
  }
  last_ = Mode::control;
  Tensor y = base_.decoder().forward(enc.skips, enc.temb);
  add_input_skip(y, x, t);
  return y;
}

Tensor Denoiser::forward(const Tensor& x, std::span<const int> t,
                         const ConditionBatch& cond) {
  if (branch_) return control_forward(x, t, cond);
  return base_forward(x, t, cond.text, cond.dims);
}

Tensor Denoiser::backward(const Tensor& gy) {
  switch (last_) {
    case Mode::none:
      throw StateError("backward called before forward");
    case Mode::base: {
      auto dg = base_.decoder().backward(gy);
      auto eg = base_.encoder().backward(std::move(dg.skips), &dg.temb, false, true);
      return eg.text;
    }
    case Mode::control: {
      auto dg = base_.decoder().backward(gy);
      std::vector<Tensor> g_ctrl(dg.skips.size());
      for (std::size_t i = 0; i < dg.skips.size(); ++i) {
        g_ctrl[i] = branch_->outputs[i].backward(dg.skips[i]);
      }
      auto cg = branch_->encoder.backward(std::move(g_ctrl), nullptr, true, false);
      branch_->hint.backward(cg.hint, false);
      return {};
    }
  }
  return {};
}

nn::ParamRefs Denoiser::parameters() {
  nn::ParamRefs out;
  base_.collect(out);
  if (branch_) branch_->collect(out);
  return out;
}

nn::ParamRefs Denoiser::trainable_parameters() {
  nn::ParamRefs out;
  for (auto* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

}  // namespace scenegen
