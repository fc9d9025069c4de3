#pragma once

#include <optional>
#include <span>
#include <vector>

#include "scenegen/nn.hpp"
#include "scenegen/noise_schedule.hpp"

namespace scenegen {

struct DenoiserConfig {
  int image_size = 64;
  int in_channels = 3;
  int base_channels = 64;
  std::vector<int> channel_multipliers{1, 2, 4};
  int time_embed_dim = 256;
  int text_embed_dim = 384;
  int condition_channels = 6;
  int groups = 8;
  // Adds sqrt(1 - abar_t) * x_t to the network output, so the layers only
  // learn the residual. Requires Denoiser::set_noise_levels.
  bool input_skip = false;

  int num_resolutions() const {
    return static_cast<int>(channel_multipliers.size());
  }
  int channels_at(int level) const {
    return base_channels * channel_multipliers.at(level);
  }
  // Throws ConfigError on any violated invariant.
  void validate() const;
};

// Batched conditioning input of the network.
struct ConditionBatch {
  Tensor spatial;  // (n, condition_channels, h, w), values in {0, 1}
  Tensor text;     // (n, text_embed_dim)
  Tensor dims;     // (n, 2): height and width divided by the model image size
};

// Timestep/text/size embedding, stem and downsampling path. Produces one skip
// tensor per resolution plus the middle-block output (last element).
class Encoder {
 public:
  struct Output {
    std::vector<Tensor> skips;
    Tensor temb;
  };
  struct Grads {
    Tensor hint;  // gradient w.r.t. the feature map added after the stem
    Tensor text;  // gradient w.r.t. the text embedding input
  };

  Encoder() = default;
  Encoder(const std::string& prefix, const DenoiserConfig& cfg, Rng& rng);

  // `hint`, when given, is added to the stem output (shape (n, C, H, W)).
  Output forward(const Tensor& x, std::span<const int> t, const Tensor& text,
                 const Tensor& dims, const Tensor* hint = nullptr);
  // `g_skips` must have one entry per skip (empty tensors count as zero).
  Grads backward(std::vector<Tensor> g_skips, const Tensor* g_temb,
                 bool want_hint, bool want_text);
  void collect(nn::ParamRefs& out);

 private:
  DenoiserConfig cfg_;
  nn::Linear time_fc1_;
  nn::SiLU time_act_;
  nn::Linear time_fc2_;
  nn::Linear text_proj_;
  nn::Linear dims_proj_;
  nn::Conv2d stem_;
  std::vector<nn::ResBlock> blocks_;
  std::vector<nn::Conv2d> downs_;
  nn::ResBlock mid_;
};

// Upsampling path consuming the encoder skips.
class Decoder {
 public:
  struct Grads {
    std::vector<Tensor> skips;
    Tensor temb;
  };

  Decoder() = default;
  Decoder(const std::string& prefix, const DenoiserConfig& cfg, Rng& rng);

  Tensor forward(const std::vector<Tensor>& skips, const Tensor& temb);
  Grads backward(const Tensor& gy);
  void collect(nn::ParamRefs& out);

 private:
  DenoiserConfig cfg_;
  std::vector<nn::ResBlock> blocks_;  // indexed by level
  std::vector<nn::Conv2d> ups_;       // ups_[l] maps level l to level l-1
  std::vector<int> skip_channels_;
  nn::GroupNorm out_norm_;
  nn::SiLU out_act_;
  nn::Conv2d out_conv_;
};

// Base noise-prediction network eps(x_t; t, text): encoder-decoder with skip
// connections.
class UNet {
 public:
  UNet() = default;
  UNet(const DenoiserConfig& cfg, Rng& rng);

  const DenoiserConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }

  void collect(nn::ParamRefs& out);
  void collect_encoder(nn::ParamRefs& out);

 private:
  DenoiserConfig cfg_;
  Encoder encoder_;
  Decoder decoder_;
};

// Trainable copy of the base encoder plus the zero-initialized 1x1
// projections: `hint` maps the spatial condition into the branch input and
// `outputs[i]` maps branch features onto decoder skip i.
struct ControlBranch {
  Encoder encoder;
  nn::Conv2d hint;
  std::vector<nn::Conv2d> outputs;

  void collect(nn::ParamRefs& out);
  void collect_zero_projections(nn::ParamRefs& out);
};

// Freezes every base parameter and returns a branch whose encoder is an exact
// copy of the base encoder and whose projections are all zero.
ControlBranch freeze_base_and_clone(UNet& base);

// The full denoiser: frozen-or-trainable base plus optional control branch.
//
//   base:     y = D(E(x))
//   control:  y = D(E(x) + Z2(E_c(x + Z1(c))))
//
// The branch adds its projected features onto every decoder skip connection.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, Rng& rng);

  const DenoiserConfig& config() const { return base_.config(); }
  UNet& base() { return base_; }
  bool has_control() const { return branch_.has_value(); }
  ControlBranch& branch();

  void attach_control_branch();

  // Per-timestep input skip coefficients; only used with cfg.input_skip.
  void set_noise_levels(const NoiseSchedule& sched);

  Tensor base_forward(const Tensor& x, std::span<const int> t,
                      const Tensor& text, const Tensor& dims);
  Tensor control_forward(const Tensor& x, std::span<const int> t,
                         const ConditionBatch& cond);
  // Control path when a branch is attached, base path otherwise.
  Tensor forward(const Tensor& x, std::span<const int> t,
                 const ConditionBatch& cond);

  // Backward for the most recent forward call. Returns the gradient w.r.t. the
  // text embedding (empty when the base is frozen).
  Tensor backward(const Tensor& gy);

  nn::ParamRefs parameters();
  nn::ParamRefs trainable_parameters();

 private:
  enum class Mode { none, base, control };

  void check_input(const Tensor& x, std::span<const int> t) const;
  void add_input_skip(Tensor& y, const Tensor& x, std::span<const int> t) const;

  UNet base_;
  std::optional<ControlBranch> branch_;
  std::vector<double> skip_;
  Mode last_ = Mode::none;
};

}  // namespace scenegen
