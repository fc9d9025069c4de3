#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "scenegen/nn.hpp"

namespace scenegen {

struct TextEncoderConfig {
  int embed_dim = 128;
  int layers = 3;
  int max_tokens = 48;

  int output_dim() const { return embed_dim * layers; }
  void validate() const;
};

// Compact trainable prompt encoder.
//
// Tokens are embedded (token + position), then passed through `layers`
// residual mixing layers
//   h_k = h_{k-1} + silu(h_{k-1} W_k + mean_tokens(h_{k-1}) U_k + b_k).
// The token-mean of every layer output is concatenated along the channel
// axis, giving a layered embedding of size layers * embed_dim.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& cfg, Rng& rng);

  static const std::vector<std::string>& vocabulary();
  // Lowercases, splits on anything that is not a letter or digit. Unknown
  // words map to token 0. Throws ValidationError for an empty prompt.
  std::vector<int> tokenize(std::string_view prompt) const;

  // (n, output_dim, 1, 1); caches for backward.
  Tensor forward(const std::vector<std::vector<int>>& tokens);
  Tensor encode(std::string_view prompt);
  void backward(const Tensor& g_out);

  void collect(nn::ParamRefs& out);
  const TextEncoderConfig& config() const { return cfg_; }

 private:
  struct SampleCache {
    std::vector<int> tokens;
    std::vector<std::vector<real>> h;  // layers + 1 activations, L x D each
    std::vector<std::vector<real>> a;  // pre-activations per layer
    std::vector<std::vector<real>> m;  // token means per layer input
  };

  TextEncoderConfig cfg_;
  nn::Parameter token_embedding_;     // (V, D)
  nn::Parameter position_embedding_;  // (max_tokens, D)
  std::vector<nn::Parameter> mix_w_;  // (D, D) each
  std::vector<nn::Parameter> mix_u_;
  std::vector<nn::Parameter> mix_b_;
  std::vector<SampleCache> cache_;
};

}  // namespace scenegen
