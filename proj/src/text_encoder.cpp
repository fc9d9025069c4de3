#include "scenegen/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "scenegen/error.hpp"

namespace scenegen {
namespace {

nn::Parameter make(std::string name, Shape s, Rng& rng, double stddev) {
  nn::Parameter p;
  p.name = std::move(name);
  p.value = Tensor(s);
  p.grad = Tensor(s);
  if (stddev > 0) fill_normal(p.value, rng, stddev);
  return p;
}

real silu(real v) { return v / (real(1) + std::exp(-v)); }
real silu_grad(real v) {
  const real s = real(1) / (real(1) + std::exp(-v));
  return s * (real(1) + v * (real(1) - s));
}

// Dense helpers below use fixed loop orders so results do not depend on buffer
// alignment. All matrices are row-major.

void column_mean(const real* x, int rows, int cols, real* out) {
  for (int j = 0; j < cols; ++j) out[j] = 0;
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) out[j] += x[static_cast<std::size_t>(r) * cols + j];
  }
  const real inv = real(1) / static_cast<real>(rows);
  for (int j = 0; j < cols; ++j) out[j] *= inv;
}

// c(rows x d) += a(rows x d) * b(d x d)
void accumulate_product(const real* a, int rows, int d, const real* b, int, real* c) {
  for (int r = 0; r < rows; ++r) {
    real* cr = c + static_cast<std::size_t>(r) * d;
    const real* ar = a + static_cast<std::size_t>(r) * d;
    for (int p = 0; p < d; ++p) {
      const real av = ar[p];
      const real* bp = b + static_cast<std::size_t>(p) * d;
      for (int j = 0; j < d; ++j) cr[j] += av * bp[j];
    }
  }
}

// c(d x d) += a(rows x d)^T * g(rows x d)
void accumulate_transposed_left(const real* a, const real* g, int rows, int d, real* c) {
  for (int r = 0; r < rows; ++r) {
    const real* ar = a + static_cast<std::size_t>(r) * d;
    const real* gr = g + static_cast<std::size_t>(r) * d;
    for (int p = 0; p < d; ++p) {
      const real av = ar[p];
      real* cp = c + static_cast<std::size_t>(p) * d;
      for (int j = 0; j < d; ++j) cp[j] += av * gr[j];
    }
  }
}

// c(rows x d) += g(rows x d) * b(d x d)^T
void accumulate_transposed_right(const real* g, int rows, int d, const real* b, real* c) {
  for (int r = 0; r < rows; ++r) {
    const real* gr = g + static_cast<std::size_t>(r) * d;
    real* cr = c + static_cast<std::size_t>(r) * d;
    for (int p = 0; p < d; ++p) {
      const real* bp = b + static_cast<std::size_t>(p) * d;
      real acc = 0;
      for (int j = 0; j < d; ++j) acc += gr[j] * bp[j];
      cr[p] += acc;
    }
  }
}

}  // namespace

void TextEncoderConfig::validate() const {
  if (embed_dim <= 0 || layers <= 0 || max_tokens <= 0) {
    throw ConfigError("text encoder dims must be positive");
  }
}

const std::vector<std::string>& TextEncoder::vocabulary() {
  static const std::vector<std::string> vocab = {
      "<unk>", "a", "an", "the", "surface", "mining", "scene", "with", "and",
      "no", "of", "in", "on", "left", "center", "right", "vehicle", "vehicles",
      "truck", "trucks", "excavator", "excavators", "loader", "loaders",
      "dozer", "dozers", "car", "cars", "person", "people", "persons", "bus",
      "buses", "ground", "grounds", "road", "roads", "one", "two", "three",
      "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
      "twelve", "many"};
  return vocab;
}

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.embed_dim;
  const int v = static_cast<int>(vocabulary().size());
  token_embedding_ = make("text.token_embedding", Shape{v, d, 1, 1}, rng, 1.0);
  position_embedding_ =
      make("text.position_embedding", Shape{cfg_.max_tokens, d, 1, 1}, rng, 0.5);
  for (int k = 0; k < cfg_.layers; ++k) {
    const std::string p = "text.mix" + std::to_string(k);
    mix_w_.push_back(make(p + ".w", Shape{d, d, 1, 1}, rng, 1.0 / std::sqrt(d)));
    mix_u_.push_back(make(p + ".u", Shape{d, d, 1, 1}, rng, 1.0 / std::sqrt(d)));
    mix_b_.push_back(make(p + ".b", Shape{d, 1, 1, 1}, rng, 0.0));
  }
}

std::vector<int> TextEncoder::tokenize(std::string_view prompt) const {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    const auto& v = vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(v[i], static_cast<int>(i));
    return m;
  }();
  std::vector<int> tokens;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = index.find(word);
    tokens.push_back(it == index.end() ? 0 : it->second);
    word.clear();
  };
  for (char ch : prompt) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      word.push_back(static_cast<char>(std::tolower(u)));
    } else {
      flush();
    }
  }
  flush();
  if (tokens.empty()) throw ValidationError("empty prompt");
  if (static_cast<int>(tokens.size()) > cfg_.max_tokens) {
    throw ValidationError("prompt has " + std::to_string(tokens.size()) +
                          " tokens, limit is " + std::to_string(cfg_.max_tokens));
  }
  return tokens;
}

Tensor TextEncoder::encode(std::string_view prompt) {
  return forward({tokenize(prompt)});
}

Tensor TextEncoder::forward(const std::vector<std::vector<int>>& tokens) {
  const int d = cfg_.embed_dim;
  const int layers = cfg_.layers;
  const int vocab = token_embedding_.value.n();
  Tensor out(static_cast<int>(tokens.size()), cfg_.output_dim());
  cache_.assign(tokens.size(), {});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    const int len = static_cast<int>(tok.size());
    if (len == 0 || len > cfg_.max_tokens) {
      throw ValidationError("token sequence length out of range");
    }
    SampleCache& c = cache_[i];
    c.tokens = tok;
    c.h.assign(layers + 1, std::vector<real>(static_cast<std::size_t>(len) * d));
    c.a.assign(layers, std::vector<real>(static_cast<std::size_t>(len) * d));
    c.m.assign(layers, std::vector<real>(d));
    for (int l = 0; l < len; ++l) {
      if (tok[l] < 0 || tok[l] >= vocab) throw ValidationError("bad token id");
      const real* te = token_embedding_.value.data() + static_cast<std::size_t>(tok[l]) * d;
      const real* pe = position_embedding_.value.data() + static_cast<std::size_t>(l) * d;
      real* h0 = c.h[0].data() + static_cast<std::size_t>(l) * d;
      for (int j = 0; j < d; ++j) h0[j] = te[j] + pe[j];
    }
    for (int k = 0; k < layers; ++k) {
      const real* hin = c.h[k].data();
      real* m = c.m[k].data();
      column_mean(hin, len, d, m);
      std::vector<real> ctx(mix_b_[k].value.data(), mix_b_[k].value.data() + d);
      accumulate_product(m, 1, d, mix_u_[k].value.data(), d, ctx.data());
      real* a = c.a[k].data();
      for (int l = 0; l < len; ++l) std::copy(ctx.begin(), ctx.end(), a + static_cast<std::size_t>(l) * d);
      accumulate_product(hin, len, d, mix_w_[k].value.data(), d, a);
      real* hout = c.h[k + 1].data();
      const std::size_t n = static_cast<std::size_t>(len) * d;
      for (std::size_t q = 0; q < n; ++q) hout[q] = hin[q] + silu(a[q]);
      column_mean(hout, len, d, out.data() + i * cfg_.output_dim() + k * d);
    }
  }
  return out;
}

void TextEncoder::backward(const Tensor& g_out) {
  const int d = cfg_.embed_dim;
  const int layers = cfg_.layers;
  if (g_out.n() != static_cast<int>(cache_.size()) ||
      static_cast<int>(g_out.shape().sample()) != cfg_.output_dim()) {
    throw DimensionError("text encoder backward: gradient shape " +
                         g_out.shape().str());
  }
  const bool trainable = token_embedding_.trainable;
  if (!trainable) return;
  for (std::size_t i = 0; i < cache_.size(); ++i) {
    const SampleCache& c = cache_[i];
    const int len = static_cast<int>(c.tokens.size());
    const std::size_t n = static_cast<std::size_t>(len) * d;
    const real inv_len = real(1) / static_cast<real>(len);
    std::vector<real> gh(n, real(0)), ga(n), ga_sum(d), gm(d);
    for (int k = layers - 1; k >= 0; --k) {
      const real* gp = g_out.data() + i * cfg_.output_dim() + k * d;
      for (int l = 0; l < len; ++l) {
        for (int j = 0; j < d; ++j) gh[static_cast<std::size_t>(l) * d + j] += gp[j] * inv_len;
      }
      const real* a = c.a[k].data();
      for (std::size_t q = 0; q < n; ++q) ga[q] = gh[q] * silu_grad(a[q]);
      const real* hin = c.h[k].data();
      std::fill(ga_sum.begin(), ga_sum.end(), real(0));
      for (int l = 0; l < len; ++l) {
        for (int j = 0; j < d; ++j) ga_sum[j] += ga[static_cast<std::size_t>(l) * d + j];
      }
      accumulate_transposed_left(hin, ga.data(), len, d, mix_w_[k].grad.data());
      accumulate_transposed_left(c.m[k].data(), ga_sum.data(), 1, d, mix_u_[k].grad.data());
      real* gb = mix_b_[k].grad.data();
      for (int j = 0; j < d; ++j) gb[j] += ga_sum[j];
      std::fill(gm.begin(), gm.end(), real(0));
      accumulate_transposed_right(ga_sum.data(), 1, d, mix_u_[k].value.data(), gm.data());
      accumulate_transposed_right(ga.data(), len, d, mix_w_[k].value.data(), gh.data());
      for (int l = 0; l < len; ++l) {
        for (int j = 0; j < d; ++j) gh[static_cast<std::size_t>(l) * d + j] += gm[j] * inv_len;
      }
    }
    real* gtok = token_embedding_.grad.data();
    real* gpos = position_embedding_.grad.data();
    for (int l = 0; l < len; ++l) {
      const real* g = gh.data() + static_cast<std::size_t>(l) * d;
      real* gt = gtok + static_cast<std::size_t>(c.tokens[l]) * d;
      real* gq = gpos + static_cast<std::size_t>(l) * d;
      for (int j = 0; j < d; ++j) {
        gt[j] += g[j];
        gq[j] += g[j];
      }
    }
  }
}

void TextEncoder::collect(nn::ParamRefs& out) {
  out.push_back(&token_embedding_);
  out.push_back(&position_embedding_);
  for (int k = 0; k < cfg_.layers; ++k) {
    out.push_back(&mix_w_[k]);
    out.push_back(&mix_u_[k]);
    out.push_back(&mix_b_[k]);
  }
}

}  // namespace scenegen
