#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ddseq/autodiff.hpp"
#include "ddseq/diffusion.hpp"
#include "ddseq/nn.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq {

using nn::Mode;

enum class PositionalScheme { Rotary, LearnedAbsolute };

inline std::string_view to_string(PositionalScheme p) { return p == PositionalScheme::Rotary ? "rotary" : "learned"; }
inline PositionalScheme parse_positional(std::string_view s) {
  if (s == "rotary") return PositionalScheme::Rotary;
  if (s == "learned") return PositionalScheme::LearnedAbsolute;
  throw std::invalid_argument("unknown positional scheme '" + std::string(s) + "'");
}

struct DenoiserConfig {
  int num_layers = 4;
  int num_heads = 4;
  int embed_dim = 128;
  int ffn_dim = 512;
  int max_len = 256;
  double dropout_rate = 0.0;
  PositionalScheme positional = PositionalScheme::Rotary;
  bool time_conditioning = false;
  /// Rows of the timestep table when time_conditioning is on.
  int num_timesteps = 500;

  void validate() const {
    if (num_layers < 1 || num_heads < 1 || embed_dim < 1 || ffn_dim < 1 || max_len < 1)
      throw std::invalid_argument("model dimensions must be positive");
    if (embed_dim % num_heads != 0) throw std::invalid_argument("embed_dim must be divisible by num_heads");
    if (positional == PositionalScheme::Rotary && (embed_dim / num_heads) % 2 != 0)
      throw std::invalid_argument("rotary encoding needs an even head width");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must be in [0,1)");
    if (time_conditioning && num_timesteps < 1) throw std::invalid_argument("num_timesteps must be positive");
  }
};

struct AdapterConfig {
  int cond_dim = 0;
  /// 0 selects embed_dim / 2.
  int bottleneck = 0;
};

/// Conditioner states c (L_c x d_c) plus which rows may be attended to.
template <typename S>
struct ConditionEmbedding {
  ad::Matrix<S> states;
  std::vector<bool> valid;

  void validate(int cond_dim) const {
    if (states.rows() < 1) throw std::invalid_argument("condition needs at least one row");
    if (states.cols() != cond_dim) throw std::invalid_argument("condition width differs from adapter cond_dim");
    if (!valid.empty() && valid.size() != static_cast<std::size_t>(states.rows()))
      throw std::invalid_argument("condition validity mask size");
    if (!states.allFinite()) throw std::invalid_argument("condition contains non-finite values");
  }
};

/// Bidirectional transformer p_theta(x_0 | x_t) with tied input/output
/// embeddings and an optional cross-attention adapter.
template <typename S>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, int vocab_size, std::uint64_t seed) : cfg_(cfg), vocab_size_(vocab_size), seed_(seed) {
    cfg_.validate();
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be positive");
    const int d = cfg_.embed_dim;
    tok_emb_ = &params_.normal("embed.tokens", vocab_size, d, 0.02, seed);
    out_bias_ = &params_.constant("head.bias", 1, vocab_size, S(0));
    if (cfg_.positional == PositionalScheme::LearnedAbsolute)
      pos_emb_ = &params_.normal("embed.positions", cfg_.max_len, d, 0.02, seed);
    if (cfg_.time_conditioning) time_emb_ = &params_.normal("embed.time", cfg_.num_timesteps + 1, d, 0.02, seed);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      blocks_.push_back(nn::TransformerBlock<S>::create(params_, "layers." + std::to_string(l), d, cfg_.ffn_dim,
                                                         cfg_.num_heads,
                                                         cfg_.positional == PositionalScheme::Rotary, seed));
    }
    lnf_g_ = &params_.constant("final_ln.gain", 1, d, S(1));
    lnf_b_ = &params_.constant("final_ln.bias", 1, d, S(0));
  }

  Denoiser(Denoiser&&) noexcept = default;
  Denoiser& operator=(Denoiser&&) noexcept = default;
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  /// Deep copy with identical parameter values and trainable flags.
  Denoiser clone() const {
    Denoiser out(cfg_, vocab_size_, seed_);
    if (adapter_) out.attach_adapter(adapter_cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params_[i].value = params_[i].value;
      out.params_[i].trainable = params_[i].trainable;
    }
    return out;
  }

  const DenoiserConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  nn::ParamStore<S>& params() { return params_; }
  const nn::ParamStore<S>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }
  std::size_t trainable_count() const { return params_.count(true); }

  bool has_adapter() const { return adapter_.has_value(); }
  const AdapterConfig& adapter_config() const { return adapter_cfg_; }

  /// Inserts the adapter after the last block and freezes everything else.
  void attach_adapter(AdapterConfig acfg) {
    if (adapter_) throw std::logic_error("adapter already attached");
    if (acfg.cond_dim < 1) throw std::invalid_argument("adapter cond_dim must be positive");
    if (acfg.bottleneck == 0) acfg.bottleneck = std::max(1, cfg_.embed_dim / 2);
    for (auto& p : params_) p->trainable = false;
    adapter_cfg_ = acfg;
    adapter_ = nn::CrossAttentionAdapter<S>::create(params_, cfg_.embed_dim, acfg.cond_dim, acfg.bottleneck,
                                                    cfg_.num_heads, derive_seed(seed_, 0xADA));
  }

  /// Final hidden states (after the last layer norm), L x d.
  ad::Var<S> hidden(ad::Tape<S>& t, std::span<const TokenId> ids, const ConditionEmbedding<S>* cond = nullptr,
                    Mode mode = Mode::Eval, int timestep = 0, std::uint64_t dropout_seed = 0) const {
    const auto L = static_cast<int>(ids.size());
    if (L < 1) throw std::invalid_argument("empty input");
    if (L > cfg_.max_len)
      throw std::invalid_argument("sequence length " + std::to_string(L) + " exceeds max_len " + std::to_string(cfg_.max_len));
    std::vector<int> positions(static_cast<std::size_t>(L));
    std::vector<bool> key_valid(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
      if (ids[i] < 0 || ids[i] >= vocab_size_) throw std::invalid_argument("token id outside vocabulary");
      positions[i] = i;
      key_valid[i] = true;
    }
    auto x = ad::gather_rows(t.param(*tok_emb_), ids);
    if (pos_emb_) {
      std::vector<TokenId> pos(positions.begin(), positions.end());
      x = ad::add(x, ad::gather_rows(t.param(*pos_emb_), std::span<const TokenId>(pos)));
    }
    if (time_emb_) {
      if (timestep < 0 || timestep > cfg_.num_timesteps) throw std::out_of_range("timestep outside the time table");
      const TokenId row = timestep;
      x = ad::add_row(x, ad::gather_rows(t.param(*time_emb_), std::span<const TokenId>(&row, 1)));
    }
    for (std::size_t l = 0; l < blocks_.size(); ++l)
      x = blocks_[l].forward(t, x, positions, key_valid, cfg_.dropout_rate, mode, dropout_seed, 2 * l);
    if (adapter_ && cond) {
      cond->validate(adapter_cfg_.cond_dim);
      std::vector<int> cpos(static_cast<std::size_t>(cond->states.rows()));
      for (std::size_t j = 0; j < cpos.size(); ++j) cpos[j] = static_cast<int>(j);
      x = adapter_->forward(t, x, positions, t.constant(cond->states), cpos, cond->valid);
    }
    return ad::layer_norm(x, t.param(*lnf_g_), t.param(*lnf_b_));
  }

  /// Per-position logits over the full vocabulary, L x |V|.
  ad::Var<S> logits(ad::Tape<S>& t, std::span<const TokenId> ids, const ConditionEmbedding<S>* cond = nullptr,
                    Mode mode = Mode::Eval, int timestep = 0, std::uint64_t dropout_seed = 0) const {
    auto h = hidden(t, ids, cond, mode, timestep, dropout_seed);
    return ad::add_row(ad::matmul_nt(h, t.param(*tok_emb_)), t.param(*out_bias_));
  }

  /// Inference-only logits.
  ad::Matrix<S> forward(std::span<const TokenId> ids, const ConditionEmbedding<S>* cond = nullptr, int timestep = 0) const {
    ad::Tape<S> t(false);
    return logits(t, ids, cond, Mode::Eval, timestep).value();
  }

  ad::Matrix<S> forward(const NoisedSequence& xt, const ConditionEmbedding<S>* cond = nullptr) const {
    return forward(std::span<const TokenId>(xt.ids), cond, xt.t);
  }

  /// Representation h(x) of a clean sequence at t = 0, L x d.
  ad::Matrix<S> embed(const TokenSequence& x, const Vocab& vocab) const {
    for (TokenId id : x.ids)
      if (id == vocab.mask_id()) throw std::invalid_argument("embed requires a clean sequence without mask tokens");
    ad::Tape<S> t(false);
    return hidden(t, std::span<const TokenId>(x.ids), nullptr, Mode::Eval, 0).value();
  }

 private:
  DenoiserConfig cfg_;
  int vocab_size_ = 0;
  std::uint64_t seed_ = 0;
  nn::ParamStore<S> params_;
  ad::Parameter<S>* tok_emb_ = nullptr;
  ad::Parameter<S>* out_bias_ = nullptr;
  ad::Parameter<S>* pos_emb_ = nullptr;
  ad::Parameter<S>* time_emb_ = nullptr;
  ad::Parameter<S>* lnf_g_ = nullptr;
  ad::Parameter<S>* lnf_b_ = nullptr;
  std::vector<nn::TransformerBlock<S>> blocks_;
  std::optional<nn::CrossAttentionAdapter<S>> adapter_;
  AdapterConfig adapter_cfg_;
};

/// Row-wise log-softmax over residue columns; other columns are -inf.
template <typename S>
ad::Matrix<double> residue_log_probs(const ad::Matrix<S>& logits, const Vocab& vocab, double temperature = 1.0) {
  ad::Matrix<double> out(logits.rows(), logits.cols());
  const auto res = vocab.residue_ids();
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = -INFINITY;
    for (TokenId c : res) mx = std::max(mx, static_cast<double>(logits(r, c)) / temperature);
    double z = 0;
    for (TokenId c : res) z += std::exp(static_cast<double>(logits(r, c)) / temperature - mx);
    const double lse = mx + std::log(z);
    out.row(r).setConstant(-INFINITY);
    for (TokenId c : res) out(r, c) = static_cast<double>(logits(r, c)) / temperature - lse;
  }
  return out;
}

}  // namespace ddseq
