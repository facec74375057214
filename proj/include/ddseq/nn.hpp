#pragma once

// Parameter storage and transformer blocks built on the autodiff tape.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddseq/autodiff.hpp"
#include "ddseq/rng.hpp"

namespace ddseq::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

enum class Mode { Train, Eval };

/// Owns parameters in insertion order; addresses stay stable.
template <typename S>
class ParamStore {
 public:
  Parameter<S>& add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    for (const auto& p : params_)
      if (p->name == name) throw std::invalid_argument("duplicate parameter " + name);
    auto p = std::make_unique<Parameter<S>>();
    p->name = std::move(name);
    p->value.setZero(rows, cols);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>& normal(std::string name, Eigen::Index rows, Eigen::Index cols, double stddev, std::uint64_t seed) {
    auto& p = add(std::move(name), rows, cols);
    CounterRng rng(seed, Stream::Init, params_.size());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(stddev * rng.normal());
    return p;
  }

  Parameter<S>& constant(std::string name, Eigen::Index rows, Eigen::Index cols, S value) {
    auto& p = add(std::move(name), rows, cols);
    p.value.setConstant(value);
    return p;
  }

  Parameter<S>* find(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<S>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p->trainable) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
};

template <typename S>
Var<S> linear(Tape<S>& t, Var<S> x, Parameter<S>& w, Parameter<S>& b) {
  return ad::add_row(ad::matmul(x, t.param(w)), t.param(b));
}

template <typename S>
Var<S> dropout(Var<S> x, double rate, Mode mode, std::uint64_t seed, std::uint64_t site) {
  if (mode != Mode::Train || rate <= 0.0) return x;
  CounterRng rng(seed, Stream::Dropout, site);
  Matrix<S> m(x.rows(), x.cols());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(rate) ? S(0) : keep_scale;
  return ad::mul_const(x, std::move(m));
}

/// Pre-LN self-attention block: x + Attn(LN(x)), then x + FFN(LN(x)).
template <typename S>
struct TransformerBlock {
  Parameter<S>*ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  Parameter<S>*ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  int heads = 1;
  bool rotary = true;

  static TransformerBlock create(ParamStore<S>& ps, const std::string& prefix, int d, int ffn, int heads, bool rotary,
                                 std::uint64_t seed) {
    const double sd = 0.02;
    TransformerBlock b;
    b.heads = heads;
    b.rotary = rotary;
    b.ln1_g = &ps.constant(prefix + ".ln1.gain", 1, d, S(1));
    b.ln1_b = &ps.constant(prefix + ".ln1.bias", 1, d, S(0));
    b.wq = &ps.normal(prefix + ".attn.wq", d, d, sd, seed);
    b.bq = &ps.constant(prefix + ".attn.bq", 1, d, S(0));
    b.wk = &ps.normal(prefix + ".attn.wk", d, d, sd, seed);
    b.bk = &ps.constant(prefix + ".attn.bk", 1, d, S(0));
    b.wv = &ps.normal(prefix + ".attn.wv", d, d, sd, seed);
    b.bv = &ps.constant(prefix + ".attn.bv", 1, d, S(0));
    b.wo = &ps.normal(prefix + ".attn.wo", d, d, sd, seed);
    b.bo = &ps.constant(prefix + ".attn.bo", 1, d, S(0));
    b.ln2_g = &ps.constant(prefix + ".ln2.gain", 1, d, S(1));
    b.ln2_b = &ps.constant(prefix + ".ln2.bias", 1, d, S(0));
    b.w1 = &ps.normal(prefix + ".ffn.w1", d, ffn, sd, seed);
    b.b1 = &ps.constant(prefix + ".ffn.b1", 1, ffn, S(0));
    b.w2 = &ps.normal(prefix + ".ffn.w2", ffn, d, sd, seed);
    b.b2 = &ps.constant(prefix + ".ffn.b2", 1, d, S(0));
    return b;
  }

  static TransformerBlock bind(ParamStore<S>& ps, const std::string& prefix, int heads, bool rotary) {
    auto get = [&](const std::string& n) {
      auto* p = ps.find(prefix + n);
      if (!p) throw std::invalid_argument("missing parameter " + prefix + n);
      return p;
    };
    TransformerBlock b;
    b.heads = heads;
    b.rotary = rotary;
    b.ln1_g = get(".ln1.gain");
    b.ln1_b = get(".ln1.bias");
    b.wq = get(".attn.wq");
    b.bq = get(".attn.bq");
    b.wk = get(".attn.wk");
    b.bk = get(".attn.bk");
    b.wv = get(".attn.wv");
    b.bv = get(".attn.bv");
    b.wo = get(".attn.wo");
    b.bo = get(".attn.bo");
    b.ln2_g = get(".ln2.gain");
    b.ln2_b = get(".ln2.bias");
    b.w1 = get(".ffn.w1");
    b.b1 = get(".ffn.b1");
    b.w2 = get(".ffn.w2");
    b.b2 = get(".ffn.b2");
    return b;
  }

  Var<S> forward(Tape<S>& t, Var<S> x, std::span<const int> positions, const std::vector<bool>& key_valid,
                 double drop, Mode mode, std::uint64_t seed, std::uint64_t site) const {
    auto a = ad::layer_norm(x, t.param(*ln1_g), t.param(*ln1_b));
    auto q = linear(t, a, *wq, *bq);
    auto k = linear(t, a, *wk, *bk);
    auto v = linear(t, a, *wv, *bv);
    if (rotary) {
      q = ad::rotary(q, heads, positions);
      k = ad::rotary(k, heads, positions);
    }
    auto o = linear(t, ad::multi_head_attention(q, k, v, heads, key_valid), *wo, *bo);
    x = ad::add(x, dropout(o, drop, mode, seed, site));
    auto f = ad::layer_norm(x, t.param(*ln2_g), t.param(*ln2_b));
    f = linear(t, ad::gelu(linear(t, f, *w1, *b1)), *w2, *b2);
    return ad::add(x, dropout(f, drop, mode, seed, site + 1));
  }
};

/// Cross-attention from sequence states to conditioner states followed by a
/// bottleneck FFN, each on a residual branch whose output projection starts
/// at zero.
template <typename S>
struct CrossAttentionAdapter {
  Parameter<S>*ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  Parameter<S>*ln2_g, *ln2_b, *w_down, *b_down, *w_up, *b_up;
  int heads = 1;

  static CrossAttentionAdapter create(ParamStore<S>& ps, int d, int cond_dim, int bottleneck, int heads,
                                      std::uint64_t seed) {
    const double sd = 0.02;
    CrossAttentionAdapter a;
    a.heads = heads;
    a.ln1_g = &ps.constant("adapter.ln1.gain", 1, d, S(1));
    a.ln1_b = &ps.constant("adapter.ln1.bias", 1, d, S(0));
    a.wq = &ps.normal("adapter.attn.wq", d, d, sd, seed);
    a.bq = &ps.constant("adapter.attn.bq", 1, d, S(0));
    a.wk = &ps.normal("adapter.attn.wk", cond_dim, d, sd, seed);
    a.bk = &ps.constant("adapter.attn.bk", 1, d, S(0));
    a.wv = &ps.normal("adapter.attn.wv", cond_dim, d, sd, seed);
    a.bv = &ps.constant("adapter.attn.bv", 1, d, S(0));
    a.wo = &ps.constant("adapter.attn.wo", d, d, S(0));
    a.bo = &ps.constant("adapter.attn.bo", 1, d, S(0));
    a.ln2_g = &ps.constant("adapter.ln2.gain", 1, d, S(1));
    a.ln2_b = &ps.constant("adapter.ln2.bias", 1, d, S(0));
    a.w_down = &ps.normal("adapter.ffn.w_down", d, bottleneck, sd, seed);
    a.b_down = &ps.constant("adapter.ffn.b_down", 1, bottleneck, S(0));
    a.w_up = &ps.constant("adapter.ffn.w_up", bottleneck, d, S(0));
    a.b_up = &ps.constant("adapter.ffn.b_up", 1, d, S(0));
    return a;
  }

  static CrossAttentionAdapter bind(ParamStore<S>& ps, int heads) {
    auto get = [&](const std::string& n) {
      auto* p = ps.find("adapter" + n);
      if (!p) throw std::invalid_argument("missing parameter adapter" + n);
      return p;
    };
    CrossAttentionAdapter a;
    a.heads = heads;
    a.ln1_g = get(".ln1.gain");
    a.ln1_b = get(".ln1.bias");
    a.wq = get(".attn.wq");
    a.bq = get(".attn.bq");
    a.wk = get(".attn.wk");
    a.bk = get(".attn.bk");
    a.wv = get(".attn.wv");
    a.bv = get(".attn.bv");
    a.wo = get(".attn.wo");
    a.bo = get(".attn.bo");
    a.ln2_g = get(".ln2.gain");
    a.ln2_b = get(".ln2.bias");
    a.w_down = get(".ffn.w_down");
    a.b_down = get(".ffn.b_down");
    a.w_up = get(".ffn.w_up");
    a.b_up = get(".ffn.b_up");
    return a;
  }

  Var<S> forward(Tape<S>& t, Var<S> x, std::span<const int> positions, Var<S> cond, std::span<const int> cond_positions,
                 const std::vector<bool>& cond_valid) const {
    auto a = ad::layer_norm(x, t.param(*ln1_g), t.param(*ln1_b));
    auto q = ad::rotary(linear(t, a, *wq, *bq), heads, positions);
    auto k = ad::rotary(linear(t, cond, *wk, *bk), heads, cond_positions);
    auto v = linear(t, cond, *wv, *bv);
    x = ad::add(x, linear(t, ad::multi_head_attention(q, k, v, heads, cond_valid), *wo, *bo));
    auto f = ad::layer_norm(x, t.param(*ln2_g), t.param(*ln2_b));
    f = linear(t, ad::gelu(linear(t, f, *w_down, *b_down)), *w_up, *b_up);
    return ad::add(x, f);
  }
};

}  // namespace ddseq::nn
