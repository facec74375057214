#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices. A Tape
// records values and, when gradients are wanted, a backward closure per node.
// Nodes whose inputs need no gradient record nothing, which is how frozen
// parameters cost no backward work.

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddseq::ad {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Matrix<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename S>
class Tape {
 public:
  /// With record=false no gradients are tracked at all (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<S> constant(Matrix<S> v) { return push(std::move(v), false); }

  /// Leaf whose gradient is wanted, e.g. a relaxed one-hot input.
  Var<S> input(Matrix<S> v) { return push(std::move(v), record_); }

  Var<S> param(Parameter<S>& p) {
    Var<S> v = push(p.value, record_ && p.trainable);
    nodes_[v.id].param = &p;
    return v;
  }

  const Matrix<S>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient of a node after backward(); empty if none reached it.
  const Matrix<S>& grad(Var<S> v) const { return nodes_[v.id].grad; }

  /// Accumulator for node id, allocated on first use.
  Matrix<S>& grad_ref(int id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  Var<S> push(Matrix<S> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad && record_, {}, nullptr});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(Var<S> v, std::function<void()> fn) {
    if (nodes_[v.id].requires_grad) nodes_[v.id].backward = std::move(fn);
  }

  /// Backpropagates from a 1x1 node; parameter gradients are accumulated
  /// into Parameter::grad scaled by `seed`.
  void backward(Var<S> out, S seed = S(1)) {
    if (out.value().size() != 1) throw std::invalid_argument("backward needs a scalar output");
    if (!requires_grad(out.id)) return;
    grad_ref(out.id)(0, 0) += seed;
    for (int id = out.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.param) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter<S>* param = nullptr;
  };
  std::deque<Node> nodes_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  auto& t = *a.tape;
  Var<S> out = t.push(a.value() * b.value(), a.requires_grad() || b.requires_grad());
  t.set_backward(out, [&t, a, b, out] {
    const auto& g = t.grad(out);
    if (a.requires_grad()) t.grad_ref(a.id).noalias() += g * b.value().transpose();
    if (b.requires_grad()) t.grad_ref(b.id).noalias() += a.value().transpose() * g;
  });
  return out;
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  auto& t = *a.tape;
  Var<S> out = t.push(a.value() * b.value().transpose(), a.requires_grad() || b.requires_grad());
  t.set_backward(out, [&t, a, b, out] {
    const auto& g = t.grad(out);
    if (a.requires_grad()) t.grad_ref(a.id).noalias() += g * b.value();
    if (b.requires_grad()) t.grad_ref(b.id).noalias() += g.transpose() * a.value();
  });
  return out;
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  auto& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  Var<S> out = t.push(a.value() + b.value(), a.requires_grad() || b.requires_grad());
  t.set_backward(out, [&t, a, b, out] {
    const auto& g = t.grad(out);
    if (a.requires_grad()) t.grad_ref(a.id) += g;
    if (b.requires_grad()) t.grad_ref(b.id) += g;
  });
  return out;
}

/// x + 1*bias, bias is 1 x cols.
template <typename S>
Var<S> add_row(Var<S> x, Var<S> bias) {
  auto& t = *x.tape;
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw std::invalid_argument("add_row: bias shape mismatch");
  Matrix<S> v = x.value();
  v.rowwise() += bias.value().row(0);
  Var<S> out = t.push(std::move(v), x.requires_grad() || bias.requires_grad());
  t.set_backward(out, [&t, x, bias, out] {
    const auto& g = t.grad(out);
    if (x.requires_grad()) t.grad_ref(x.id) += g;
    if (bias.requires_grad()) t.grad_ref(bias.id) += g.colwise().sum();
  });
  return out;
}

template <typename S>
Var<S> scale(Var<S> x, S s) {
  auto& t = *x.tape;
  Var<S> out = t.push(x.value() * s, x.requires_grad());
  t.set_backward(out, [&t, x, out, s] { t.grad_ref(x.id) += t.grad(out) * s; });
  return out;
}

/// Elementwise product with a constant matrix (dropout masks).
template <typename S>
Var<S> mul_const(Var<S> x, Matrix<S> m) {
  auto& t = *x.tape;
  Var<S> out = t.push(x.value().cwiseProduct(m), x.requires_grad());
  t.set_backward(out, [&t, x, out, m = std::move(m)] { t.grad_ref(x.id) += t.grad(out).cwiseProduct(m); });
  return out;
}

/// Rows of `table` selected by ids (embedding lookup).
template <typename S>
Var<S> gather_rows(Var<S> table, std::span<const std::int32_t> ids) {
  auto& t = *table.tape;
  Matrix<S> v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  Var<S> out = t.push(std::move(v), table.requires_grad());
  t.set_backward(out, [&t, table, out, idx = std::vector<std::int32_t>(ids.begin(), ids.end())] {
    const auto& g = t.grad(out);
    auto& gt = t.grad_ref(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
  return out;
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  auto& t = *x.tape;
  const auto n = x.cols();
  const auto rows = x.rows();
  Matrix<S> xhat(rows, n);
  std::vector<S> inv_std(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const S mean = row.mean();
    const S var = (row.array() - mean).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std[r];
  }
  Matrix<S> y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Var<S> out = t.push(std::move(y), rg);
  t.set_backward(out, [&t, x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const auto& g = t.grad(out);
    if (gain.requires_grad()) t.grad_ref(gain.id) += g.cwiseProduct(xhat).colwise().sum();
    if (bias.requires_grad()) t.grad_ref(bias.id) += g.colwise().sum();
    if (x.requires_grad()) {
      auto& gx = t.grad_ref(x.id);
      const S n_inv = S(1) / static_cast<S>(xhat.cols());
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        RowVector<S> dxhat = g.row(r).cwiseProduct(gain.value().row(0));
        const S m1 = dxhat.sum() * n_inv;
        const S m2 = dxhat.cwiseProduct(xhat.row(r)).sum() * n_inv;
        gx.row(r).array() += inv_std[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
      }
    }
  });
  return out;
}

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
template <typename S>
Var<S> gelu(Var<S> x) {
  auto& t = *x.tape;
  const S inv_sqrt2 = S(0.70710678118654752440);
  // Eigen's packet erf: a scalar libm erff inside AVX code stalls on SSE transitions.
  const auto v = x.value().array();
  Matrix<S> y = (S(0.5) * v * (S(1) + (v * inv_sqrt2).erf())).matrix();
  Var<S> out = t.push(std::move(y), x.requires_grad());
  t.set_backward(out, [&t, x, out, inv_sqrt2] {
    const S inv_sqrt2pi = S(0.39894228040143267794);
    const auto v = x.value().array();
    Matrix<S> d = (S(0.5) * (S(1) + (v * inv_sqrt2).erf()) + v * inv_sqrt2pi * (S(-0.5) * v * v).exp()).matrix();
    t.grad_ref(x.id) += t.grad(out).cwiseProduct(d);
  });
  return out;
}

/// Rotary position embedding applied head by head to adjacent column pairs.
/// positions[i] is the absolute position of row i.
template <typename S>
Var<S> rotary(Var<S> x, int num_heads, std::span<const int> positions, S base = S(10000)) {
  auto& t = *x.tape;
  const auto d = x.cols();
  if (d % num_heads != 0) throw std::invalid_argument("rotary: width not divisible by heads");
  const auto hd = d / num_heads;
  if (hd % 2 != 0) throw std::invalid_argument("rotary: head width must be even");
  if (static_cast<Eigen::Index>(positions.size()) != x.rows()) throw std::invalid_argument("rotary: positions size");
  Matrix<S> cosv(x.rows(), hd / 2), sinv(x.rows(), hd / 2);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index j = 0; j < hd / 2; ++j) {
      const S freq = std::pow(base, -S(2 * j) / S(hd));
      const S ang = S(positions[r]) * freq;
      cosv(r, j) = std::cos(ang);
      sinv(r, j) = std::sin(ang);
    }
  }
  auto apply = [num_heads, hd](const Matrix<S>& in, const Matrix<S>& c, const Matrix<S>& s, S sign) {
    Matrix<S> o(in.rows(), in.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      for (int h = 0; h < num_heads; ++h) {
        for (Eigen::Index j = 0; j < hd / 2; ++j) {
          const auto c0 = h * hd + 2 * j;
          const S a = in(r, c0), b = in(r, c0 + 1);
          o(r, c0) = a * c(r, j) - sign * b * s(r, j);
          o(r, c0 + 1) = sign * a * s(r, j) + b * c(r, j);
        }
      }
    }
    return o;
  };
  Var<S> out = t.push(apply(x.value(), cosv, sinv, S(1)), x.requires_grad());
  t.set_backward(out, [&t, x, out, apply, cosv = std::move(cosv), sinv = std::move(sinv)] {
    t.grad_ref(x.id) += apply(t.grad(out), cosv, sinv, S(-1));
  });
  return out;
}

/// Scaled dot-product attention over num_heads column blocks. key_valid, if
/// non-empty, excludes keys from every query's softmax. No causal mask.
template <typename S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, int num_heads, const std::vector<bool>& key_valid = {}) {
  auto& t = *q.tape;
  const auto lq = q.rows(), lk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != lk) throw std::invalid_argument("attention: shape mismatch");
  const auto hd = d / num_heads;
  const S sc = S(1) / std::sqrt(static_cast<S>(hd));
  std::vector<Matrix<S>> probs(static_cast<std::size_t>(num_heads));
  Matrix<S> o(lq, d);
  for (int h = 0; h < num_heads; ++h) {
    Matrix<S> s = (q.value().middleCols(h * hd, hd) * k.value().middleCols(h * hd, hd).transpose()) * sc;
    for (Eigen::Index r = 0; r < lq; ++r) {
      S mx = -std::numeric_limits<S>::infinity();
      for (Eigen::Index c = 0; c < lk; ++c) {
        if (!key_valid.empty() && !key_valid[c]) s(r, c) = -std::numeric_limits<S>::infinity();
        mx = std::max(mx, s(r, c));
      }
      S z = 0;
      for (Eigen::Index c = 0; c < lk; ++c) {
        s(r, c) = std::isinf(s(r, c)) ? S(0) : std::exp(s(r, c) - mx);
        z += s(r, c);
      }
      s.row(r) /= z;
    }
    o.middleCols(h * hd, hd).noalias() = s * v.value().middleCols(h * hd, hd);
    probs[h] = std::move(s);
  }
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  Var<S> out = t.push(std::move(o), rg);
  t.set_backward(out, [&t, q, k, v, out, num_heads, hd, sc, probs = std::move(probs)] {
    const auto& g = t.grad(out);
    for (int h = 0; h < num_heads; ++h) {
      const auto& p = probs[h];
      auto go = g.middleCols(h * hd, hd);
      if (v.requires_grad()) t.grad_ref(v.id).middleCols(h * hd, hd).noalias() += p.transpose() * go;
      if (!q.requires_grad() && !k.requires_grad()) continue;
      Matrix<S> dp = go * v.value().middleCols(h * hd, hd).transpose();
      Matrix<S> ds = p.cwiseProduct(dp);
      const auto rowdot = ds.rowwise().sum();
      ds -= p.cwiseProduct(rowdot.replicate(1, p.cols()));
      ds *= sc;
      if (q.requires_grad()) t.grad_ref(q.id).middleCols(h * hd, hd).noalias() += ds * k.value().middleCols(h * hd, hd);
      if (k.requires_grad())
        t.grad_ref(k.id).middleCols(h * hd, hd).noalias() += ds.transpose() * q.value().middleCols(h * hd, hd);
    }
  });
  return out;
}

/// Row-wise log-softmax restricted to `allowed` columns; other columns come
/// out as -inf and receive no gradient.
template <typename S>
Var<S> masked_log_softmax(Var<S> x, const std::vector<bool>& allowed) {
  auto& t = *x.tape;
  if (static_cast<Eigen::Index>(allowed.size()) != x.cols()) throw std::invalid_argument("log_softmax: mask width");
  Matrix<S> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed[c]) mx = std::max(mx, x.value()(r, c));
    S z = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed[c]) z += std::exp(x.value()(r, c) - mx);
    const S lse = mx + std::log(z);
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      y(r, c) = allowed[c] ? x.value()(r, c) - lse : -std::numeric_limits<S>::infinity();
  }
  Var<S> out = t.push(std::move(y), x.requires_grad());
  t.set_backward(out, [&t, x, out, allowed] {
    const auto& g = t.grad(out);
    const auto& y = t.value(out.id);
    auto& gx = t.grad_ref(x.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      S gsum = 0;
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        if (allowed[c]) gsum += g(r, c);
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        if (allowed[c]) gx(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
    }
  });
  return out;
}

/// sum_i weights[i] * x(i, targets[i]); rows with target < 0 are skipped.
template <typename S>
Var<S> pick_sum(Var<S> x, std::span<const std::int32_t> targets, std::span<const S> weights) {
  auto& t = *x.tape;
  if (static_cast<Eigen::Index>(targets.size()) != x.rows() || weights.size() != targets.size())
    throw std::invalid_argument("pick_sum: size mismatch");
  S total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] >= 0 && weights[i] != S(0)) total += weights[i] * x.value()(static_cast<Eigen::Index>(i), targets[i]);
  Matrix<S> v(1, 1);
  v(0, 0) = total;
  Var<S> out = t.push(std::move(v), x.requires_grad());
  t.set_backward(out, [&t, x, out, tg = std::vector<std::int32_t>(targets.begin(), targets.end()),
                       w = std::vector<S>(weights.begin(), weights.end())] {
    const S g = t.grad(out)(0, 0);
    auto& gx = t.grad_ref(x.id);
    for (std::size_t i = 0; i < tg.size(); ++i)
      if (tg[i] >= 0 && w[i] != S(0)) gx(static_cast<Eigen::Index>(i), tg[i]) += w[i] * g;
  });
  return out;
}

/// sum(x .* m) for a constant m.
template <typename S>
Var<S> dot_const(Var<S> x, Matrix<S> m) {
  auto& t = *x.tape;
  if (m.rows() != x.rows() || m.cols() != x.cols()) throw std::invalid_argument("dot_const: shape mismatch");
  Matrix<S> v(1, 1);
  v(0, 0) = x.value().cwiseProduct(m).sum();
  Var<S> out = t.push(std::move(v), x.requires_grad());
  t.set_backward(out, [&t, x, out, m = std::move(m)] { t.grad_ref(x.id) += t.grad(out)(0, 0) * m; });
  return out;
}

}  // namespace ddseq::ad
