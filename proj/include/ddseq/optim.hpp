#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "ddseq/nn.hpp"

namespace ddseq {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Global L2 norm of the gradients of trainable parameters.
template <typename S>
double grad_norm(const nn::ParamStore<S>& ps) {
  double sq = 0.0;
  for (const auto& p : ps) {
    if (!p->trainable || p->grad.size() == 0) continue;
    sq += p->grad.template cast<double>().squaredNorm();
  }
  return std::sqrt(sq);
}

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
template <typename S>
double clip_grad_norm(nn::ParamStore<S>& ps, double max_norm) {
  const double n = grad_norm(ps);
  if (n > max_norm && n > 0.0) {
    const S f = static_cast<S>(max_norm / (n + 1e-12));
    for (auto& p : ps)
      if (p->trainable && p->grad.size() != 0) p->grad *= f;
  }
  return n;
}

/// Adam with decoupled weight decay. Decay touches projection matrices only;
/// embeddings, biases and layer-norm gains are left alone.
template <typename S>
class AdamW {
 public:
  struct Moments {
    ad::Matrix<S> m, v;
  };

  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

  void step(nn::ParamStore<S>& ps, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : ps) {
      if (!p->trainable) continue;
      if (p->grad.size() == 0) p->zero_grad();
      auto& st = state_[p->name];
      if (st.m.size() == 0) {
        st.m.setZero(p->value.rows(), p->value.cols());
        st.v.setZero(p->value.rows(), p->value.cols());
      }
      const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
      st.m = b1 * st.m + (S(1) - b1) * p->grad;
      st.v = b2 * st.v + (S(1) - b2) * p->grad.cwiseProduct(p->grad);
      const bool decay = p->value.rows() > 1 && p->value.cols() > 1 && p->name.find("embed") == std::string::npos;
      if (decay && cfg_.weight_decay > 0.0) p->value *= static_cast<S>(1.0 - lr * cfg_.weight_decay);
      const S step = static_cast<S>(lr / bc1);
      const S inv_bc2 = static_cast<S>(1.0 / bc2);
      const S eps = static_cast<S>(cfg_.eps);
      p->value.array() -= step * st.m.array() / ((st.v.array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Linear warmup over warmup_steps, then constant.
inline double warmup_lr(double base, std::int64_t step, std::int64_t warmup_steps) {
  if (warmup_steps <= 0) return base;
  return base * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup_steps));
}

}  // namespace ddseq
