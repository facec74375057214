#pragma once

// Brute-force reference computations over tiny state spaces. Everything here
// is recomputed from the raw alpha table in long double by enumeration and
// kernel composition; nothing calls into the production diffusion kernels.

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddseq/schedule.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq::oracle {

using Real = long double;
using State = std::vector<TokenId>;

inline constexpr std::size_t kMaxSupport = 100000;

struct EnumeratedDistribution {
  std::map<State, Real> probs;

  Real total() const {
    Real s = 0;
    for (const auto& [_, p] : probs) s += p;
    return s;
  }
  Real at(const State& x) const {
    auto it = probs.find(x);
    return it == probs.end() ? Real(0) : it->second;
  }
};

/// Symbols a diffused position can take: residues, plus the mask under
/// absorbing diffusion.
inline std::vector<TokenId> diffusion_states(const Vocab& vocab, Stationary stationary) {
  std::vector<TokenId> s = vocab.residue_ids();
  if (stationary == Stationary::Absorbing) s.push_back(vocab.mask_id());
  return s;
}

namespace detail {

inline Real noise_mass(TokenId v, const Vocab& vocab, Stationary st) {
  if (st == Stationary::Absorbing) return v == vocab.mask_id() ? Real(1) : Real(0);
  return vocab.is_residue(v) ? Real(1) / vocab.num_residues() : Real(0);
}

/// Dense one-step kernel K[a][b] = q(x_t = b | x_{t-1} = a) over the full vocab.
inline std::vector<std::vector<Real>> step_kernel(int t, const NoiseSchedule& s, const Vocab& vocab) {
  const Real beta = Real(s.alpha.at(t)) / Real(s.alpha.at(t - 1));
  const auto n = static_cast<std::size_t>(vocab.size());
  std::vector<std::vector<Real>> k(n, std::vector<Real>(n, 0));
  for (TokenId a = 0; a < vocab.size(); ++a) {
    if (vocab.is_special(a)) continue;
    for (TokenId b = 0; b < vocab.size(); ++b) k[a][b] = (1 - beta) * noise_mass(b, vocab, s.stationary);
    k[a][a] += beta;
  }
  return k;
}

inline void check_support(std::size_t states, std::size_t length) {
  long double n = 1;
  for (std::size_t i = 0; i < length; ++i) n *= static_cast<long double>(states);
  if (n > kMaxSupport) throw std::length_error("enumeration support exceeds 1e5 states");
}

template <typename F>
void for_each_state(const std::vector<TokenId>& alphabet, std::size_t length, F&& f) {
  State x(length, alphabet.empty() ? 0 : alphabet.front());
  std::vector<std::size_t> digit(length, 0);
  while (true) {
    for (std::size_t i = 0; i < length; ++i) x[i] = alphabet[digit[i]];
    f(static_cast<const State&>(x));
    std::size_t i = 0;
    while (i < length && ++digit[i] == alphabet.size()) digit[i++] = 0;
    if (i == length) break;
  }
}

}  // namespace detail

/// q(x_t | x_0) for one token, obtained by composing t one-step kernels.
inline std::vector<Real> composed_marginal(TokenId x0, int t, const NoiseSchedule& s, const Vocab& vocab) {
  std::vector<Real> p(static_cast<std::size_t>(vocab.size()), 0);
  p[x0] = 1;
  for (int k = 1; k <= t; ++k) {
    auto K = detail::step_kernel(k, s, vocab);
    std::vector<Real> next(p.size(), 0);
    for (std::size_t a = 0; a < p.size(); ++a) {
      if (p[a] == 0) continue;
      for (std::size_t b = 0; b < p.size(); ++b) next[b] += p[a] * K[a][b];
    }
    p = std::move(next);
  }
  return p;
}

/// One-step kernel row q(x_t = . | x_{t-1} = a).
inline std::vector<Real> kernel_row(TokenId a, int t, const NoiseSchedule& s, const Vocab& vocab) {
  return detail::step_kernel(t, s, vocab)[a];
}

/// Per-position Bayes posterior q(x_{t-1} | x_t, x_0) over the full vocab.
inline std::vector<Real> posterior_position(TokenId xt, TokenId x0, int t, const NoiseSchedule& s, const Vocab& vocab) {
  if (t < 1 || t > s.T) throw std::out_of_range("posterior needs 1 <= t <= T");
  auto K = detail::step_kernel(t, s, vocab);
  auto prior = composed_marginal(x0, t - 1, s, vocab);
  std::vector<Real> post(prior.size(), 0);
  Real z = 0;
  for (std::size_t v = 0; v < post.size(); ++v) {
    post[v] = K[v][xt] * prior[v];
    z += post[v];
  }
  if (z <= 0) {
    throw std::domain_error("x_t = " + vocab.symbol(xt) + " is unreachable from x_0 = " + vocab.symbol(x0) +
                            " at t = " + std::to_string(t));
  }
  for (auto& p : post) p /= z;
  return post;
}

inline EnumeratedDistribution enumerate_forward(const State& x0, int t, const NoiseSchedule& s, const Vocab& vocab) {
  auto alphabet = diffusion_states(vocab, s.stationary);
  detail::check_support(alphabet.size(), x0.size());
  std::vector<std::vector<Real>> marg;
  for (TokenId a : x0) marg.push_back(composed_marginal(a, t, s, vocab));
  EnumeratedDistribution d;
  detail::for_each_state(alphabet, x0.size(), [&](const State& x) {
    Real p = 1;
    for (std::size_t i = 0; i < x.size(); ++i) p *= marg[i][x[i]];
    if (p > 0) d.probs[x] = p;
  });
  return d;
}

inline EnumeratedDistribution enumerate_posterior(const State& xt, const State& x0, int t, const NoiseSchedule& s,
                                                  const Vocab& vocab) {
  if (xt.size() != x0.size()) throw std::invalid_argument("x_t and x_0 lengths differ");
  auto alphabet = diffusion_states(vocab, s.stationary);
  detail::check_support(alphabet.size(), x0.size());
  std::vector<std::vector<Real>> post;
  for (std::size_t i = 0; i < x0.size(); ++i) post.push_back(posterior_position(xt[i], x0[i], t, s, vocab));
  EnumeratedDistribution d;
  detail::for_each_state(alphabet, x0.size(), [&](const State& x) {
    Real p = 1;
    for (std::size_t i = 0; i < x.size(); ++i) p *= post[i][x[i]];
    if (p > 0) d.probs[x] = p;
  });
  return d;
}

/// Model interface for the ELBO oracle: per-position log p_theta(x_0,i = v | x_t)
/// over the full vocabulary (rows normalized over residues).
using LogProbFn = std::function<std::vector<std::vector<double>>(const State& xt)>;

struct ElboTerms {
  /// kl[t] = E_{q(x_t|x_0)} KL[q(x_{t-1}|x_t,x_0) || p_theta(x_{t-1}|x_t)], t = 1..T
  /// (entry 0 unused). kl[1] is the reconstruction term -E log p_theta(x_0|x_1).
  std::vector<Real> kl;
  /// KL[q(x_T|x_0) || p(x_T)].
  Real prior_kl = 0;
  /// Exact -log p_theta(x_0) of the reverse chain started from q_noise.
  Real nll = 0;

  Real bound() const {
    Real b = prior_kl;
    for (std::size_t t = 1; t < kl.size(); ++t) b += kl[t];
    return b;
  }
};

namespace detail {

/// p_theta(x_{t-1} = s | x_t) per position, proportional to
/// sum_xhat q(x_t | s) q(s | xhat) p_theta(xhat | x_t).
inline std::vector<std::vector<Real>> reverse_step(const State& xt, int t, const std::vector<std::vector<double>>& logp,
                                                   const NoiseSchedule& s, const Vocab& vocab) {
  auto K = step_kernel(t, s, vocab);
  std::vector<std::vector<Real>> out;
  for (std::size_t i = 0; i < xt.size(); ++i) {
    std::vector<Real> row(static_cast<std::size_t>(vocab.size()), 0);
    Real z = 0;
    for (TokenId xhat : vocab.residue_ids()) {
      const Real w = std::exp(static_cast<Real>(logp[i][xhat]));
      if (w == 0) continue;
      auto prior = composed_marginal(xhat, t - 1, s, vocab);
      for (std::size_t v = 0; v < row.size(); ++v) row[v] += K[v][xt[i]] * prior[v] * w;
    }
    for (Real r : row) z += r;
    if (z <= 0) throw std::domain_error("reverse step has no mass at position " + std::to_string(i));
    for (auto& r : row) r /= z;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

inline ElboTerms exact_elbo_terms(const State& x0, const LogProbFn& model, const NoiseSchedule& s, const Vocab& vocab) {
  auto alphabet = diffusion_states(vocab, s.stationary);
  detail::check_support(alphabet.size(), x0.size());
  ElboTerms terms;
  terms.kl.assign(static_cast<std::size_t>(s.T) + 1, 0);

  for (int t = 1; t <= s.T; ++t) {
    auto forward = enumerate_forward(x0, t, s, vocab);
    Real expected = 0;
    for (const auto& [xt, q_xt] : forward.probs) {
      auto q_post = enumerate_posterior(xt, x0, t, s, vocab);
      auto p_rev = detail::reverse_step(xt, t, model(xt), s, vocab);
      Real kl = 0;
      for (const auto& [prev, q] : q_post.probs) {
        Real p = 1;
        for (std::size_t i = 0; i < prev.size(); ++i) p *= p_rev[i][prev[i]];
        kl += q * (std::log(q) - std::log(p));
      }
      expected += q_xt * kl;
    }
    terms.kl[t] = expected;
  }

  // Prior term against p(x_T) = prod q_noise.
  auto final_dist = enumerate_forward(x0, s.T, s, vocab);
  for (const auto& [xT, q] : final_dist.probs) {
    Real p = 1;
    for (TokenId v : xT) p *= detail::noise_mass(v, vocab, s.stationary);
    terms.prior_kl += q * (std::log(q) - std::log(p));
  }

  // Exact marginal likelihood by running the reverse chain over all states.
  std::map<State, Real> current;
  detail::for_each_state(alphabet, x0.size(), [&](const State& x) {
    Real p = 1;
    for (TokenId v : x) p *= detail::noise_mass(v, vocab, s.stationary);
    if (p > 0) current[x] = p;
  });
  for (int t = s.T; t >= 1; --t) {
    std::map<State, Real> next;
    for (const auto& [xt, pxt] : current) {
      auto rev = detail::reverse_step(xt, t, model(xt), s, vocab);
      detail::for_each_state(alphabet, x0.size(), [&](const State& prev) {
        Real p = pxt;
        for (std::size_t i = 0; i < prev.size(); ++i) p *= rev[i][prev[i]];
        if (p > 0) next[prev] += p;
      });
    }
    current = std::move(next);
  }
  terms.nll = -std::log(current[x0]);
  return terms;
}

/// Exact p(x) exp(eta sum_i g[i][x_i]) / Z.
inline EnumeratedDistribution enumerate_guided(const EnumeratedDistribution& base,
                                               const std::vector<std::vector<Real>>& g, Real eta) {
  EnumeratedDistribution d;
  Real z = 0;
  for (const auto& [x, p] : base.probs) {
    if (x.size() != g.size()) throw std::invalid_argument("gradient rows differ from sequence length");
    Real e = 0;
    for (std::size_t i = 0; i < x.size(); ++i) e += g[i][x[i]];
    const Real w = p * std::exp(eta * e);
    d.probs[x] = w;
    z += w;
  }
  for (auto& [_, p] : d.probs) p /= z;
  return d;
}

/// Product distribution from independent per-position categoricals.
inline EnumeratedDistribution product_distribution(const std::vector<std::vector<Real>>& rows,
                                                   const std::vector<TokenId>& alphabet) {
  detail::check_support(alphabet.size(), rows.size());
  EnumeratedDistribution d;
  detail::for_each_state(alphabet, rows.size(), [&](const State& x) {
    Real p = 1;
    for (std::size_t i = 0; i < x.size(); ++i) p *= rows[i][x[i]];
    if (p > 0) d.probs[x] = p;
  });
  return d;
}

}  // namespace ddseq::oracle
