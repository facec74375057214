#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddseq/rng.hpp"
#include "ddseq/schedule.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq {

/// A clean sequence x_0: no mask tokens.
struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t length() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// A corrupted sequence x_t. noised[i] records b_i(t) = 1{x_t,i != x_0,i}.
struct NoisedSequence {
  std::vector<TokenId> ids;
  std::vector<bool> noised;
  int t = 0;

  std::size_t length() const { return ids.size(); }
  std::size_t noised_count() const {
    std::size_t n = 0;
    for (bool b : noised) n += b;
    return n;
  }
  bool operator==(const NoisedSequence&) const = default;
};

inline void require_clean(const TokenSequence& x, const Vocab& vocab) {
  for (TokenId id : x.ids) {
    if (!vocab.valid(id)) throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary");
    if (id == vocab.mask_id()) throw std::invalid_argument("clean sequence contains the mask token");
  }
}

inline void require_timestep(int t, const NoiseSchedule& s, int lo = 0) {
  if (t < lo || t > s.T) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(s.T) + "]");
  }
}

/// Draws a token from q_noise restricted to its support.
inline TokenId draw_noise(const NoiseSchedule& s, CounterRng& rng) {
  return static_cast<TokenId>(rng.categorical(std::span<const double>(s.q_noise)));
}

/// q(x_t | x_0) for one residue: alpha_t on x0 plus (1 - alpha_t) q_noise.
inline std::vector<double> marginal(TokenId x0, int t, const NoiseSchedule& s, const Vocab& vocab) {
  if (!vocab.is_residue(x0)) throw std::invalid_argument("marginal is defined for residue tokens only");
  require_timestep(t, s);
  const double a = s.alpha_at(t);
  std::vector<double> p(s.q_noise.size());
  for (std::size_t v = 0; v < p.size(); ++v) p[v] = (1.0 - a) * s.q_noise[v];
  p[x0] += a;
  return p;
}

/// q(x_t | x_{t-1}) for one position: beta_t on xprev plus (1 - beta_t) q_noise.
inline std::vector<double> forward_kernel(TokenId xprev, int t, const NoiseSchedule& s, const Vocab& vocab) {
  if (!vocab.valid(xprev) || vocab.is_special(xprev)) throw std::invalid_argument("kernel source must be a residue or the mask");
  require_timestep(t, s, 1);
  const double b = s.beta_at(t);
  std::vector<double> p(s.q_noise.size());
  for (std::size_t v = 0; v < p.size(); ++v) p[v] = (1.0 - b) * s.q_noise[v];
  p[xprev] += b;
  return p;
}

/// Samples x_t ~ q(x_t | x_0) position by position. Each position draws from
/// its own stream keyed by (seed, position, t), so the result does not depend
/// on how sequences are batched. Specials pass through untouched.
inline NoisedSequence corrupt(const TokenSequence& x0, int t, const NoiseSchedule& s, const Vocab& vocab,
                              std::uint64_t seed) {
  require_timestep(t, s);
  require_clean(x0, vocab);
  NoisedSequence out;
  out.t = t;
  out.ids = x0.ids;
  out.noised.assign(x0.ids.size(), false);
  const double a = s.alpha_at(t);
  for (std::size_t i = 0; i < x0.ids.size(); ++i) {
    if (!vocab.is_residue(x0.ids[i])) continue;
    CounterRng rng(seed, Stream::Corrupt, i, static_cast<std::uint64_t>(t));
    if (rng.uniform() < a) continue;
    out.ids[i] = draw_noise(s, rng);
    out.noised[i] = out.ids[i] != x0.ids[i];
  }
  return out;
}

/// Corruption at an explicit keep probability with an explicit noise
/// distribution; used by the masked-LM objective, which fixes the mask ratio
/// instead of a timestep.
inline NoisedSequence corrupt_with_keep(const TokenSequence& x0, double keep, std::span<const double> q_noise,
                                        const Vocab& vocab, std::uint64_t seed, Stream stream = Stream::MlmMask,
                                        std::uint64_t tag = 0) {
  require_clean(x0, vocab);
  if (q_noise.size() != static_cast<std::size_t>(vocab.size())) throw std::invalid_argument("q_noise width differs from vocabulary");
  NoisedSequence out;
  out.t = 0;
  out.ids = x0.ids;
  out.noised.assign(x0.ids.size(), false);
  for (std::size_t i = 0; i < x0.ids.size(); ++i) {
    if (!vocab.is_residue(x0.ids[i])) continue;
    CounterRng rng(seed, stream, i, tag);
    if (rng.uniform() < keep) continue;
    out.ids[i] = static_cast<TokenId>(rng.categorical(q_noise));
    out.noised[i] = out.ids[i] != x0.ids[i];
  }
  return out;
}

/// Per-position q(x_{t-1} | x_t, x_0) in keep/reveal mixture form.
inline std::vector<double> posterior_mixture(TokenId xt, TokenId x0, int t, const NoiseSchedule& s,
                                             const MixtureConstants& c) {
  require_timestep(t, s, 1);
  std::vector<double> p(s.q_noise.size());
  if (xt == x0) {
    const double l1 = c.lambda1[t];
    for (std::size_t v = 0; v < p.size(); ++v) p[v] = (1.0 - l1) * s.q_noise[v];
    p[xt] += l1;
  } else {
    // q_noise(x_t) = beta_t onehot(x_t) + (1 - beta_t) q_noise
    const double l2 = c.lambda2[t];
    const double b = s.beta_at(t);
    for (std::size_t v = 0; v < p.size(); ++v) p[v] = (1.0 - l2) * (1.0 - b) * s.q_noise[v];
    p[xt] += (1.0 - l2) * b;
    p[x0] += l2;
  }
  return p;
}

/// One stochastic reverse step x_t -> x_{t-1} given a clean estimate. Draws
/// the keep/reveal indicator first, then the noise component.
inline NoisedSequence posterior_step(const NoisedSequence& xt, const TokenSequence& x0hat, const NoiseSchedule& s,
                                     const MixtureConstants& c, const Vocab& vocab, std::uint64_t seed) {
  require_timestep(xt.t, s, 1);
  if (x0hat.ids.size() != xt.ids.size()) throw std::invalid_argument("x0hat length differs from x_t");
  const int t = xt.t;
  NoisedSequence out;
  out.t = t - 1;
  out.ids = xt.ids;
  out.noised.assign(xt.ids.size(), false);
  for (std::size_t i = 0; i < xt.ids.size(); ++i) {
    const TokenId cur = xt.ids[i];
    if (vocab.is_special(cur)) continue;
    const TokenId est = x0hat.ids[i];
    if (est == vocab.mask_id()) throw std::invalid_argument("x0hat contains the mask token");
    if (!vocab.is_residue(est)) throw std::invalid_argument("x0hat contains a special token at a diffused position");
    CounterRng rng(seed, Stream::Posterior, i, static_cast<std::uint64_t>(t));
    TokenId next;
    if (cur == est) {
      next = rng.bernoulli(c.lambda1[t]) ? cur : draw_noise(s, rng);
    } else if (rng.bernoulli(c.lambda2[t])) {
      next = est;
    } else {
      // u ~ q_noise(x_t): keep x_t with beta_t, else fresh noise.
      next = rng.bernoulli(s.beta_at(t)) ? cur : draw_noise(s, rng);
    }
    out.ids[i] = next;
    out.noised[i] = next != est;
  }
  return out;
}

}  // namespace ddseq
