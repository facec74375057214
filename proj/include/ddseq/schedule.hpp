#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ddseq/vocab.hpp"

namespace ddseq {

enum class Stationary { Absorbing, Uniform };
enum class ScheduleKind { Linear };

inline std::string_view to_string(Stationary s) { return s == Stationary::Absorbing ? "absorbing" : "uniform"; }
inline std::string_view to_string(ScheduleKind) { return "linear"; }

inline Stationary parse_stationary(std::string_view s) {
  if (s == "absorbing") return Stationary::Absorbing;
  if (s == "uniform") return Stationary::Uniform;
  throw std::invalid_argument("unknown stationary distribution '" + std::string(s) + "'");
}

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "linear") return ScheduleKind::Linear;
  throw std::invalid_argument("unknown schedule kind '" + std::string(s) + "'");
}

/// Keep-probabilities alpha_0..alpha_T and per-step betas. beta[0] is unused
/// and set to 1 so that beta[t] lines up with timestep t.
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::Linear;
  Stationary stationary = Stationary::Absorbing;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> q_noise;  // over the full vocabulary

  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t)); }
  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t)); }
};

inline std::vector<double> stationary_distribution(const Vocab& vocab, Stationary stationary) {
  std::vector<double> q(static_cast<std::size_t>(vocab.size()), 0.0);
  if (stationary == Stationary::Absorbing) {
    q[vocab.mask_id()] = 1.0;
  } else {
    const double mass = 1.0 / vocab.num_residues();
    for (TokenId id : vocab.residue_ids()) q[id] = mass;
  }
  return q;
}

/// Builds a schedule from explicit keep-probabilities (alpha_0 must be 1).
inline NoiseSchedule schedule_from_alpha(std::vector<double> alpha, const Vocab& vocab, Stationary stationary,
                                         ScheduleKind kind = ScheduleKind::Linear) {
  if (alpha.size() < 2) throw std::invalid_argument("schedule needs at least one step");
  if (alpha.front() != 1.0) throw std::invalid_argument("alpha_0 must equal 1");
  NoiseSchedule s;
  s.T = static_cast<int>(alpha.size()) - 1;
  s.kind = kind;
  s.stationary = stationary;
  s.beta.assign(alpha.size(), 1.0);
  for (int t = 1; t <= s.T; ++t) {
    if (!(alpha[t] >= 0.0 && alpha[t] <= 1.0)) throw std::invalid_argument("alpha outside [0,1]");
    s.beta[t] = alpha[t - 1] > 0.0 ? alpha[t] / alpha[t - 1] : 0.0;
  }
  s.alpha = std::move(alpha);
  s.q_noise = stationary_distribution(vocab, stationary);
  return s;
}

/// alpha_t = 1 - t/T.
inline NoiseSchedule linear_schedule(int T, Stationary stationary, const Vocab& vocab) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  std::vector<double> alpha(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) alpha[t] = static_cast<double>(T - t) / T;
  return schedule_from_alpha(std::move(alpha), vocab, stationary, ScheduleKind::Linear);
}

/// Backward-transition mixture weights, indexed by t (entry 0 unused).
/// lambda1[t] is the keep weight when x_t equals x_0, lambda2[t] the reveal
/// weight when it does not; loss_weight[t] == lambda2[t].
struct MixtureConstants {
  std::vector<double> lambda1;
  std::vector<double> lambda2;
  std::vector<double> loss_weight;
};

/// Mixture weights that make the keep/reveal form of q(x_{t-1} | x_t, x_0)
/// coincide with the Bayes posterior. Writing q_a for the stationary mass of
/// the clean token:
///   1 - lambda1 = (1 - beta_t)(1 - alpha_{t-1}) q_a / (alpha_t + (1 - alpha_t) q_a)
///   lambda2     = (alpha_{t-1} - alpha_t) / (1 - alpha_t)
/// q_a is 0 under absorbing diffusion and 1/K under uniform, so both are
/// token independent for the two stationaries supported here.
inline MixtureConstants mixture_constants(const NoiseSchedule& s) {
  MixtureConstants c;
  const auto n = static_cast<std::size_t>(s.T) + 1;
  c.lambda1.assign(n, 1.0);
  c.lambda2.assign(n, 1.0);
  double q_clean = 0.0;
  if (s.stationary == Stationary::Uniform) {
    for (double q : s.q_noise) {
      if (q > 0.0) {
        q_clean = q;
        break;
      }
    }
  }
  for (int t = 1; t <= s.T; ++t) {
    const double a_prev = s.alpha[t - 1];
    const double a_t = s.alpha[t];
    if (!(a_t < a_prev)) {
      throw std::invalid_argument("schedule has a zero-noise step at t=" + std::to_string(t));
    }
    c.lambda2[t] = (a_prev - a_t) / (1.0 - a_t);
    if (q_clean > 0.0) {
      const double keep_norm = a_t + (1.0 - a_t) * q_clean;
      c.lambda1[t] = 1.0 - (1.0 - s.beta[t]) * (1.0 - a_prev) * q_clean / keep_norm;
    }
  }
  c.loss_weight = c.lambda2;
  return c;
}

}  // namespace ddseq
