#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddseq/denoiser.hpp"
#include "ddseq/diffusion.hpp"
#include "ddseq/rng.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq {

enum class Strategy { Stochastic, Greedy };
enum class UnmaskSchedule { Linear, Cosine };

inline std::string_view to_string(Strategy s) { return s == Strategy::Greedy ? "greedy" : "stochastic"; }
inline std::string_view to_string(UnmaskSchedule s) { return s == UnmaskSchedule::Cosine ? "cosine" : "linear"; }
inline Strategy parse_strategy(std::string_view s) {
  if (s == "stochastic") return Strategy::Stochastic;
  if (s == "greedy") return Strategy::Greedy;
  throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}
inline UnmaskSchedule parse_unmask_schedule(std::string_view s) {
  if (s == "linear") return UnmaskSchedule::Linear;
  if (s == "cosine") return UnmaskSchedule::Cosine;
  throw std::invalid_argument("unknown unmask schedule '" + std::string(s) + "'");
}

struct SamplerConfig {
  int steps = 500;
  double temperature = 1.0;
  Strategy strategy = Strategy::Stochastic;
  bool gumbel = true;
  UnmaskSchedule schedule = UnmaskSchedule::Linear;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("sampler steps must be at least 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("temperature must be positive");
  }
};

inline nlohmann::json to_json(const SamplerConfig& c) {
  return {{"steps", c.steps},
          {"temperature", c.temperature},
          {"strategy", to_string(c.strategy)},
          {"gumbel", c.gumbel},
          {"unmask_schedule", to_string(c.schedule)},
          {"seed", c.seed}};
}

/// Observed tokens stay fixed; free positions carry the mask id.
struct InfillTemplate {
  std::vector<TokenId> ids;
  std::vector<bool> observed;

  std::size_t free_count() const {
    std::size_t n = 0;
    for (bool o : observed) n += !o;
    return n;
  }

  static InfillTemplate all_free(std::size_t L, const Vocab& vocab) {
    return {std::vector<TokenId>(L, vocab.mask_id()), std::vector<bool>(L, false)};
  }

  /// Letters are observed, 'X' marks a free position.
  static InfillTemplate from_letters(std::string_view s, const Vocab& vocab) {
    InfillTemplate t;
    t.ids = vocab.encode(s);
    for (TokenId id : t.ids) t.observed.push_back(id != vocab.mask_id());
    return t;
  }

  void validate(const Vocab& vocab) const {
    if (ids.size() != observed.size()) throw std::invalid_argument("template mask length mismatch");
    if (free_count() == 0) throw std::invalid_argument("template has no free positions");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (observed[i] && !vocab.is_residue(ids[i])) throw std::invalid_argument("observed position holds a non-residue token");
      if (!observed[i] && ids[i] != vocab.mask_id()) throw std::invalid_argument("free position must hold the mask token");
    }
  }
};

/// Cumulative committed count after each of the T_s steps.
inline std::vector<int> unmask_counts(int free, int steps, UnmaskSchedule kind = UnmaskSchedule::Linear) {
  if (steps < 1) throw std::invalid_argument("sampler steps must be at least 1");
  if (free < 1) throw std::invalid_argument("need at least one free position");
  std::vector<int> k(static_cast<std::size_t>(steps));
  const double pi = 3.14159265358979323846;
  for (int s = 1; s <= steps; ++s) {
    int c;
    if (kind == UnmaskSchedule::Linear) {
      c = static_cast<int>((static_cast<std::int64_t>(free) * s + steps - 1) / steps);
    } else {
      c = static_cast<int>(std::ceil(free * (1.0 - std::cos(pi / 2.0 * s / steps)) - 1e-9));
    }
    c = std::clamp(c, 0, free);
    if (s > 1) c = std::max(c, k[s - 2]);
    k[s - 1] = c;
  }
  k.back() = free;
  return k;
}

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// log p_i + g_i with g_i standard Gumbel.
inline std::vector<double> gumbel_perturb(std::span<const double> log_probs, CounterRng& rng) {
  std::vector<double> out(log_probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_probs[i] + rng.gumbel();
  return out;
}

inline std::vector<double> gumbel_perturb(std::span<const double> log_probs, std::uint64_t seed) {
  CounterRng rng(seed, Stream::Gumbel);
  return gumbel_perturb(log_probs, rng);
}

/// Model logits (L x |V|) for the current ids.
using LogitFn = std::function<ad::Matrix<double>(const std::vector<TokenId>& ids)>;
/// Optional in-place edit of temperature-scaled logits (classifier guidance).
using LogitAdjust = std::function<void(const std::vector<TokenId>& ids, ad::Matrix<double>& scaled)>;

struct SampleTrace {
  std::vector<int> committed;
  /// Committed positions returned to the mask by a later ranking.
  int remask_events = 0;
};

/// Temperature, specials masked to -inf, row-wise log-softmax.
inline ad::Matrix<double> sampling_log_probs(ad::Matrix<double> logits, const Vocab& vocab, double temperature,
                                             const std::vector<TokenId>& ids, const LogitAdjust& adjust) {
  logits /= temperature;
  if (adjust) adjust(ids, logits);
  return residue_log_probs(logits, vocab, 1.0);
}

/// Iterative mask-predict over the free positions of a template. Every step
/// proposes x0 at the masked free positions and ranks all free positions:
/// a committed position by the current log-probability of its token, a fresh
/// proposal by its log-probability, which under Gumbel perturbation is the
/// perturbed, renormalized log p~ of the winning token. The top k_s are kept
/// and the rest re-masked. With `draft`, every free position starts
/// committed to the draft token.
inline TokenSequence decode(const LogitFn& fn, const InfillTemplate& tmpl, const SamplerConfig& cfg, const Vocab& vocab,
                            SampleTrace* trace = nullptr, const LogitAdjust& adjust = {},
                            const std::vector<TokenId>* draft = nullptr) {
  cfg.validate();
  tmpl.validate(vocab);
  const std::size_t L = tmpl.ids.size();
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < L; ++i)
    if (!tmpl.observed[i]) free.push_back(i);
  const auto counts = unmask_counts(static_cast<int>(free.size()), cfg.steps, cfg.schedule);
  const bool greedy = cfg.strategy == Strategy::Greedy;
  const bool use_gumbel = cfg.gumbel && !greedy;

  std::vector<TokenId> ids = tmpl.ids;
  std::vector<bool> committed(L, false);
  if (draft) {
    if (draft->size() != L) throw std::invalid_argument("draft length differs from template");
    for (std::size_t i : free) {
      if (!vocab.is_residue((*draft)[i])) throw std::invalid_argument("draft holds a non-residue token");
      ids[i] = (*draft)[i];
      committed[i] = true;
    }
  }
  const auto residues = vocab.residue_ids();
  std::vector<TokenId> proposal(L);
  std::vector<double> score(L, 0.0);
  std::vector<double> w(residues.size());
  std::vector<std::size_t> order(free.size());

  for (int s = 1; s <= cfg.steps; ++s) {
    const auto logp = sampling_log_probs(fn(ids), vocab, cfg.temperature, ids, adjust);
    for (std::size_t i : free) {
      const auto row = logp.row(static_cast<Eigen::Index>(i));
      if (committed[i]) {
        proposal[i] = ids[i];
        score[i] = row(ids[i]);
        continue;
      }
      TokenId best = residues.front();
      if (greedy) {
        for (TokenId v : residues)
          if (row(v) > row(best)) best = v;
        score[i] = row(best);
      } else if (use_gumbel) {
        CounterRng g(cfg.seed, Stream::Gumbel, i, static_cast<std::uint64_t>(s));
        for (std::size_t k = 0; k < residues.size(); ++k) w[k] = row(residues[k]) + g.gumbel();
        const auto top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        best = residues[top];
        score[i] = w[top] - log_sum_exp(w);
      } else {
        CounterRng r(cfg.seed, Stream::Sampler, i, static_cast<std::uint64_t>(s));
        for (std::size_t k = 0; k < residues.size(); ++k) w[k] = std::exp(row(residues[k]));
        best = residues[r.categorical(std::span<const double>(w))];
        score[i] = row(best);
      }
      proposal[i] = best;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[free[a]] > score[free[b]]; });
    const auto k = static_cast<std::size_t>(counts[static_cast<std::size_t>(s - 1)]);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const std::size_t i = free[order[r]];
      if (r < k) {
        ids[i] = proposal[i];
        committed[i] = true;
      } else {
        if (committed[i] && trace) ++trace->remask_events;
        ids[i] = vocab.mask_id();
        committed[i] = false;
      }
    }
    if (trace) trace->committed.push_back(static_cast<int>(k));
  }
  return TokenSequence{std::move(ids)};
}

/// Logit function for a denoiser; time-conditioned models are shown the
/// timestep matching the current mask fraction.
template <typename S>
LogitFn model_logits(const Denoiser<S>& model, const Vocab& vocab, const ConditionEmbedding<S>* cond = nullptr,
                     int schedule_T = 0) {
  return [&model, &vocab, cond, schedule_T](const std::vector<TokenId>& ids) {
    int t = 0;
    if (model.config().time_conditioning && schedule_T > 0) {
      std::size_t masked = 0;
      for (TokenId id : ids) masked += id == vocab.mask_id();
      t = static_cast<int>(std::lround(static_cast<double>(schedule_T) * static_cast<double>(masked) /
                                       static_cast<double>(std::max<std::size_t>(ids.size(), 1))));
    }
    return model.forward(std::span<const TokenId>(ids), cond, t).template cast<double>().eval();
  };
}

inline TokenSequence sample(std::size_t L, const LogitFn& fn, const SamplerConfig& cfg, const Vocab& vocab,
                            SampleTrace* trace = nullptr, const LogitAdjust& adjust = {}) {
  if (L < 1) throw std::invalid_argument("sample length must be at least 1");
  return decode(fn, InfillTemplate::all_free(L, vocab), cfg, vocab, trace, adjust);
}

inline TokenSequence infill(const InfillTemplate& tmpl, const LogitFn& fn, const SamplerConfig& cfg, const Vocab& vocab,
                            SampleTrace* trace = nullptr, const LogitAdjust& adjust = {}) {
  return decode(fn, tmpl, cfg, vocab, trace, adjust);
}

/// Argmax everywhere, no Gumbel noise; the seed has no effect.
inline TokenSequence greedy_decode(const InfillTemplate& tmpl, const LogitFn& fn, SamplerConfig cfg, const Vocab& vocab,
                                   SampleTrace* trace = nullptr, const std::vector<TokenId>* draft = nullptr) {
  cfg.strategy = Strategy::Greedy;
  cfg.gumbel = false;
  cfg.seed = 0;
  return decode(fn, tmpl, cfg, vocab, trace, {}, draft);
}

/// Sidecar describing how a batch of samples was produced.
inline nlohmann::json sample_sidecar(const SamplerConfig& cfg, const std::vector<SampleTrace>& traces) {
  nlohmann::json j{{"seed", cfg.seed}, {"config", to_json(cfg)}};
  auto& arr = j["committed_counts"] = nlohmann::json::array();
  auto& rem = j["remask_events"] = nlohmann::json::array();
  for (const auto& t : traces) {
    arr.push_back(t.committed);
    rem.push_back(t.remask_events);
  }
  return j;
}

}  // namespace ddseq
