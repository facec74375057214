#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddseq/denoiser.hpp"
#include "ddseq/diffusion.hpp"
#include "ddseq/optim.hpp"
#include "ddseq/schedule.hpp"

namespace ddseq {

enum class Stage { MLM, Diffusion, TwoStage };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::MLM: return "mlm";
    case Stage::Diffusion: return "diffusion";
    default: return "two_stage";
  }
}

inline Stage parse_stage(std::string_view s) {
  if (s == "mlm") return Stage::MLM;
  if (s == "diffusion") return Stage::Diffusion;
  if (s == "two_stage") return Stage::TwoStage;
  throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

/// Raised when a loss or gradient stops being finite.
struct NumericError : std::runtime_error {
  std::int64_t batch_id;
  NumericError(const std::string& what, std::int64_t id) : std::runtime_error(what), batch_id(id) {}
};

struct LossReport {
  /// Weighted CE summed over noised positions, divided by their count.
  double loss = 0.0;
  /// Unnormalized weighted CE per timestep.
  std::map<int, double> per_timestep;
  /// Argmax accuracy on noised positions.
  double accuracy = 0.0;
  /// Pre-clip gradient norm; 0 when no backward pass ran.
  double grad_norm = 0.0;
  std::size_t noised = 0;
};

/// One training instance: a corrupted input, the clean target, and the
/// weight applied to its noised positions.
template <typename S>
struct Example {
  NoisedSequence xt;
  TokenSequence target;
  double weight = 1.0;
  std::optional<ConditionEmbedding<S>> cond;
  std::uint64_t dropout_seed = 0;
};

/// weight * sum_i b_i * -log p(target_i | x_t) as a tape node, plus counts.
template <typename S>
struct CrossEntropyTerm {
  ad::Var<S> value;
  double ce_sum = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

inline std::vector<bool> residue_columns(const Vocab& vocab) {
  std::vector<bool> allowed(static_cast<std::size_t>(vocab.size()), false);
  for (TokenId id : vocab.residue_ids()) allowed[id] = true;
  return allowed;
}

template <typename S>
CrossEntropyTerm<S> noised_cross_entropy(ad::Tape<S>& tape, const Denoiser<S>& model, const Example<S>& ex,
                                         const Vocab& vocab, Mode mode) {
  const auto L = ex.xt.ids.size();
  if (ex.target.ids.size() != L || ex.xt.noised.size() != L) throw std::invalid_argument("example length mismatch");
  auto logits = model.logits(tape, std::span<const TokenId>(ex.xt.ids), ex.cond ? &*ex.cond : nullptr, mode, ex.xt.t,
                             ex.dropout_seed);
  auto logp = ad::masked_log_softmax(logits, residue_columns(vocab));
  std::vector<S> w(L, S(0));
  CrossEntropyTerm<S> term;
  const auto& lp = logp.value();
  for (std::size_t i = 0; i < L; ++i) {
    if (!ex.xt.noised[i]) continue;
    w[i] = static_cast<S>(-ex.weight);
    term.ce_sum -= static_cast<double>(lp(static_cast<Eigen::Index>(i), ex.target.ids[i]));
    Eigen::Index best;
    lp.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    term.correct += best == ex.target.ids[i];
    ++term.count;
  }
  term.value = ad::pick_sum(logp, std::span<const TokenId>(ex.target.ids), std::span<const S>(w));
  return term;
}

/// Evaluates the batch objective sum(weight * CE) / total_noised and, when
/// backward is set, accumulates its gradient into the parameters.
template <typename S>
LossReport batch_loss(const Denoiser<S>& model, std::span<const Example<S>> batch, const Vocab& vocab, Mode mode,
                      bool backward) {
  std::size_t total = 0;
  for (const auto& ex : batch) total += ex.xt.noised_count();
  LossReport r;
  r.noised = total;
  if (total == 0) return r;
  std::size_t correct = 0;
  for (const auto& ex : batch) {
    if (ex.xt.noised_count() == 0) continue;
    ad::Tape<S> tape(backward);
    auto term = noised_cross_entropy(tape, model, ex, vocab, mode);
    r.loss += ex.weight * term.ce_sum;
    r.per_timestep[ex.xt.t] += ex.weight * term.ce_sum;
    correct += term.correct;
    if (backward) tape.backward(term.value, static_cast<S>(1.0 / static_cast<double>(total)));
  }
  r.loss /= static_cast<double>(total);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

inline void require_diffusable(const TokenSequence& x0, const Vocab& vocab) {
  require_clean(x0, vocab);
  for (TokenId id : x0.ids)
    if (vocab.is_residue(id)) return;
  throw std::invalid_argument("sequence has no diffusable positions");
}

/// Diffusion example at a fixed timestep.
template <typename S>
Example<S> diffusion_example_at(const TokenSequence& x0, int t, const NoiseSchedule& s, const MixtureConstants& c,
                                const Vocab& vocab, std::uint64_t seed) {
  require_diffusable(x0, vocab);
  require_timestep(t, s, 1);
  Example<S> ex;
  ex.xt = corrupt(x0, t, s, vocab, seed);
  ex.target = x0;
  ex.weight = c.loss_weight[t];
  ex.dropout_seed = derive_seed(seed, 0xD0);
  return ex;
}

/// Draws t uniformly from 1..T and corrupts x0; if nothing was noised the
/// draw is repeated once with a fresh stream.
template <typename S>
Example<S> diffusion_example(const TokenSequence& x0, const NoiseSchedule& s, const MixtureConstants& c,
                             const Vocab& vocab, std::uint64_t seed) {
  Example<S> ex;
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    CounterRng rng(seed, Stream::TimeDraw, attempt);
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    ex = diffusion_example_at<S>(x0, t, s, c, vocab, derive_seed(seed, attempt));
    if (ex.xt.noised_count() > 0) break;
  }
  return ex;
}

/// Masked-LM example: Bernoulli(mask_ratio) absorbing masks, weight 1. If no
/// position was masked the draw is repeated once, then one position is
/// forced. t_label is the timestep shown to time-conditioned models.
template <typename S>
Example<S> mlm_example(const TokenSequence& x0, double mask_ratio, const Vocab& vocab, std::uint64_t seed,
                       int t_label = 0) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("mask_ratio must be in (0,1)");
  require_diffusable(x0, vocab);
  const auto q = stationary_distribution(vocab, Stationary::Absorbing);
  Example<S> ex;
  ex.target = x0;
  ex.weight = 1.0;
  ex.dropout_seed = derive_seed(seed, 0xD0);
  ex.xt = corrupt_with_keep(x0, 1.0 - mask_ratio, q, vocab, seed, Stream::MlmMask, 0);
  if (ex.xt.noised_count() == 0) ex.xt = corrupt_with_keep(x0, 1.0 - mask_ratio, q, vocab, seed, Stream::MlmMask, 1);
  if (ex.xt.noised_count() == 0) {
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < x0.ids.size(); ++i)
      if (vocab.is_residue(x0.ids[i])) slots.push_back(i);
    CounterRng rng(seed, Stream::MlmMask, 2);
    const auto i = slots[rng.below(slots.size())];
    ex.xt.ids[i] = vocab.mask_id();
    ex.xt.noised[i] = true;
  }
  ex.xt.t = t_label;
  return ex;
}

/// Draft-conditioned example: the draft is corrupted, and the loss targets
/// x0 on the positions where the corrupted draft differs from the draft.
template <typename S>
Example<S> draft_example_at(const TokenSequence& x0, const TokenSequence& draft, int t, const NoiseSchedule& s,
                            const MixtureConstants& c, const Vocab& vocab, std::uint64_t seed) {
  if (draft.ids.size() != x0.ids.size()) throw std::invalid_argument("draft length differs from x0");
  require_clean(x0, vocab);
  require_diffusable(draft, vocab);
  require_timestep(t, s, 1);
  Example<S> ex;
  ex.xt = corrupt(draft, t, s, vocab, seed);
  ex.target = x0;
  ex.weight = c.loss_weight[t];
  ex.dropout_seed = derive_seed(seed, 0xD0);
  return ex;
}

template <typename S>
Example<S> draft_example(const TokenSequence& x0, const TokenSequence& draft, const NoiseSchedule& s,
                         const MixtureConstants& c, const Vocab& vocab, std::uint64_t seed) {
  Example<S> ex;
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    CounterRng rng(seed, Stream::TimeDraw, attempt);
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    ex = draft_example_at<S>(x0, draft, t, s, c, vocab, derive_seed(seed, attempt));
    if (ex.xt.noised_count() > 0) break;
  }
  return ex;
}

template <typename S>
LossReport diffusion_loss(const TokenSequence& x0, const Denoiser<S>& model, const NoiseSchedule& s,
                          const MixtureConstants& c, const Vocab& vocab, std::uint64_t seed) {
  Example<S> ex = diffusion_example<S>(x0, s, c, vocab, seed);
  return batch_loss<S>(model, std::span<const Example<S>>(&ex, 1), vocab, Mode::Eval, false);
}

template <typename S>
LossReport mlm_loss(const TokenSequence& x0, const Denoiser<S>& model, double mask_ratio, const Vocab& vocab,
                    std::uint64_t seed) {
  Example<S> ex = mlm_example<S>(x0, mask_ratio, vocab, seed);
  return batch_loss<S>(model, std::span<const Example<S>>(&ex, 1), vocab, Mode::Eval, false);
}

template <typename S>
LossReport draft_conditioned_loss(const TokenSequence& x0, const TokenSequence& draft, const Denoiser<S>& model,
                                  const ConditionEmbedding<S>& cond, const NoiseSchedule& s, const MixtureConstants& c,
                                  const Vocab& vocab, std::uint64_t seed) {
  if (!model.has_adapter()) throw std::logic_error("draft-conditioned loss needs an attached adapter");
  Example<S> ex = draft_example<S>(x0, draft, s, c, vocab, seed);
  ex.cond = cond;
  return batch_loss<S>(model, std::span<const Example<S>>(&ex, 1), vocab, Mode::Eval, false);
}

/// exp of the mean over positions of -log p(x_i | x with i masked).
template <typename S>
double pseudo_perplexity(const TokenSequence& x, const Denoiser<S>& model, const Vocab& vocab,
                         const ConditionEmbedding<S>* cond = nullptr) {
  require_clean(x, vocab);
  if (x.ids.empty()) throw std::invalid_argument("pseudo-perplexity needs L >= 1");
  double nll = 0.0;
  std::size_t n = 0;
  std::vector<TokenId> ids = x.ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab.is_residue(x.ids[i])) continue;
    ids[i] = vocab.mask_id();
    auto lp = residue_log_probs(model.forward(std::span<const TokenId>(ids), cond, 1), vocab);
    nll -= lp(static_cast<Eigen::Index>(i), x.ids[i]);
    ids[i] = x.ids[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("sequence has no residue positions");
  return std::exp(nll / static_cast<double>(n));
}

template <typename S>
double mean_pseudo_perplexity(std::span<const TokenSequence> xs, const Denoiser<S>& model, const Vocab& vocab) {
  double sum = 0.0;
  for (const auto& x : xs) sum += pseudo_perplexity(x, model, vocab);
  return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

/// Held-out masked-token accuracy at a fixed mask ratio (absorbing masks).
template <typename S>
double masked_accuracy(std::span<const TokenSequence> xs, const Denoiser<S>& model, const Vocab& vocab,
                       double mask_ratio, std::uint64_t seed) {
  std::size_t correct = 0, total = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    Example<S> ex = mlm_example<S>(xs[k], mask_ratio, vocab, derive_seed(seed, k));
    auto r = batch_loss<S>(model, std::span<const Example<S>>(&ex, 1), vocab, Mode::Eval, false);
    correct += static_cast<std::size_t>(std::llround(r.accuracy * static_cast<double>(r.noised)));
    total += r.noised;
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

struct TrainConfig {
  Stage stage = Stage::TwoStage;
  int mlm_steps = 2000;
  int diffusion_steps = 8000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double grad_clip_norm = 1.0;
  double mlm_mask_ratio = 0.15;
  std::uint64_t seed = 0;
  int eval_interval = 500;
  double warmup_fraction = 0.01;
  double weight_decay = 0.01;
  /// Held-out sequences scored for pseudo-perplexity at each evaluation.
  int eval_sequences = 16;

  void validate() const {
    if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("grad_clip_norm must be positive");
    if (!(mlm_mask_ratio > 0.0 && mlm_mask_ratio < 1.0)) throw std::invalid_argument("mlm_mask_ratio must be in (0,1)");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (mlm_steps < 0 || diffusion_steps < 0) throw std::invalid_argument("step counts must be non-negative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (eval_interval < 0) throw std::invalid_argument("eval_interval must be non-negative");
  }

  int total_steps() const {
    switch (stage) {
      case Stage::MLM: return mlm_steps;
      case Stage::Diffusion: return diffusion_steps;
      default: return mlm_steps + diffusion_steps;
    }
  }

  Stage stage_at(int step) const {
    if (stage == Stage::TwoStage) return step < mlm_steps ? Stage::MLM : Stage::Diffusion;
    return stage;
  }
};

/// Optimizer plus step counter; everything needed to resume.
template <typename S>
struct TrainState {
  AdamW<S> optimizer;
  std::int64_t step = 0;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;

/// Runs optimizer steps [state.step, until) with batches from make_batch.
/// Emits one metrics record per step; eval(step) may add pppl.
template <typename S>
void run_steps(Denoiser<S>& model, TrainState<S>& state, std::int64_t until, std::int64_t total_steps,
               const TrainConfig& cfg, const Vocab& vocab,
               const std::function<std::vector<Example<S>>(std::int64_t step)>& make_batch,
               const std::function<std::string(std::int64_t step)>& stage_name, const MetricsSink& sink,
               const std::function<std::optional<double>(std::int64_t step)>& eval = {}) {
  const auto warmup = static_cast<std::int64_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  for (; state.step < until; ++state.step) {
    const auto step = state.step;
    auto batch = make_batch(step);
    model.params().zero_grad();
    auto report = batch_loss<S>(model, std::span<const Example<S>>(batch), vocab, Mode::Train, true);
    if (!std::isfinite(report.loss)) throw NumericError("non-finite loss at batch " + std::to_string(step), step);
    report.grad_norm = clip_grad_norm(model.params(), cfg.grad_clip_norm);
    if (!std::isfinite(report.grad_norm))
      throw NumericError("non-finite gradient at batch " + std::to_string(step), step);
    const double clipped = grad_norm(model.params());
    state.optimizer.step(model.params(), warmup_lr(cfg.learning_rate, step, warmup));
    nlohmann::json rec{{"step", step + 1},
                       {"stage", stage_name(step)},
                       {"loss", report.loss},
                       {"acc", report.accuracy},
                       {"grad_norm", report.grad_norm},
                       {"grad_norm_clipped", clipped},
                       {"pppl", nullptr}};
    if (eval) {
      if (auto p = eval(step + 1)) rec["pppl"] = *p;
    }
    if (sink) sink(rec);
  }
}

/// Header record describing the optimizer, written before the first step.
inline nlohmann::json optimizer_record(const TrainConfig& cfg, const AdamWConfig& opt) {
  return {{"step", 0},
          {"stage", "setup"},
          {"loss", nullptr},
          {"acc", nullptr},
          {"grad_norm", nullptr},
          {"pppl", nullptr},
          {"optimizer",
           {{"name", "adamw"},
            {"learning_rate", cfg.learning_rate},
            {"beta1", opt.beta1},
            {"beta2", opt.beta2},
            {"eps", opt.eps},
            {"weight_decay", opt.weight_decay},
            {"warmup_fraction", cfg.warmup_fraction},
            {"schedule", "linear warmup then constant"},
            {"grad_clip_norm", cfg.grad_clip_norm}}}};
}

/// Samples batch indices for a step.
inline std::vector<std::size_t> batch_indices(std::size_t corpus_size, int batch_size, std::uint64_t seed,
                                              std::int64_t step) {
  CounterRng rng(seed, Stream::Batch, static_cast<std::uint64_t>(step));
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = rng.below(corpus_size);
  return idx;
}

/// MLM and/or diffusion training on a corpus. Resumes from state.step.
template <typename S>
void train(Denoiser<S>& model, TrainState<S>& state, std::span<const TokenSequence> corpus, const TrainConfig& cfg,
           const NoiseSchedule& schedule, const Vocab& vocab, const MetricsSink& sink = {},
           std::span<const TokenSequence> held_out = {}) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("empty training corpus");
  const auto constants = mixture_constants(schedule);
  const int total = cfg.total_steps();
  const int mlm_t = std::clamp(static_cast<int>(std::lround(cfg.mlm_mask_ratio * schedule.T)), 1, schedule.T);
  if (state.step == 0 && sink) sink(optimizer_record(cfg, state.optimizer.config()));
  auto make_batch = [&](std::int64_t step) {
    auto idx = batch_indices(corpus.size(), cfg.batch_size, cfg.seed, step);
    std::vector<Example<S>> batch;
    batch.reserve(idx.size());
    const Stage st = cfg.stage_at(static_cast<int>(step));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(step), b);
      if (st == Stage::MLM)
        batch.push_back(mlm_example<S>(corpus[idx[b]], cfg.mlm_mask_ratio, vocab, seed, mlm_t));
      else
        batch.push_back(diffusion_example<S>(corpus[idx[b]], schedule, constants, vocab, seed));
    }
    return batch;
  };
  auto stage_name = [&](std::int64_t step) { return std::string(to_string(cfg.stage_at(static_cast<int>(step)))); };
  std::vector<TokenSequence> eval_set;
  for (std::size_t i = 0; i < held_out.size() && static_cast<int>(i) < cfg.eval_sequences; ++i)
    eval_set.push_back(held_out[i]);
  auto eval = [&](std::int64_t step) -> std::optional<double> {
    if (cfg.eval_interval <= 0 || eval_set.empty()) return std::nullopt;
    if (step % cfg.eval_interval != 0 && step != total) return std::nullopt;
    return mean_pseudo_perplexity<S>(eval_set, model, vocab);
  };
  run_steps<S>(model, state, total, total, cfg, vocab, make_batch, stage_name, sink, eval);
}

/// Adapter training item: clean target, conditioner states, and an optional
/// draft that replaces x0 as the corruption source.
template <typename S>
struct ConditionedSequence {
  TokenSequence x0;
  ConditionEmbedding<S> cond;
  std::optional<TokenSequence> draft;
};

/// Trains the attached adapter for cfg.diffusion_steps with the diffusion
/// objective; items carrying a draft use the draft-conditioned objective.
template <typename S>
void train_adapter(Denoiser<S>& model, TrainState<S>& state, std::span<const ConditionedSequence<S>> data,
                   const TrainConfig& cfg, const NoiseSchedule& schedule, const Vocab& vocab,
                   const MetricsSink& sink = {}) {
  cfg.validate();
  if (!model.has_adapter()) throw std::logic_error("adapter training needs an attached adapter");
  if (data.empty()) throw std::invalid_argument("empty adapter training set");
  const auto constants = mixture_constants(schedule);
  const int total = cfg.diffusion_steps;
  if (state.step == 0 && sink) sink(optimizer_record(cfg, state.optimizer.config()));
  auto make_batch = [&](std::int64_t step) {
    auto idx = batch_indices(data.size(), cfg.batch_size, cfg.seed, step);
    std::vector<Example<S>> batch;
    batch.reserve(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& item = data[idx[b]];
      const auto seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(step), b);
      batch.push_back(item.draft ? draft_example<S>(item.x0, *item.draft, schedule, constants, vocab, seed)
                                 : diffusion_example<S>(item.x0, schedule, constants, vocab, seed));
      batch.back().cond = item.cond;
    }
    return batch;
  };
  auto stage_name = [](std::int64_t) { return std::string("Adapter"); };
  run_steps<S>(model, state, total, total, cfg, vocab, make_batch, stage_name, sink);
}

}  // namespace ddseq
