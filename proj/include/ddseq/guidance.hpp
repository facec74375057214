#pragma once

// Sampling-time conditioning: discrete classifier guidance through the input
// gradient of a labeler, and classifier-free guidance by logit mixing.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddseq/autodiff.hpp"
#include "ddseq/grammar.hpp"
#include "ddseq/nn.hpp"
#include "ddseq/optim.hpp"
#include "ddseq/sampling.hpp"
#include "ddseq/schedule.hpp"
#include "ddseq/training.hpp"

namespace ddseq {

enum class GuidanceMode { None, Classifier, ClassifierFree };

inline std::string_view to_string(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::Classifier: return "classifier";
    case GuidanceMode::ClassifierFree: return "classifier_free";
    default: return "none";
  }
}
inline GuidanceMode parse_guidance_mode(std::string_view s) {
  if (s == "none") return GuidanceMode::None;
  if (s == "classifier") return GuidanceMode::Classifier;
  if (s == "classifier_free") return GuidanceMode::ClassifierFree;
  throw std::invalid_argument("unknown guidance mode '" + std::string(s) + "'");
}

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::None;
  double eta = 0.0;
  double cfg_eta = 1.0;

  void validate() const {
    if (!std::isfinite(eta) || !std::isfinite(cfg_eta)) throw std::invalid_argument("guidance weights must be finite");
    if (mode == GuidanceMode::Classifier && eta < 0.0) throw std::invalid_argument("eta must be non-negative");
  }
};

/// log p_phi(y | x) for a relaxed one-hot x (L x |V|) and its input gradient.
class GuidanceModel {
 public:
  virtual ~GuidanceModel() = default;
  virtual int vocab_size() const = 0;
  virtual std::pair<double, ad::Matrix<double>> value_and_grad(const ad::Matrix<double>& x,
                                                               const Annotation& y) const = 0;
};

/// One-hot rows for token ids; mask positions are the one-hot of the mask id.
inline ad::Matrix<double> one_hot(std::span<const TokenId> ids, int vocab_size) {
  ad::Matrix<double> x = ad::Matrix<double>::Zero(static_cast<Eigen::Index>(ids.size()), vocab_size);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size) throw std::invalid_argument("token id outside vocabulary");
    x(static_cast<Eigen::Index>(i), ids[i]) = 1.0;
  }
  return x;
}

/// Rejects inputs whose shape or rows do not fit a relaxed one-hot.
inline void check_relaxed(const ad::Matrix<double>& x, int vocab_size, const Annotation& y) {
  if (x.cols() != vocab_size) throw std::invalid_argument("relaxed input width differs from vocabulary size");
  if (x.rows() < 1) throw std::invalid_argument("empty relaxed input");
  if (static_cast<std::size_t>(x.rows()) != y.length())
    throw std::invalid_argument("annotation length " + std::to_string(y.length()) + " differs from sequence length " +
                                std::to_string(x.rows()));
  if (!x.allFinite()) throw std::invalid_argument("relaxed input contains non-finite values");
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    if (std::abs(x.row(r).sum() - 1.0) > 1e-4) throw std::invalid_argument("relaxed input rows must sum to 1");
}

/// Synthetic conditioner: one-hot label rows, one per position.
template <typename S = double>
ConditionEmbedding<S> label_condition(const Annotation& y, int num_labels = 3) {
  if (y.labels.empty()) throw std::invalid_argument("empty annotation");
  ConditionEmbedding<S> c;
  c.states = ad::Matrix<S>::Zero(static_cast<Eigen::Index>(y.length()), num_labels);
  for (std::size_t i = 0; i < y.length(); ++i) {
    if (y.labels[i] < 0 || y.labels[i] >= num_labels) throw std::invalid_argument("annotation label out of range");
    c.states(static_cast<Eigen::Index>(i), y.labels[i]) = S(1);
  }
  return c;
}

struct SspConfig {
  int num_labels = 3;
  int embed_dim = 32;
  int num_heads = 2;
  int ffn_dim = 64;
  int max_len = 256;

  void validate() const {
    if (num_labels < 2) throw std::invalid_argument("labeler needs at least two labels");
    if (embed_dim < 1 || num_heads < 1 || ffn_dim < 1 || max_len < 1)
      throw std::invalid_argument("labeler dimensions must be positive");
    if (embed_dim % num_heads != 0 || (embed_dim / num_heads) % 2 != 0)
      throw std::invalid_argument("labeler embed_dim must split into even-width heads");
  }
};

inline nlohmann::json to_json(const SspConfig& c) {
  return {{"num_labels", c.num_labels},
          {"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},
          {"ffn_dim", c.ffn_dim},
          {"max_len", c.max_len}};
}

/// Small bidirectional sequence labeler: x E, one transformer block, layer
/// norm, per-position label head. The input enters by matrix product so it
/// can be a point on the simplex rather than a token.
class SspClassifier final : public GuidanceModel {
 public:
  SspClassifier(int vocab_size, SspConfig cfg = {}, std::uint64_t seed = 0) : cfg_(cfg), vocab_size_(vocab_size) {
    cfg_.validate();
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be positive");
    const int d = cfg_.embed_dim;
    emb_ = &ps_.normal("embed.tokens", vocab_size, d, 0.1, seed);
    block_ = nn::TransformerBlock<double>::create(ps_, "block", d, cfg_.ffn_dim, cfg_.num_heads, true, seed);
    ln_g_ = &ps_.constant("final_ln.gain", 1, d, 1.0);
    ln_b_ = &ps_.constant("final_ln.bias", 1, d, 0.0);
    head_w_ = &ps_.normal("head.weight", d, cfg_.num_labels, 0.1, seed);
    head_b_ = &ps_.constant("head.bias", 1, cfg_.num_labels, 0.0);
  }

  SspClassifier(SspClassifier&& o) noexcept { *this = std::move(o); }
  SspClassifier& operator=(SspClassifier&& o) noexcept {
    cfg_ = o.cfg_;
    vocab_size_ = o.vocab_size_;
    ps_ = std::move(o.ps_);
    rebind();
    return *this;
  }
  SspClassifier(const SspClassifier&) = delete;
  SspClassifier& operator=(const SspClassifier&) = delete;

  const SspConfig& config() const { return cfg_; }
  int vocab_size() const override { return vocab_size_; }
  int num_labels() const { return cfg_.num_labels; }
  nn::ParamStore<double>& params() { return ps_; }
  const nn::ParamStore<double>& params() const { return ps_; }

  /// Label log-probabilities (L x labels) as a tape node.
  ad::Var<double> label_log_probs(ad::Tape<double>& t, ad::Var<double> x) const {
    const auto L = static_cast<int>(x.rows());
    if (L > cfg_.max_len) throw std::invalid_argument("sequence longer than labeler max_len");
    std::vector<int> pos(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) pos[i] = i;
    auto h = ad::matmul(x, t.param(*emb_));
    h = block_.forward(t, h, pos, std::vector<bool>(static_cast<std::size_t>(L), true), 0.0, Mode::Eval, 0, 0);
    h = ad::layer_norm(h, t.param(*ln_g_), t.param(*ln_b_));
    auto logits = ad::add_row(ad::matmul(h, t.param(*head_w_)), t.param(*head_b_));
    return ad::masked_log_softmax(logits, std::vector<bool>(static_cast<std::size_t>(cfg_.num_labels), true));
  }

  /// Token-id path: embedding lookup instead of the one-hot product.
  ad::Matrix<double> label_log_probs(std::span<const TokenId> ids) const {
    ad::Tape<double> t(false);
    const auto L = static_cast<int>(ids.size());
    if (L < 1 || L > cfg_.max_len) throw std::invalid_argument("sequence length outside labeler range");
    for (TokenId id : ids)
      if (id < 0 || id >= vocab_size_) throw std::invalid_argument("token id outside vocabulary");
    std::vector<int> pos(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) pos[i] = i;
    auto h = ad::gather_rows(t.param(*emb_), ids);
    h = block_.forward(t, h, pos, std::vector<bool>(static_cast<std::size_t>(L), true), 0.0, Mode::Eval, 0, 0);
    h = ad::layer_norm(h, t.param(*ln_g_), t.param(*ln_b_));
    auto logits = ad::add_row(ad::matmul(h, t.param(*head_w_)), t.param(*head_b_));
    return ad::masked_log_softmax(logits, std::vector<bool>(static_cast<std::size_t>(cfg_.num_labels), true)).value();
  }

  ad::Matrix<double> relaxed_label_log_probs(const ad::Matrix<double>& x) const {
    ad::Tape<double> t(false);
    return label_log_probs(t, t.constant(x)).value();
  }

  std::vector<int> predict(std::span<const TokenId> ids) const {
    const auto lp = label_log_probs(ids);
    std::vector<int> out(static_cast<std::size_t>(lp.rows()));
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
      Eigen::Index best;
      lp.row(r).maxCoeff(&best);
      out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
  }

  std::pair<double, ad::Matrix<double>> value_and_grad(const ad::Matrix<double>& x,
                                                       const Annotation& y) const override {
    check_relaxed(x, vocab_size_, y);
    for (int l : y.labels)
      if (l < 0 || l >= cfg_.num_labels) throw std::invalid_argument("annotation label out of range");
    ad::Tape<double> t(true);
    auto in = t.input(x);
    auto lp = label_log_probs(t, in);
    std::vector<double> w(y.length(), 1.0);
    auto v = ad::pick_sum(lp, std::span<const int>(y.labels), std::span<const double>(w));
    // Only the input gradient is wanted; parameter grads are left untouched.
    std::vector<ad::Matrix<double>> saved;
    for (auto& p : ps_) saved.push_back(p->grad);
    t.backward(v);
    std::size_t k = 0;
    for (auto& p : ps_) p->grad = std::move(saved[k++]);
    ad::Matrix<double> g = t.has_grad(in.id) ? t.grad(in) : ad::Matrix<double>::Zero(x.rows(), x.cols());
    return {v.value()(0, 0), std::move(g)};
  }

 private:
  void rebind() {
    emb_ = ps_.find("embed.tokens");
    block_ = nn::TransformerBlock<double>::bind(ps_, "block", cfg_.num_heads, true);
    ln_g_ = ps_.find("final_ln.gain");
    ln_b_ = ps_.find("final_ln.bias");
    head_w_ = ps_.find("head.weight");
    head_b_ = ps_.find("head.bias");
  }

  SspConfig cfg_;
  int vocab_size_ = 0;
  // Mutable so value_and_grad can run a backward pass on a const model.
  mutable nn::ParamStore<double> ps_;
  ad::Parameter<double>* emb_ = nullptr;
  nn::TransformerBlock<double> block_{};
  ad::Parameter<double>*ln_g_ = nullptr, *ln_b_ = nullptr, *head_w_ = nullptr, *head_b_ = nullptr;
};

struct SspTrainConfig {
  int steps = 400;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double grad_clip_norm = 1.0;
  /// Corrupt training inputs with absorbing masks at a uniform random rate.
  bool noise_aware = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 0 || batch_size < 1) throw std::invalid_argument("invalid labeler training sizes");
    if (!(learning_rate > 0.0) || !(grad_clip_norm > 0.0)) throw std::invalid_argument("invalid labeler optimizer settings");
  }
};

/// Trains a labeler with per-position cross-entropy. Returns the mean loss of
/// the last step through `last_loss` when given.
inline SspClassifier train_ssp_classifier(std::span<const LabeledSequence> corpus, const Vocab& vocab,
                                          const SspTrainConfig& tc = {}, const SspConfig& mc = {},
                                          double* last_loss = nullptr) {
  tc.validate();
  if (corpus.empty()) throw std::invalid_argument("empty labeled corpus");
  for (const auto& r : corpus)
    if (r.seq.ids.size() != r.labels.length()) throw std::invalid_argument("annotation length mismatch in " + r.id);
  SspClassifier model(vocab.size(), mc, derive_seed(tc.seed, 0x55));
  AdamW<double> opt(AdamWConfig{tc.learning_rate, 0.9, 0.98, 1e-8, 0.0});
  const auto q = stationary_distribution(vocab, Stationary::Absorbing);
  for (int step = 0; step < tc.steps; ++step) {
    auto idx = batch_indices(corpus.size(), tc.batch_size, tc.seed, step);
    model.params().zero_grad();
    std::size_t total = 0;
    for (auto i : idx) total += corpus[i].seq.ids.size();
    double loss = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& rec = corpus[idx[b]];
      std::vector<TokenId> ids = rec.seq.ids;
      if (tc.noise_aware) {
        const auto seed = derive_seed(tc.seed, static_cast<std::uint64_t>(step), b);
        CounterRng r(seed, Stream::TimeDraw);
        ids = corrupt_with_keep(rec.seq, 1.0 - r.uniform(), q, vocab, seed).ids;
      }
      ad::Tape<double> t(true);
      auto lp = model.label_log_probs(t, t.constant(one_hot(ids, vocab.size())));
      std::vector<double> w(ids.size(), -1.0);
      auto v = ad::pick_sum(lp, std::span<const int>(rec.labels.labels), std::span<const double>(w));
      loss += v.value()(0, 0);
      t.backward(v, 1.0 / static_cast<double>(total));
    }
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite labeler loss at step " + std::to_string(step));
    clip_grad_norm(model.params(), tc.grad_clip_norm);
    opt.step(model.params(), warmup_lr(tc.learning_rate, step, std::max(1, tc.steps / 100)));
    if (last_loss) *last_loss = loss / static_cast<double>(total);
  }
  return model;
}

/// Per-position label accuracy of the labeler on clean sequences.
inline double labeler_accuracy(const SspClassifier& m, std::span<const LabeledSequence> data) {
  std::size_t hit = 0, n = 0;
  for (const auto& r : data) {
    const auto p = m.predict(std::span<const TokenId>(r.seq.ids));
    for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == r.labels.labels[i];
    n += p.size();
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

/// base + eta * g per entry; normalization happens downstream.
inline ad::Matrix<double> guided_step_logits(const ad::Matrix<double>& base, const ad::Matrix<double>& g, double eta) {
  if (base.rows() != g.rows() || base.cols() != g.cols()) throw std::invalid_argument("guidance gradient shape mismatch");
  if (!g.allFinite()) throw std::invalid_argument("guidance gradient contains non-finite values");
  if (!std::isfinite(eta)) throw std::invalid_argument("eta must be finite");
  return base + eta * g;
}

/// cfg_eta * cond + (1 - cfg_eta) * uncond in log space.
template <typename S>
ad::Matrix<S> cfg_combine(const ad::Matrix<S>& cond, const ad::Matrix<S>& uncond, double cfg_eta) {
  if (cond.rows() != uncond.rows() || cond.cols() != uncond.cols())
    throw std::invalid_argument("classifier-free guidance needs equal logit shapes");
  if (cfg_eta == 1.0) return cond;
  if (cfg_eta == 0.0) return uncond;
  const S w = static_cast<S>(cfg_eta);
  return (w * cond.array() + (S(1) - w) * uncond.array()).matrix();
}

/// Logit function for classifier-free guidance with a conditional denoiser;
/// the unconditional branch is the same model with the adapter bypassed.
template <typename S>
LogitFn cfg_logits(const Denoiser<S>& model, const Vocab& vocab, const ConditionEmbedding<S>& cond, double cfg_eta) {
  if (!model.has_adapter()) throw std::logic_error("classifier-free guidance needs a conditional model");
  auto c = model_logits(model, vocab, &cond);
  if (cfg_eta == 1.0) return c;
  auto u = model_logits<S>(model, vocab, nullptr);
  return [c, u, cfg_eta](const std::vector<TokenId>& ids) { return cfg_combine<double>(c(ids), u(ids), cfg_eta); };
}

/// Sampler hook adding eta * grad log p_phi(y | x_t) to the scaled logits,
/// with the gradient taken at the current one-hot x_t.
inline LogitAdjust classifier_guidance(const GuidanceModel& gm, const Annotation& y, double eta) {
  if (!std::isfinite(eta) || eta < 0.0) throw std::invalid_argument("eta must be finite and non-negative");
  return [&gm, y, eta](const std::vector<TokenId>& ids, ad::Matrix<double>& scaled) {
    auto [v, g] = gm.value_and_grad(one_hot(ids, gm.vocab_size()), y);
    (void)v;
    scaled = guided_step_logits(scaled, g, eta);
  };
}

/// Sampling with classifier guidance on every step. Observed template
/// positions are never touched.
inline TokenSequence guided_infill(const InfillTemplate& tmpl, const LogitFn& fn, const GuidanceModel& gm,
                                   const Annotation& y, double eta, const SamplerConfig& cfg, const Vocab& vocab,
                                   SampleTrace* trace = nullptr) {
  if (y.length() != tmpl.ids.size())
    throw std::invalid_argument("annotation length " + std::to_string(y.length()) + " differs from sample length " +
                                std::to_string(tmpl.ids.size()));
  if (gm.vocab_size() != vocab.size()) throw std::invalid_argument("guidance model vocabulary differs");
  return decode(fn, tmpl, cfg, vocab, trace, classifier_guidance(gm, y, eta));
}

inline TokenSequence guided_sample(std::size_t L, const LogitFn& fn, const GuidanceModel& gm, const Annotation& y,
                                   double eta, const SamplerConfig& cfg, const Vocab& vocab,
                                   SampleTrace* trace = nullptr) {
  if (L < 1) throw std::invalid_argument("sample length must be at least 1");
  return guided_infill(InfillTemplate::all_free(L, vocab), fn, gm, y, eta, cfg, vocab, trace);
}

}  // namespace ddseq
