#pragma once

// Sequence-side quality, diversity and representation metrics.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ddseq/denoiser.hpp"
#include "ddseq/diffusion.hpp"
#include "ddseq/grammar.hpp"
#include "ddseq/training.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq {

inline double validity_rate(std::span<const TokenSequence> xs, const SyntheticGrammar& g, const Vocab& vocab) {
  if (xs.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& x : xs) ok += g.parses(x, vocab);
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

/// Unique n-grams over all samples divided by the total n-gram count.
inline double distinct_n(std::span<const TokenSequence> xs, int n) {
  if (n < 1) throw std::invalid_argument("n must be at least 1");
  std::set<std::vector<TokenId>> seen;
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.ids.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= x.ids.size(); ++i) {
      seen.emplace(x.ids.begin() + static_cast<std::ptrdiff_t>(i), x.ids.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  }
  return total ? static_cast<double>(seen.size()) / static_cast<double>(total) : 0.0;
}

inline double sequence_identity(const TokenSequence& a, const TokenSequence& b) {
  if (a.ids.size() != b.ids.size() || a.ids.empty()) throw std::invalid_argument("identity needs equal non-empty lengths");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.ids.size(); ++i) same += a.ids[i] == b.ids[i];
  return static_cast<double>(same) / static_cast<double>(a.ids.size());
}

struct PairwiseIdentity {
  /// Mean over all equal-length pairs.
  double mean = 0.0;
  std::size_t pairs = 0;
  /// Per length: (mean identity, pair count).
  std::map<std::size_t, std::pair<double, std::size_t>> by_length;
};

/// Per-position identity between samples of the same length; absent when no
/// length has two samples.
inline std::optional<PairwiseIdentity> pairwise_identity(std::span<const TokenSequence> xs) {
  std::map<std::size_t, std::vector<const TokenSequence*>> groups;
  for (const auto& x : xs) groups[x.ids.size()].push_back(&x);
  PairwiseIdentity out;
  double sum = 0.0;
  for (const auto& [len, g] : groups) {
    if (g.size() < 2 || len == 0) continue;
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j, ++n) s += sequence_identity(*g[i], *g[j]);
    out.by_length[len] = {s / static_cast<double>(n), n};
    sum += s;
    out.pairs += n;
  }
  if (out.pairs == 0) return std::nullopt;
  out.mean = sum / static_cast<double>(out.pairs);
  return out;
}

/// Largest share of any single token within one sequence.
inline double max_token_frequency(const TokenSequence& x) {
  if (x.ids.empty()) return 0.0;
  std::map<TokenId, std::size_t> f;
  std::size_t best = 0;
  for (TokenId id : x.ids) best = std::max(best, ++f[id]);
  return static_cast<double>(best) / static_cast<double>(x.ids.size());
}

/// Fraction of samples whose most frequent token covers >= threshold of it.
inline double collapse_rate(std::span<const TokenSequence> xs, double threshold = 0.9) {
  if (xs.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) n += max_token_frequency(x) >= threshold;
  return static_cast<double>(n) / static_cast<double>(xs.size());
}

/// Per-position agreement between the grammar labels of each sample and the
/// target annotation; letters outside the grammar count as misses.
inline double annotation_match_rate(std::span<const TokenSequence> xs, const Annotation& target, const Vocab& vocab) {
  std::size_t hit = 0, n = 0;
  for (const auto& x : xs) {
    if (x.ids.size() != target.length()) throw std::invalid_argument("sample length differs from annotation");
    for (std::size_t i = 0; i < x.ids.size(); ++i) {
      const auto& sym = vocab.symbol(x.ids[i]);
      const int k = sym.size() == 1 ? SyntheticGrammar::class_of(sym[0]) : -1;
      hit += k == target.labels[i];
      ++n;
    }
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

/// Fraction of free template positions where the sample equals the reference.
inline double infill_exact_match(std::span<const TokenSequence> samples, std::span<const TokenSequence> references,
                                 std::span<const std::vector<bool>> observed) {
  if (samples.size() != references.size() || samples.size() != observed.size())
    throw std::invalid_argument("infill match needs one reference and template per sample");
  std::size_t hit = 0, n = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k].ids;
    const auto& r = references[k].ids;
    if (s.size() != r.size() || s.size() != observed[k].size()) throw std::invalid_argument("infill length mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (observed[k][i]) continue;
      hit += s[i] == r[i];
      ++n;
    }
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

struct EvalReport {
  std::size_t num_samples = 0;
  double validity = 0.0;
  std::array<double, 4> distinct{};
  std::optional<PairwiseIdentity> identity;
  std::optional<double> pseudo_perplexity;
  std::optional<double> infill_exact_match;
  std::optional<double> annotation_match;
  double collapse_rate = 0.0;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["num_samples"] = r.num_samples;
  j["validity"] = r.validity;
  j["distinct"] = {{"1", r.distinct[0]}, {"2", r.distinct[1]}, {"3", r.distinct[2]}, {"4", r.distinct[3]}};
  if (r.identity) {
    nlohmann::json by = nlohmann::json::object();
    for (const auto& [len, v] : r.identity->by_length) by[std::to_string(len)] = {{"mean", v.first}, {"pairs", v.second}};
    j["pairwise_identity"] = {{"mean", r.identity->mean}, {"pairs", r.identity->pairs}, {"by_length", by}};
  } else {
    j["pairwise_identity"] = nullptr;
  }
  j["pseudo_perplexity"] = r.pseudo_perplexity ? nlohmann::json(*r.pseudo_perplexity) : nlohmann::json(nullptr);
  j["infill_exact_match"] = r.infill_exact_match ? nlohmann::json(*r.infill_exact_match) : nlohmann::json(nullptr);
  j["annotation_match"] = r.annotation_match ? nlohmann::json(*r.annotation_match) : nlohmann::json(nullptr);
  j["collapse_rate"] = r.collapse_rate;
  return j;
}

/// Metrics that need only the samples and the grammar. Model-based and
/// reference-based fields are filled by the caller when available.
inline EvalReport evaluate(std::span<const TokenSequence> samples, const SyntheticGrammar& g, const Vocab& vocab) {
  if (samples.empty()) throw std::invalid_argument("no samples to evaluate");
  EvalReport r;
  r.num_samples = samples.size();
  r.validity = validity_rate(samples, g, vocab);
  for (int n = 1; n <= 4; ++n) r.distinct[static_cast<std::size_t>(n - 1)] = distinct_n(samples, n);
  r.identity = pairwise_identity(samples);
  r.collapse_rate = collapse_rate(samples);
  return r;
}

template <typename S>
EvalReport evaluate(std::span<const TokenSequence> samples, const SyntheticGrammar& g, const Vocab& vocab,
                    const Denoiser<S>& model) {
  EvalReport r = evaluate(samples, g, vocab);
  r.pseudo_perplexity = mean_pseudo_perplexity<S>(samples, model, vocab);
  return r;
}

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t train_positions = 0, test_positions = 0;
};

/// Per-position linear classifier on frozen features, fitted by ridge
/// regression onto one-hot labels. The first train_fraction of the sequences
/// are used for fitting, the rest for the reported accuracy.
inline ProbeResult linear_probe(std::span<const ad::Matrix<double>> features, std::span<const std::vector<int>> labels,
                                int num_classes, double train_fraction = 0.8, double ridge = 1e-2) {
  if (features.size() != labels.size() || features.size() < 2)
    throw std::invalid_argument("probe needs at least two sequences with labels");
  if (num_classes < 2) throw std::invalid_argument("probe needs at least two classes");
  std::set<int> classes;
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (static_cast<std::size_t>(features[k].rows()) != labels[k].size())
      throw std::invalid_argument("feature rows differ from label count");
    for (int l : labels[k]) {
      if (l < 0 || l >= num_classes) throw std::invalid_argument("label out of range");
      classes.insert(l);
    }
  }
  if (classes.size() < 2) throw std::invalid_argument("probe labels contain a single class");
  const auto d = features.front().cols();
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(train_fraction * static_cast<double>(features.size())), 1, features.size() - 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d + 1, num_classes);
  Eigen::VectorXd z(d + 1);
  ProbeResult r;
  for (std::size_t k = 0; k < n_train; ++k) {
    if (features[k].cols() != d) throw std::invalid_argument("feature widths differ");
    for (Eigen::Index i = 0; i < features[k].rows(); ++i) {
      z.head(d) = features[k].row(i).transpose();
      z(d) = 1.0;
      A.selfadjointView<Eigen::Lower>().rankUpdate(z);
      B.col(labels[k][static_cast<std::size_t>(i)]) += z;
      ++r.train_positions;
    }
  }
  A = A.selfadjointView<Eigen::Lower>();
  A.diagonal().head(d).array() += ridge * static_cast<double>(r.train_positions);
  const Eigen::MatrixXd W = A.ldlt().solve(B);
  auto accuracy = [&](std::size_t lo, std::size_t hi, std::size_t& count) {
    std::size_t hit = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      if (features[k].cols() != d) throw std::invalid_argument("feature widths differ");
      for (Eigen::Index i = 0; i < features[k].rows(); ++i) {
        z.head(d) = features[k].row(i).transpose();
        z(d) = 1.0;
        Eigen::Index best;
        (z.transpose() * W).maxCoeff(&best);
        hit += static_cast<int>(best) == labels[k][static_cast<std::size_t>(i)];
        ++count;
      }
    }
    return count ? static_cast<double>(hit) / static_cast<double>(count) : 0.0;
  };
  std::size_t tr = 0;
  r.train_accuracy = accuracy(0, n_train, tr);
  r.test_accuracy = accuracy(n_train, features.size(), r.test_positions);
  return r;
}

/// Features h(x) for each sequence in double precision.
template <typename S>
std::vector<ad::Matrix<double>> embed_all(const Denoiser<S>& model, std::span<const TokenSequence> xs, const Vocab& vocab) {
  std::vector<ad::Matrix<double>> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(model.embed(x, vocab).template cast<double>());
  return out;
}

}  // namespace ddseq
