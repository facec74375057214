#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ddseq/diffusion.hpp"
#include "ddseq/rng.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq {

/// Per-position labels over a small alphabet (H/E/C by default).
struct Annotation {
  std::vector<int> labels;
  std::size_t length() const { return labels.size(); }
  bool operator==(const Annotation&) const = default;
};

inline constexpr std::string_view kSs3Labels = "HEC";

inline Annotation parse_annotation(std::string_view s, std::string_view alphabet = kSs3Labels) {
  Annotation a;
  for (char ch : s) {
    auto k = alphabet.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (k == std::string_view::npos) throw std::invalid_argument(std::string("unknown label '") + ch + "'");
    a.labels.push_back(static_cast<int>(k));
  }
  return a;
}

inline std::string format_annotation(const Annotation& a, std::string_view alphabet = kSs3Labels) {
  std::string s;
  for (int l : a.labels) s += alphabet.at(static_cast<std::size_t>(l));
  return s;
}

struct LabeledSequence {
  std::string id;
  TokenSequence seq;
  Annotation labels;
};

/// First-order Markov grammar over the amino-acid letters, partitioned into
/// three classes whose index is the label of a token.
///
/// Markov: from the j-th letter of class k, move to the next letter of the
/// same class with probability p_stay, otherwise to a fixed letter of another
/// class. Each letter therefore has exactly two successors.
/// Parity: even positions draw uniformly from class 0, odd positions from
/// classes 1 and 2 together; no dependence on the previous letter.
class SyntheticGrammar {
 public:
  enum class Kind { Markov, Parity };

  static SyntheticGrammar markov(double p_stay = 0.85, int min_len = 32, int max_len = 48) {
    return SyntheticGrammar(Kind::Markov, p_stay, min_len, max_len);
  }
  static SyntheticGrammar parity(int min_len = 16, int max_len = 32) {
    return SyntheticGrammar(Kind::Parity, 0.0, min_len, max_len);
  }

  Kind kind() const { return kind_; }
  double p_stay() const { return p_stay_; }
  int min_len() const { return min_len_; }
  int max_len() const { return max_len_; }
  static constexpr int num_labels() { return 3; }

  static const std::array<std::string_view, 3>& classes() {
    static const std::array<std::string_view, 3> c{"AELMQKRH", "VIYFWT", "GPNDSC"};
    return c;
  }

  /// Class index of a letter, or -1.
  static int class_of(char a) {
    for (int k = 0; k < 3; ++k)
      if (classes()[k].find(a) != std::string_view::npos) return k;
    return -1;
  }

  /// P(next = b | current = a) under the Markov kind.
  double transition(char a, char b) const {
    if (kind_ != Kind::Markov) throw std::logic_error("transition matrix is defined for the Markov grammar");
    auto [stay, move] = successors(a);
    double p = 0.0;
    if (b == stay) p += p_stay_;
    if (b == move) p += 1.0 - p_stay_;
    return p;
  }

  /// P(letter at position i), parity kind.
  double position_prob(std::size_t i, char b) const {
    const int k = class_of(b);
    if (k < 0) return 0.0;
    if (i % 2 == 0) return k == 0 ? 1.0 / static_cast<double>(classes()[0].size()) : 0.0;
    return k == 0 ? 0.0 : 1.0 / static_cast<double>(classes()[1].size() + classes()[2].size());
  }

  /// Whether a letter string can be produced by this grammar (length is not
  /// checked, so samples of any requested length can be judged).
  bool parses(std::string_view s) const {
    if (s.empty()) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (class_of(s[i]) < 0) return false;
      if (kind_ == Kind::Parity) {
        if (position_prob(i, s[i]) == 0.0) return false;
      } else if (i > 0 && transition(s[i - 1], s[i]) == 0.0) {
        return false;
      }
    }
    return true;
  }

  bool parses(const TokenSequence& x, const Vocab& vocab) const {
    std::string s;
    for (TokenId id : x.ids) {
      if (!vocab.is_residue(id) || vocab.symbol(id).size() != 1) return false;
      s += vocab.symbol(id)[0];
    }
    return parses(s);
  }

  /// Labels are the class index of each letter.
  static Annotation labels(std::string_view s) {
    Annotation a;
    for (char ch : s) {
      const int k = class_of(ch);
      if (k < 0) throw std::invalid_argument(std::string("letter outside the grammar: ") + ch);
      a.labels.push_back(k);
    }
    return a;
  }

  std::string generate(CounterRng& rng, int length = 0) const {
    const int L = length > 0 ? length : min_len_ + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len_ - min_len_ + 1)));
    std::string s;
    s.reserve(static_cast<std::size_t>(L));
    if (kind_ == Kind::Parity) {
      const std::string odd = std::string(classes()[1]) + std::string(classes()[2]);
      for (int i = 0; i < L; ++i) {
        if (i % 2 == 0)
          s += classes()[0][rng.below(classes()[0].size())];
        else
          s += odd[rng.below(odd.size())];
      }
      return s;
    }
    s += kCanonicalAminoAcids[rng.below(kCanonicalAminoAcids.size())];
    while (static_cast<int>(s.size()) < L) {
      auto [stay, move] = successors(s.back());
      s += rng.bernoulli(p_stay_) ? stay : move;
    }
    return s;
  }

 private:
  SyntheticGrammar(Kind kind, double p_stay, int min_len, int max_len)
      : kind_(kind), p_stay_(p_stay), min_len_(min_len), max_len_(max_len) {
    if (min_len < 1 || max_len < min_len) throw std::invalid_argument("invalid grammar length range");
    if (kind == Kind::Markov && !(p_stay > 0.0 && p_stay < 1.0)) throw std::invalid_argument("p_stay must be in (0,1)");
  }

  static std::pair<char, char> successors(char a) {
    const int k = class_of(a);
    if (k < 0) throw std::invalid_argument(std::string("letter outside the grammar: ") + a);
    const auto& cls = classes()[k];
    const auto j = cls.find(a);
    const char stay = cls[(j + 1) % cls.size()];
    const auto& other = classes()[(k + 1 + static_cast<int>(j % 2)) % 3];
    const char move = other[(2 * j + 1) % other.size()];
    return {stay, move};
  }

  Kind kind_;
  double p_stay_;
  int min_len_, max_len_;
};

/// n labeled samples; sequence k uses its own stream so the corpus is a pure
/// function of (grammar, n, seed).
inline std::vector<LabeledSequence> generate_corpus(const SyntheticGrammar& g, const Vocab& vocab, std::size_t n,
                                                    std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("corpus size must be at least 1");
  std::vector<LabeledSequence> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    CounterRng rng(seed, Stream::Corpus, k);
    const auto s = g.generate(rng);
    out.push_back({"seq" + std::to_string(k), TokenSequence{vocab.encode(s)}, SyntheticGrammar::labels(s)});
  }
  return out;
}

inline std::vector<TokenSequence> sequences_of(const std::vector<LabeledSequence>& corpus) {
  std::vector<TokenSequence> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.push_back(r.seq);
  return out;
}

}  // namespace ddseq
