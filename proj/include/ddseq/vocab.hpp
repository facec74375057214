#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ddseq {

using TokenId = std::int32_t;

inline constexpr std::string_view kCanonicalAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

inline constexpr std::string_view kMaskSymbol = "[X]";
inline constexpr std::string_view kPadSymbol = "[PAD]";
inline constexpr std::string_view kBosSymbol = "[BOS]";
inline constexpr std::string_view kEosSymbol = "[EOS]";

/// Token alphabet. Residue symbols come first in the order given; the four
/// special symbols are appended when the caller did not list them.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(std::span<const std::string> alphabet) {
    if (alphabet.empty()) throw std::invalid_argument("empty alphabet");
    Vocab v;
    for (const auto& sym : alphabet) {
      if (sym.empty()) throw std::invalid_argument("empty symbol in alphabet");
      if (v.index_.contains(sym)) throw std::invalid_argument("duplicate symbol " + sym);
      v.index_.emplace(sym, static_cast<TokenId>(v.symbols_.size()));
      v.symbols_.push_back(sym);
    }
    for (auto special : {kMaskSymbol, kPadSymbol, kBosSymbol, kEosSymbol}) {
      std::string s(special);
      if (!v.index_.contains(s)) {
        v.index_.emplace(s, static_cast<TokenId>(v.symbols_.size()));
        v.symbols_.push_back(s);
      }
    }
    v.mask_id_ = v.index_.at(std::string(kMaskSymbol));
    v.pad_id_ = v.index_.at(std::string(kPadSymbol));
    v.bos_id_ = v.index_.at(std::string(kBosSymbol));
    v.eos_id_ = v.index_.at(std::string(kEosSymbol));
    v.residue_.assign(v.symbols_.size(), false);
    for (TokenId id = 0; id < v.size(); ++id) {
      if (id != v.mask_id_ && id != v.pad_id_ && id != v.bos_id_ && id != v.eos_id_) {
        v.residue_[id] = true;
        v.residue_ids_.push_back(id);
      }
    }
    if (v.residue_ids_.empty()) throw std::invalid_argument("alphabet has no residue symbols");
    return v;
  }

  /// Splits a string of single-character residues, e.g. "ACDE".
  static Vocab from_letters(std::string_view letters) {
    std::vector<std::string> syms;
    for (char c : letters) syms.emplace_back(1, c);
    return build(syms);
  }

  static Vocab amino_acids() { return from_letters(kCanonicalAminoAcids); }

  TokenId size() const { return static_cast<TokenId>(symbols_.size()); }
  TokenId mask_id() const { return mask_id_; }
  TokenId pad_id() const { return pad_id_; }
  TokenId bos_id() const { return bos_id_; }
  TokenId eos_id() const { return eos_id_; }

  /// A residue is any symbol that is not one of the four specials.
  bool is_residue(TokenId id) const { return id >= 0 && id < size() && residue_[id]; }
  /// pad/bos/eos: never corrupted, never sampled.
  bool is_special(TokenId id) const { return id == pad_id_ || id == bos_id_ || id == eos_id_; }
  bool valid(TokenId id) const { return id >= 0 && id < size(); }

  const std::vector<TokenId>& residue_ids() const { return residue_ids_; }
  int num_residues() const { return static_cast<int>(residue_ids_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(TokenId id) const { return symbols_.at(id); }

  std::optional<TokenId> find(std::string_view sym) const {
    auto it = index_.find(std::string(sym));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Encodes single-letter residues. 'X' maps to the mask token.
  std::vector<TokenId> encode(std::string_view letters) const {
    std::vector<TokenId> out;
    out.reserve(letters.size());
    for (char c : letters) {
      if (c == 'X') {
        out.push_back(mask_id_);
        continue;
      }
      auto id = find(std::string_view(&c, 1));
      if (!id) throw std::invalid_argument(std::string("unknown residue '") + c + "'");
      out.push_back(*id);
    }
    return out;
  }

  /// Inverse of encode; the mask token renders as 'X'.
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
      if (id == mask_id_) {
        out.push_back('X');
      } else {
        out += symbols_.at(id);
      }
    }
    return out;
  }

  bool operator==(const Vocab& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<bool> residue_;
  std::vector<TokenId> residue_ids_;
  TokenId mask_id_ = -1;
  TokenId pad_id_ = -1;
  TokenId bos_id_ = -1;
  TokenId eos_id_ = -1;
};

inline Vocab build_vocab(std::span<const std::string> alphabet) { return Vocab::build(alphabet); }

}  // namespace ddseq
