#pragma once

// FASTA records with an optional per-record label line "#SS3 HHEC...".

#include <cctype>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddseq/diffusion.hpp"
#include "ddseq/grammar.hpp"
#include "ddseq/vocab.hpp"

namespace ddseq {

enum class UnknownResidue { Reject, MapToMask };

struct FastaError : std::runtime_error {
  std::size_t line;
  FastaError(const std::string& what, std::size_t line_no)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

struct FastaRecord {
  std::string id;
  TokenSequence seq;
  std::optional<Annotation> labels;
};

inline constexpr std::string_view kLabelPrefix = "#SS3";

/// Parses FASTA text. Sequence letters are upper-cased; 'X' is the mask.
/// Letters outside the vocabulary either fail with their line number or
/// become the mask, depending on the policy.
inline std::vector<FastaRecord> parse_fasta(std::istream& in, const Vocab& vocab,
                                            UnknownResidue policy = UnknownResidue::Reject) {
  std::vector<FastaRecord> out;
  std::string line;
  std::size_t no = 0;
  bool open = false;
  auto finish = [&](std::size_t at) {
    if (!open) return;
    if (out.back().seq.ids.empty()) throw FastaError("record '" + out.back().id + "' has no sequence", at);
    if (out.back().labels && out.back().labels->length() != out.back().seq.ids.size())
      throw FastaError("label line length differs from sequence length in '" + out.back().id + "'", at);
  };
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      finish(no);
      std::string id = line.substr(1);
      const auto end = id.find_first_of(" \t");
      if (end != std::string::npos) id.resize(end);
      if (id.empty()) throw FastaError("empty record header", no);
      out.push_back({id, {}, std::nullopt});
      open = true;
      continue;
    }
    if (!open) throw FastaError("sequence data before the first header", no);
    if (line[0] == '#') {
      if (line.rfind(kLabelPrefix, 0) != 0) throw FastaError("unknown annotation line", no);
      std::string body = line.substr(kLabelPrefix.size());
      std::string labels;
      for (char c : body)
        if (!std::isspace(static_cast<unsigned char>(c))) labels += c;
      try {
        out.back().labels = parse_annotation(labels);
      } catch (const std::invalid_argument& e) {
        throw FastaError(e.what(), no);
      }
      continue;
    }
    if (out.back().labels) throw FastaError("sequence data after the label line", no);
    for (char raw : line) {
      if (std::isspace(static_cast<unsigned char>(raw))) continue;
      const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      if (c == 'X') {
        out.back().seq.ids.push_back(vocab.mask_id());
        continue;
      }
      auto id = vocab.find(std::string_view(&c, 1));
      if (!id || !vocab.is_residue(*id)) {
        if (policy == UnknownResidue::Reject) throw FastaError(std::string("illegal residue '") + raw + "'", no);
        out.back().seq.ids.push_back(vocab.mask_id());
        continue;
      }
      out.back().seq.ids.push_back(*id);
    }
  }
  finish(no);
  return out;
}

inline std::vector<FastaRecord> read_fasta(const std::filesystem::path& path, const Vocab& vocab,
                                           UnknownResidue policy = UnknownResidue::Reject) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_fasta(in, vocab, policy);
}

/// Sequence lines wrap at `width` letters (0 disables wrapping).
inline void format_fasta(std::ostream& os, const std::vector<FastaRecord>& records, const Vocab& vocab,
                         std::size_t width = 60) {
  if (records.empty()) throw std::invalid_argument("no records to write");
  for (const auto& r : records) {
    if (r.id.empty() || r.id.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("record id must be a non-empty word");
    if (r.seq.ids.empty()) throw std::invalid_argument("record '" + r.id + "' is empty");
    const std::string s = vocab.decode(r.seq.ids);
    os << '>' << r.id << '\n';
    const std::size_t w = width == 0 ? s.size() : width;
    for (std::size_t i = 0; i < s.size(); i += w) os << s.substr(i, w) << '\n';
    if (r.labels) os << kLabelPrefix << ' ' << format_annotation(*r.labels) << '\n';
  }
}

inline std::string to_fasta(const std::vector<FastaRecord>& records, const Vocab& vocab, std::size_t width = 60) {
  std::ostringstream os;
  format_fasta(os, records, vocab, width);
  return os.str();
}

/// Writes to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_fasta(const std::vector<FastaRecord>& records, const std::filesystem::path& path, const Vocab& vocab,
                        std::size_t width = 60) {
  write_file_atomic(path, to_fasta(records, vocab, width));
}

inline std::vector<FastaRecord> to_records(const std::vector<LabeledSequence>& corpus) {
  std::vector<FastaRecord> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.push_back({r.id, r.seq, r.labels});
  return out;
}

}  // namespace ddseq
