#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "ddseq/eval.hpp"
#include "ddseq/fasta.hpp"
#include "ddseq/grammar.hpp"

using namespace ddseq;

namespace {

const Vocab& aa() {
  static const Vocab v = Vocab::amino_acids();
  return v;
}

std::string corpus_text(const std::vector<LabeledSequence>& c) { return to_fasta(to_records(c), aa()); }

}  // namespace

TEST(Corpus, DeterministicPerSeed) {
  const auto g = SyntheticGrammar::markov();
  const auto a = generate_corpus(g, aa(), 1000, 42);
  const auto b = generate_corpus(g, aa(), 1000, 42);
  const auto c = generate_corpus(g, aa(), 1000, 43);
  EXPECT_EQ(corpus_text(a), corpus_text(b));
  EXPECT_NE(corpus_text(a), corpus_text(c));
}

TEST(Corpus, EverySampleParsesAndLabelsFollowTokens) {
  for (const auto& g : {SyntheticGrammar::markov(), SyntheticGrammar::parity()}) {
    for (const auto& r : generate_corpus(g, aa(), 500, 3)) {
      ASSERT_TRUE(g.parses(r.seq, aa()));
      const auto s = aa().decode(r.seq.ids);
      EXPECT_GE(static_cast<int>(s.size()), g.min_len());
      EXPECT_LE(static_cast<int>(s.size()), g.max_len());
      EXPECT_EQ(r.labels, SyntheticGrammar::labels(s));
    }
  }
}

TEST(Corpus, TransitionFrequenciesMatchGrammar) {
  const auto g = SyntheticGrammar::markov();
  std::map<std::pair<char, char>, long> pair_count;
  std::map<char, long> from_count;
  long tokens = 0;
  for (std::size_t k = 0; tokens < 100000; ++k) {
    CounterRng rng(11, Stream::Corpus, k);
    const auto s = g.generate(rng);
    tokens += static_cast<long>(s.size());
    for (std::size_t i = 1; i < s.size(); ++i) {
      ++pair_count[{s[i - 1], s[i]}];
      ++from_count[s[i - 1]];
    }
  }
  for (char a : kCanonicalAminoAcids) {
    ASSERT_GT(from_count[a], 1000) << a;
    for (char b : kCanonicalAminoAcids) {
      const double f = static_cast<double>(pair_count[{a, b}]) / static_cast<double>(from_count[a]);
      EXPECT_NEAR(f, g.transition(a, b), 0.02) << a << "->" << b;
    }
  }
}

TEST(Corpus, RejectsEmptyRequest) {
  EXPECT_THROW(generate_corpus(SyntheticGrammar::markov(), aa(), 0, 1), std::invalid_argument);
}

TEST(Grammar, ParsesOnlyLegalTransitions) {
  const auto g = SyntheticGrammar::markov();
  EXPECT_TRUE(g.parses("AEL"));
  EXPECT_FALSE(g.parses("AA"));
  EXPECT_FALSE(g.parses("B"));
  EXPECT_FALSE(g.parses(""));
}

TEST(Fasta, ParsesSingleRecord) {
  std::istringstream in(">s1\nACDE\n");
  const auto recs = parse_fasta(in, aa());
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].id, "s1");
  EXPECT_EQ(recs[0].seq.ids, aa().encode("ACDE"));
  EXPECT_FALSE(recs[0].labels);
}

TEST(Fasta, LowercaseIsNormalized) {
  std::istringstream in(">s1 some description\nacde\nfg\n");
  const auto recs = parse_fasta(in, aa());
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].id, "s1");
  EXPECT_EQ(aa().decode(recs[0].seq.ids), "ACDEFG");
}

TEST(Fasta, UnknownLetterPolicy) {
  {
    std::istringstream in(">a\nACDE\n>b\nAC\nDBE\n");
    try {
      parse_fasta(in, aa(), UnknownResidue::Reject);
      FAIL() << "expected an error";
    } catch (const FastaError& e) {
      EXPECT_EQ(e.line, 5u);
    }
  }
  std::istringstream in(">b\nACBE\n");
  const auto recs = parse_fasta(in, aa(), UnknownResidue::MapToMask);
  EXPECT_EQ(aa().decode(recs[0].seq.ids), "ACXE");
}

TEST(Fasta, MalformedInputReportsLine) {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_fasta(in, aa());
    } catch (const FastaError& e) {
      return e.line;
    }
    return 0;
  };
  EXPECT_EQ(line_of("ACDE\n"), 1u);
  EXPECT_EQ(line_of(">a\nAC\n>\nAC\n"), 3u);
  EXPECT_EQ(line_of(">a\nAC\n#SS3 HEC\n"), 3u);
  EXPECT_EQ(line_of(">a\nAC\n#XYZ HE\n"), 3u);
  EXPECT_GT(line_of(">a\n>b\nAC\n"), 0u);
}

TEST(Fasta, RoundTripWithLabels) {
  const auto corpus = generate_corpus(SyntheticGrammar::markov(2.0 / 3.0, 1, 130), aa(), 1000, 9);
  const auto text = corpus_text(corpus);
  std::istringstream in(text);
  const auto back = parse_fasta(in, aa());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back[k].id, corpus[k].id);
    EXPECT_EQ(back[k].seq.ids, corpus[k].seq.ids);
    ASSERT_TRUE(back[k].labels);
    EXPECT_EQ(*back[k].labels, corpus[k].labels);
  }
  EXPECT_EQ(to_fasta(back, aa()), text);
}

TEST(Fasta, FileRoundTripIsByteIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "ddseq_fasta_test";
  std::filesystem::create_directories(dir);
  const auto recs = to_records(generate_corpus(SyntheticGrammar::parity(), aa(), 50, 4));
  write_fasta(recs, dir / "a.fasta", aa());
  write_fasta(read_fasta(dir / "a.fasta", aa()), dir / "b.fasta", aa());
  std::ifstream a(dir / "a.fasta"), b(dir / "b.fasta");
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_FALSE(std::filesystem::exists(dir / "a.fasta.tmp"));
  std::filesystem::remove_all(dir);
}

TEST(Fasta, WriteRejectsEmpty) {
  EXPECT_THROW(to_fasta({}, aa()), std::invalid_argument);
}

TEST(Metrics, IdenticalSamplesAreDegenerate) {
  const TokenSequence x{aa().encode("ACDEFGHIKL")};
  const std::vector<TokenSequence> xs(8, x);
  EXPECT_DOUBLE_EQ(distinct_n(xs, 1), 10.0 / 80.0);
  const auto id = pairwise_identity(xs);
  ASSERT_TRUE(id);
  EXPECT_DOUBLE_EQ(id->mean, 1.0);
  EXPECT_EQ(id->pairs, 28u);
}

TEST(Metrics, UniformRandomIdentityNearOneTwentieth) {
  std::vector<TokenSequence> xs;
  const auto res = aa().residue_ids();
  for (int k = 0; k < 50; ++k) {
    CounterRng rng(77, Stream::Corpus, static_cast<std::uint64_t>(k));
    TokenSequence x;
    for (int i = 0; i < 100; ++i) x.ids.push_back(res[rng.below(res.size())]);
    xs.push_back(x);
  }
  const auto id = pairwise_identity(xs);
  ASSERT_TRUE(id);
  EXPECT_NEAR(id->mean, 0.05, 0.01);
}

TEST(Metrics, PairwiseAbsentWithoutPairs) {
  const std::vector<TokenSequence> xs{{aa().encode("ACD")}, {aa().encode("ACDE")}};
  EXPECT_FALSE(pairwise_identity(xs));
  const auto r = evaluate(xs, SyntheticGrammar::markov(), aa());
  EXPECT_TRUE(to_json(r)["pairwise_identity"].is_null());
}

TEST(Metrics, StratifiesByLength) {
  const std::vector<TokenSequence> xs{
      {aa().encode("AAAA")}, {aa().encode("AAAC")}, {aa().encode("CC")}, {aa().encode("DD")}};
  const auto id = pairwise_identity(xs);
  ASSERT_TRUE(id);
  EXPECT_EQ(id->pairs, 2u);
  EXPECT_DOUBLE_EQ(id->by_length.at(4).first, 0.75);
  EXPECT_DOUBLE_EQ(id->by_length.at(2).first, 0.0);
  EXPECT_DOUBLE_EQ(id->mean, 0.375);
}

TEST(Metrics, DistinctInvariantToOrderAndNonIncreasingUnderDuplication) {
  auto xs = sequences_of(generate_corpus(SyntheticGrammar::markov(), aa(), 20, 5));
  const double d2 = distinct_n(xs, 2);
  std::reverse(xs.begin(), xs.end());
  EXPECT_DOUBLE_EQ(distinct_n(xs, 2), d2);
  xs.push_back(xs.front());
  EXPECT_LE(distinct_n(xs, 2), d2);
}

TEST(Metrics, CollapseAndAnnotationMatch) {
  const TokenSequence flat{aa().encode(std::string(100, 'A'))};
  std::string mixed(100, 'A');
  for (int i = 0; i < 20; ++i) mixed[static_cast<std::size_t>(5 * i)] = 'C';
  const std::vector<TokenSequence> xs{flat, {aa().encode(mixed)}};
  EXPECT_DOUBLE_EQ(max_token_frequency(flat), 1.0);
  EXPECT_DOUBLE_EQ(collapse_rate(xs), 0.5);

  const std::vector<TokenSequence> one{{aa().encode("AVG")}};
  EXPECT_DOUBLE_EQ(annotation_match_rate(one, parse_annotation("HEC"), aa()), 1.0);
  EXPECT_DOUBLE_EQ(annotation_match_rate(one, parse_annotation("HHH"), aa()), 1.0 / 3.0);
  EXPECT_THROW(annotation_match_rate(one, parse_annotation("HH"), aa()), std::invalid_argument);
}

TEST(Metrics, InfillExactMatchCountsFreePositionsOnly) {
  const std::vector<TokenSequence> s{{aa().encode("ACDE")}}, r{{aa().encode("AKDL")}};
  const std::vector<std::vector<bool>> obs{{true, false, true, false}};
  EXPECT_DOUBLE_EQ(infill_exact_match(s, r, obs), 0.0);
  const std::vector<std::vector<bool>> obs2{{false, false, false, false}};
  EXPECT_DOUBLE_EQ(infill_exact_match(s, r, obs2), 0.5);
}

TEST(Metrics, ReportIsDeterministicAndInRange) {
  const auto g = SyntheticGrammar::markov();
  const auto xs = sequences_of(generate_corpus(g, aa(), 40, 8));
  const auto a = to_json(evaluate(xs, g, aa())), b = to_json(evaluate(xs, g, aa()));
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_DOUBLE_EQ(a["validity"].get<double>(), 1.0);
  for (const auto& [k, v] : a["distinct"].items()) {
    EXPECT_GE(v.get<double>(), 0.0);
    EXPECT_LE(v.get<double>(), 1.0);
  }
  EXPECT_THROW(evaluate(std::vector<TokenSequence>{}, g, aa()), std::invalid_argument);
}

namespace {

struct ProbeData {
  std::vector<ad::Matrix<double>> features;
  std::vector<TokenSequence> seqs;
};

ProbeData probe_data() {
  DenoiserConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.embed_dim = 32;
  c.ffn_dim = 64;
  c.max_len = 64;
  Denoiser<double> m(c, aa().size(), 21);
  ProbeData d;
  d.seqs = sequences_of(generate_corpus(SyntheticGrammar::markov(), aa(), 120, 6));
  d.features = embed_all(m, d.seqs, aa());
  return d;
}

}  // namespace

TEST(Probe, TokenDeterminedLabelsAreRecovered) {
  const auto d = probe_data();
  std::vector<std::vector<int>> labels;
  for (const auto& x : d.seqs) labels.push_back(SyntheticGrammar::labels(aa().decode(x.ids)).labels);
  const auto r = linear_probe(d.features, labels, 3);
  EXPECT_GE(r.test_accuracy, 0.99);
  EXPECT_GT(r.test_positions, 500u);
}

TEST(Probe, RandomLabelsAreAtChance) {
  const auto d = probe_data();
  std::vector<std::vector<int>> labels;
  for (std::size_t k = 0; k < d.seqs.size(); ++k) {
    CounterRng rng(5, Stream::Corpus, k);
    std::vector<int> l;
    for (std::size_t i = 0; i < d.seqs[k].ids.size(); ++i) l.push_back(static_cast<int>(rng.below(3)));
    labels.push_back(l);
  }
  const auto r = linear_probe(d.features, labels, 3);
  EXPECT_NEAR(r.test_accuracy, 1.0 / 3.0, 0.05);
}

TEST(Probe, RejectsSingleClass) {
  const auto d = probe_data();
  std::vector<std::vector<int>> labels;
  for (const auto& x : d.seqs) labels.emplace_back(x.ids.size(), 1);
  EXPECT_THROW(linear_probe(d.features, labels, 3), std::invalid_argument);
}
