#include <gtest/gtest.h>

#include "ddseq/diffusion.hpp"
#include "ddseq/oracle.hpp"
#include "support.hpp"

using namespace ddseq;
using ddseq::testkit::tiny_vocab;

namespace {

TokenSequence seq(const Vocab& v, std::string_view s) { return {v.encode(s)}; }

}  // namespace

TEST(Corrupt, TimeZeroIsIdentity) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(10, Stationary::Uniform, v);
  auto x0 = seq(v, "ACDEFGHIK");
  auto xt = corrupt(x0, 0, s, v, 7);
  EXPECT_EQ(xt.ids, x0.ids);
  EXPECT_EQ(xt.noised_count(), 0u);
}

TEST(Corrupt, FinalStepAbsorbingIsAllMask) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(10, Stationary::Absorbing, v);
  auto xt = corrupt(seq(v, "ACDEFGHIK"), 10, s, v, 7);
  for (TokenId id : xt.ids) EXPECT_EQ(id, v.mask_id());
  EXPECT_EQ(xt.noised_count(), 9u);
}

TEST(Corrupt, RejectsOutOfRangeTimestep) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(10, Stationary::Absorbing, v);
  EXPECT_THROW(corrupt(seq(v, "AC"), 11, s, v, 1), std::out_of_range);
  EXPECT_THROW(corrupt(seq(v, "AC"), -1, s, v, 1), std::out_of_range);
}

TEST(Corrupt, EmptySequence) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(10, Stationary::Absorbing, v);
  EXPECT_TRUE(corrupt(TokenSequence{}, 5, s, v, 1).ids.empty());
}

TEST(Corrupt, MaskFractionMatchesMarginal) {
  Vocab v = tiny_vocab(2);
  auto s = linear_schedule(4, Stationary::Absorbing, v);
  TokenSequence x0{std::vector<TokenId>(100000, v.residue_ids()[0])};
  auto xt = corrupt(x0, 2, s, v, 12345);
  const double frac = static_cast<double>(xt.noised_count()) / 100000.0;
  EXPECT_NEAR(frac, 0.5, 0.005);
}

TEST(Corrupt, DeterministicAndBatchIndependent) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(20, Stationary::Uniform, v);
  auto x0 = seq(v, "ACDEFGHIKLMNPQRSTVWY");
  EXPECT_EQ(corrupt(x0, 9, s, v, 99), corrupt(x0, 9, s, v, 99));
  EXPECT_NE(corrupt(x0, 9, s, v, 99).ids, corrupt(x0, 9, s, v, 100).ids);
}

TEST(Corrupt, AbsorbingNoisedIffMask) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(20, Stationary::Absorbing, v);
  auto x0 = seq(v, "ACDEFGHIKLMNPQRSTVWY");
  for (int t = 0; t <= 20; ++t) {
    auto xt = corrupt(x0, t, s, v, 5);
    for (std::size_t i = 0; i < xt.length(); ++i) EXPECT_EQ(xt.noised[i], xt.ids[i] == v.mask_id());
  }
}

TEST(Corrupt, SpecialsPassThrough) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(4, Stationary::Uniform, v);
  TokenSequence x0{{v.bos_id(), v.residue_ids()[0], v.eos_id(), v.pad_id()}};
  auto xt = corrupt(x0, 4, s, v, 3);
  EXPECT_EQ(xt.ids[0], v.bos_id());
  EXPECT_EQ(xt.ids[2], v.eos_id());
  EXPECT_EQ(xt.ids[3], v.pad_id());
}

TEST(Marginal, Examples) {
  Vocab v = tiny_vocab(2);
  const TokenId A = v.residue_ids()[0], B = v.residue_ids()[1];
  auto sa = linear_schedule(4, Stationary::Absorbing, v);
  auto p = marginal(A, 1, sa, v);
  EXPECT_DOUBLE_EQ(p[A], 0.75);
  EXPECT_DOUBLE_EQ(p[v.mask_id()], 0.25);
  EXPECT_DOUBLE_EQ(p[B], 0.0);
  auto su = linear_schedule(2, Stationary::Uniform, v);
  auto pu = marginal(A, 1, su, v);
  EXPECT_DOUBLE_EQ(pu[A], 0.75);
  EXPECT_DOUBLE_EQ(pu[B], 0.25);
  auto p0 = marginal(A, 0, su, v);
  EXPECT_EQ(p0[A], 1.0);
  EXPECT_THROW(marginal(v.pad_id(), 1, sa, v), std::invalid_argument);
}

TEST(ForwardKernel, Examples) {
  Vocab v = tiny_vocab(2);
  const TokenId A = v.residue_ids()[0];
  auto s = linear_schedule(4, Stationary::Absorbing, v);
  auto p = forward_kernel(A, 1, s, v);
  EXPECT_DOUBLE_EQ(p[A], 0.75);
  EXPECT_DOUBLE_EQ(p[v.mask_id()], 0.25);
  auto pm = forward_kernel(v.mask_id(), 3, s, v);
  EXPECT_EQ(pm[v.mask_id()], 1.0);
  EXPECT_THROW(forward_kernel(A, 0, s, v), std::out_of_range);
  auto id = schedule_from_alpha({1.0, 1.0, 0.0}, v, Stationary::Absorbing);
  EXPECT_EQ(forward_kernel(A, 1, id, v)[A], 1.0);
}

TEST(ForwardKernel, AbsorbingNeverSwapsResidues) {
  Vocab v = tiny_vocab(3);
  auto s = linear_schedule(4, Stationary::Absorbing, v);
  for (int t = 1; t <= 4; ++t)
    for (TokenId a : v.residue_ids())
      for (TokenId b : v.residue_ids())
        if (a != b) EXPECT_EQ(forward_kernel(a, t, s, v)[b], 0.0);
}

TEST(ChapmanKolmogorov, ComposedKernelsMatchMarginal) {
  for (int K = 1; K <= 3; ++K) {
    Vocab v = tiny_vocab(K);
    for (auto st : {Stationary::Absorbing, Stationary::Uniform}) {
      for (int T : {2, 4, 7}) {
        auto s = linear_schedule(T, st, v);
        for (TokenId x0 : v.residue_ids()) {
          std::vector<double> p(v.size(), 0.0);
          p[x0] = 1.0;
          for (int t = 1; t <= T; ++t) {
            std::vector<double> next(v.size(), 0.0);
            for (TokenId a = 0; a < v.size(); ++a) {
              if (p[a] == 0.0) continue;
              auto k = forward_kernel(a, t, s, v);
              for (TokenId b = 0; b < v.size(); ++b) next[b] += p[a] * k[b];
            }
            p = next;
            auto m = marginal(x0, t, s, v);
            for (TokenId b = 0; b < v.size(); ++b) ASSERT_NEAR(p[b], m[b], 1e-12);
          }
        }
      }
    }
  }
}

TEST(PosteriorMixture, MatchesBayesPosterior) {
  for (int K = 1; K <= 3; ++K) {
    Vocab v = tiny_vocab(K);
    for (auto st : {Stationary::Absorbing, Stationary::Uniform}) {
      for (int T : {2, 4, 9}) {
        auto s = linear_schedule(T, st, v);
        auto c = mixture_constants(s);
        auto states = oracle::diffusion_states(v, st);
        for (int t = 1; t <= T; ++t)
          for (TokenId x0 : v.residue_ids())
            for (TokenId xt : states) {
              if (marginal(x0, t, s, v)[xt] == 0.0) continue;
              auto bayes = oracle::posterior_position(xt, x0, t, s, v);
              auto mix = posterior_mixture(xt, x0, t, s, c);
              for (TokenId u = 0; u < v.size(); ++u)
                ASSERT_NEAR(mix[u], static_cast<double>(bayes[u]), 1e-12) << "t=" << t << " xt=" << xt << " x0=" << x0;
            }
      }
    }
  }
}

TEST(PosteriorStep, HalfRevealAtT2) {
  Vocab v = tiny_vocab(2);
  auto s = linear_schedule(4, Stationary::Absorbing, v);
  auto c = mixture_constants(s);
  const int n = 100000;
  TokenSequence x0{std::vector<TokenId>(n, v.residue_ids()[1])};
  NoisedSequence xt{std::vector<TokenId>(n, v.mask_id()), std::vector<bool>(n, true), 2};
  auto out = posterior_step(xt, x0, s, c, v, 4242);
  long revealed = 0;
  for (TokenId id : out.ids) {
    ASSERT_TRUE(id == v.mask_id() || id == x0.ids[0]);
    revealed += id == x0.ids[0];
  }
  EXPECT_NEAR(revealed / static_cast<double>(n), 0.5, 0.005);
  EXPECT_EQ(out.t, 1);
}

TEST(PosteriorStep, FinalStepMaskFraction) {
  Vocab v = tiny_vocab(3);
  auto s = linear_schedule(4, Stationary::Absorbing, v);
  auto c = mixture_constants(s);
  const int n = 100000;
  auto x0 = TokenSequence{std::vector<TokenId>(n, v.residue_ids()[0])};
  auto xt = corrupt(x0, 1, s, v, 31);
  const double masked = static_cast<double>(xt.noised_count()) / n;
  auto out = posterior_step(xt, x0, s, c, v, 32);
  long still = 0;
  for (TokenId id : out.ids) still += id == v.mask_id();
  EXPECT_NEAR(still / static_cast<double>(n), (1.0 - c.lambda2[1]) * masked, 0.01);
}

TEST(PosteriorStep, FullRevealWhenLambda2IsOne) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(1, Stationary::Absorbing, v);
  auto c = mixture_constants(s);
  auto x0 = seq(v, "ACDEFGHIKL");
  auto xt = corrupt(x0, 1, s, v, 1);
  EXPECT_EQ(posterior_step(xt, x0, s, c, v, 2).ids, x0.ids);
}

TEST(PosteriorStep, RejectsMaskEstimate) {
  Vocab v = Vocab::amino_acids();
  auto s = linear_schedule(4, Stationary::Absorbing, v);
  auto c = mixture_constants(s);
  auto xt = corrupt(seq(v, "ACD"), 2, s, v, 1);
  TokenSequence bad{{v.mask_id(), v.residue_ids()[0], v.residue_ids()[0]}};
  EXPECT_THROW(posterior_step(xt, bad, s, c, v, 1), std::invalid_argument);
}

TEST(PosteriorStep, ChiSquaredAgainstOracle) {
  for (auto st : {Stationary::Absorbing, Stationary::Uniform}) {
    Vocab v = tiny_vocab(2);
    auto s = linear_schedule(4, st, v);
    auto c = mixture_constants(s);
    auto states = oracle::diffusion_states(v, st);
    const oracle::State x0{v.residue_ids()[0], v.residue_ids()[1]};
    for (int t = 1; t <= 4; ++t) {
      auto fwd = oracle::enumerate_forward(x0, t, s, v);
      for (const auto& [xt_state, _] : fwd.probs) {
        auto post = oracle::enumerate_posterior(xt_state, x0, t, s, v);
        std::vector<oracle::State> cells;
        std::vector<double> probs;
        for (const auto& [x, p] : post.probs) {
          cells.push_back(x);
          probs.push_back(static_cast<double>(p));
        }
        std::vector<long> counts(cells.size(), 0);
        NoisedSequence xt{xt_state, {}, t};
        const int draws = 20000;
        for (int k = 0; k < draws; ++k) {
          auto out = posterior_step(xt, TokenSequence{x0}, s, c, v, static_cast<std::uint64_t>(k));
          auto it = std::find(cells.begin(), cells.end(), out.ids);
          ASSERT_NE(it, cells.end());
          ++counts[it - cells.begin()];
        }
        auto chi = ddseq::testkit::chi_squared(counts, probs);
        EXPECT_TRUE(chi.pass()) << "stat " << chi.statistic << " crit " << chi.critical;
      }
    }
  }
}

TEST(CorruptWithKeep, AlwaysMasks) {
  Vocab v = Vocab::amino_acids();
  auto q = stationary_distribution(v, Stationary::Absorbing);
  TokenSequence x0{std::vector<TokenId>(50000, v.residue_ids()[3])};
  auto xt = corrupt_with_keep(x0, 0.85, q, v, 8);
  for (std::size_t i = 0; i < xt.length(); ++i) EXPECT_EQ(xt.noised[i], xt.ids[i] == v.mask_id());
  EXPECT_NEAR(static_cast<double>(xt.noised_count()) / 50000, 0.15, 0.005);
}
