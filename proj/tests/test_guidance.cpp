#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "ddseq/eval.hpp"
#include "ddseq/grammar.hpp"
#include "ddseq/guidance.hpp"
#include "ddseq/oracle.hpp"
#include "ddseq/sampling.hpp"
#include "gradcheck.hpp"

using namespace ddseq;

namespace {

const Vocab& aa() {
  static const Vocab v = Vocab::amino_acids();
  return v;
}

ad::Matrix<double> softmax_rows(const ad::Matrix<double>& z) {
  ad::Matrix<double> p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    p.row(r) = (z.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

ad::Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  ad::Matrix<double> m(r, c);
  CounterRng rng(seed, Stream::Init);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

SspConfig small_labeler() {
  SspConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_len = 64;
  return c;
}

Annotation random_annotation(std::size_t L, std::uint64_t seed) {
  CounterRng rng(seed, Stream::Corpus);
  Annotation y;
  for (std::size_t i = 0; i < L; ++i) y.labels.push_back(static_cast<int>(rng.below(3)));
  return y;
}

/// log p(y|x) = sum_i <W[y_i], x_i>; gradient rows are W[y_i].
class LinearLabeler final : public GuidanceModel {
 public:
  explicit LinearLabeler(ad::Matrix<double> w) : w_(std::move(w)) {}
  int vocab_size() const override { return static_cast<int>(w_.cols()); }
  std::pair<double, ad::Matrix<double>> value_and_grad(const ad::Matrix<double>& x, const Annotation& y) const override {
    check_relaxed(x, vocab_size(), y);
    ad::Matrix<double> g(x.rows(), x.cols());
    double v = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      g.row(i) = w_.row(y.labels[static_cast<std::size_t>(i)]);
      v += g.row(i).dot(x.row(i));
    }
    return {v, g};
  }

 private:
  ad::Matrix<double> w_;
};

Denoiser<double> tiny_denoiser(std::uint64_t seed = 3) {
  DenoiserConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.embed_dim = 16;
  c.ffn_dim = 32;
  c.max_len = 64;
  return Denoiser<double>(c, aa().size(), seed);
}

const std::vector<LabeledSequence>& grammar_corpus() {
  static const auto c = generate_corpus(SyntheticGrammar::markov(), aa(), 600, 31);
  return c;
}

const std::vector<LabeledSequence>& grammar_held_out() {
  static const auto c = generate_corpus(SyntheticGrammar::markov(), aa(), 100, 32);
  return c;
}

const SspClassifier& trained_labeler() {
  static const SspClassifier m = [] {
    SspTrainConfig tc;
    tc.seed = 4;
    return train_ssp_classifier(grammar_corpus(), aa(), tc);
  }();
  return m;
}

}  // namespace

TEST(ValueAndGrad, MatchesFiniteDifferences) {
  SspClassifier m(aa().size(), small_labeler(), 12);
  const std::size_t L = 5;
  const auto y = random_annotation(L, 2);
  const auto x = softmax_rows(random_matrix(L, aa().size(), 8));
  const auto [v, g] = m.value_and_grad(x, y);
  ASSERT_TRUE(std::isfinite(v));
  ASSERT_EQ(g.rows(), static_cast<Eigen::Index>(L));
  ASSERT_EQ(g.cols(), aa().size());
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    ad::Matrix<double> up = x, down = x;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double numeric = (m.value_and_grad(up, y).first - m.value_and_grad(down, y).first) / (2 * h);
    worst = std::max(worst, testkit::rel_error(g.data()[i], numeric));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(ValueAndGrad, LeavesParameterGradientsAlone) {
  SspClassifier m(aa().size(), small_labeler(), 12);
  m.params().zero_grad();
  const auto y = random_annotation(4, 1);
  m.value_and_grad(one_hot(aa().encode("ACDE"), aa().size()), y);
  double sum = 0.0;
  for (const auto& p : m.params()) sum += p->grad.size() ? p->grad.cwiseAbs().sum() : 0.0;
  EXPECT_EQ(sum, 0.0);
}

TEST(ValueAndGrad, ConstantClassifierHasZeroGradient) {
  SspClassifier m(aa().size(), small_labeler(), 12);
  m.params().find("embed.tokens")->value.setZero();
  const auto y = random_annotation(6, 3);
  const auto [v1, g] = m.value_and_grad(one_hot(aa().encode("ACDEFG"), aa().size()), y);
  const auto [v2, g2] = m.value_and_grad(one_hot(aa().encode("WWWWWW"), aa().size()), y);
  EXPECT_EQ(v1, v2);
  EXPECT_TRUE((g.array() == 0.0).all());
  EXPECT_TRUE((g2.array() == 0.0).all());
}

TEST(ValueAndGrad, LinearClassifierGradientIsWeightRows) {
  const auto w = random_matrix(3, aa().size(), 5);
  LinearLabeler m(w);
  const auto y = parse_annotation("HECCE");
  const auto [v, g] = m.value_and_grad(one_hot(aa().encode("ACDEF"), aa().size()), y);
  for (Eigen::Index i = 0; i < g.rows(); ++i) EXPECT_EQ(g.row(i), w.row(y.labels[static_cast<std::size_t>(i)]));
  (void)v;

  ad::Matrix<double> base = random_matrix(5, aa().size(), 6);
  ad::Matrix<double> adjusted = base;
  classifier_guidance(m, y, 0.5)(aa().encode("ACDEF"), adjusted);
  for (Eigen::Index i = 0; i < base.rows(); ++i)
    for (Eigen::Index k = 0; k < base.cols(); ++k)
      EXPECT_EQ(adjusted(i, k), base(i, k) + 0.5 * w(y.labels[static_cast<std::size_t>(i)], k));
}

TEST(ValueAndGrad, RejectsBadInput) {
  SspClassifier m(aa().size(), small_labeler(), 12);
  const auto x = one_hot(aa().encode("ACDE"), aa().size());
  EXPECT_THROW(m.value_and_grad(x, parse_annotation("HEC")), std::invalid_argument);
  ad::Matrix<double> off = x;
  off(0, 0) += 0.5;
  EXPECT_THROW(m.value_and_grad(off, parse_annotation("HECH")), std::invalid_argument);
  EXPECT_THROW(m.value_and_grad(x.leftCols(5), parse_annotation("HECH")), std::invalid_argument);
  Annotation bad{{0, 1, 2, 3}};
  EXPECT_THROW(m.value_and_grad(x, bad), std::invalid_argument);
}

TEST(GuidedStep, ZeroEtaIsBitwiseIdentity) {
  const auto base = random_matrix(6, aa().size(), 9);
  const auto g = random_matrix(6, aa().size(), 10, 5.0);
  const auto out = guided_step_logits(base, g, 0.0);
  EXPECT_EQ(std::memcmp(out.data(), base.data(), sizeof(double) * static_cast<std::size_t>(base.size())), 0);
}

TEST(GuidedStep, FavoredTokenGainsMassEverywhere) {
  const auto base = random_matrix(8, aa().size(), 11, 2.0);
  ad::Matrix<double> g = ad::Matrix<double>::Zero(8, aa().size());
  const TokenId a = *aa().find("A");
  g.col(a).setConstant(10.0);
  const auto before = softmax_rows(base), after = softmax_rows(guided_step_logits(base, g, 1.0));
  for (Eigen::Index i = 0; i < base.rows(); ++i) EXPECT_GT(after(i, a), before(i, a));
}

TEST(GuidedStep, MatchesEnumerationOracle) {
  using oracle::Real;
  for (std::size_t L : {1u, 2u}) {
    const auto base = random_matrix(static_cast<Eigen::Index>(L), 3, 20 + L, 1.5);
    const auto g = random_matrix(static_cast<Eigen::Index>(L), 3, 30 + L, 2.0);
    for (double eta : {0.0, 0.3, 1.0, 4.0}) {
      const auto p = softmax_rows(base);
      std::vector<std::vector<Real>> rows(L), grows(L);
      for (std::size_t i = 0; i < L; ++i)
        for (int k = 0; k < 3; ++k) {
          rows[i].push_back(p(static_cast<Eigen::Index>(i), k));
          grows[i].push_back(g(static_cast<Eigen::Index>(i), k));
        }
      const auto exact = oracle::enumerate_guided(oracle::product_distribution(rows, {0, 1, 2}), grows, eta);
      const auto guided = softmax_rows(guided_step_logits(base, g, eta));
      for (const auto& [x, q] : exact.probs) {
        double prod = 1.0;
        for (std::size_t i = 0; i < L; ++i) prod *= guided(static_cast<Eigen::Index>(i), x[i]);
        EXPECT_NEAR(prod, static_cast<double>(q), 1e-12);
      }
    }
  }
}

TEST(GuidedStep, VanishingEtaIsContinuous) {
  const auto base = random_matrix(10, aa().size(), 40, 2.0);
  const auto g = random_matrix(10, aa().size(), 41, 3.0);
  const auto p = softmax_rows(base), q = softmax_rows(guided_step_logits(base, g, 1e-8));
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_LT(0.5 * (p.row(i) - q.row(i)).cwiseAbs().sum(), 1e-6);
}

TEST(GuidedStep, PerPositionShiftOfGradientCancels) {
  const auto base = random_matrix(7, aa().size(), 50, 2.0);
  const auto g = random_matrix(7, aa().size(), 51, 3.0);
  ad::Matrix<double> shifted = g;
  for (Eigen::Index i = 0; i < g.rows(); ++i) shifted.row(i).array() += 3.0 * static_cast<double>(i) - 7.5;
  const auto a = softmax_rows(guided_step_logits(base, g, 1.7));
  const auto b = softmax_rows(guided_step_logits(base, shifted, 1.7));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GuidedStep, RejectsBadGradient) {
  const auto base = random_matrix(3, 4, 1);
  EXPECT_THROW(guided_step_logits(base, random_matrix(2, 4, 2), 1.0), std::invalid_argument);
  ad::Matrix<double> g = random_matrix(3, 4, 2);
  g(1, 1) = std::nan("");
  EXPECT_THROW(guided_step_logits(base, g, 1.0), std::invalid_argument);
  EXPECT_THROW(classifier_guidance(LinearLabeler(random_matrix(3, 4, 1)), Annotation{{0}}, -1.0),
               std::invalid_argument);
}

TEST(Cfg, EndpointsAreExact) {
  const auto c = random_matrix(5, aa().size(), 60), u = random_matrix(5, aa().size(), 61);
  const auto one = cfg_combine<double>(c, u, 1.0), zero = cfg_combine<double>(c, u, 0.0);
  EXPECT_EQ(std::memcmp(one.data(), c.data(), sizeof(double) * static_cast<std::size_t>(c.size())), 0);
  EXPECT_EQ(std::memcmp(zero.data(), u.data(), sizeof(double) * static_cast<std::size_t>(u.size())), 0);
  const auto mid = cfg_combine<double>(c, u, 1.5);
  EXPECT_NEAR(mid(2, 3), 1.5 * c(2, 3) - 0.5 * u(2, 3), 1e-14);
  EXPECT_THROW(cfg_combine<double>(c, u.topRows(4), 1.0), std::invalid_argument);
}

TEST(Cfg, ConditionalModelEndpoints) {
  auto m = tiny_denoiser();
  m.attach_adapter({3, 8});
  // Give the adapter non-zero output so the two branches differ.
  for (auto& p : m.params())
    if (p->name.rfind("adapter.", 0) == 0) p->value = random_matrix(p->value.rows(), p->value.cols(), 70, 0.3);
  const auto y = parse_annotation("HHEECCHE");
  const auto cond = label_condition<double>(y);
  const std::vector<TokenId> ids = aa().encode("ACXXEFXG");
  const auto c = model_logits(m, aa(), &cond)(ids), u = model_logits<double>(m, aa(), nullptr)(ids);
  EXPECT_GT((c - u).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(cfg_logits(m, aa(), cond, 1.0)(ids), c);
  EXPECT_EQ(cfg_logits(m, aa(), cond, 0.0)(ids), u);

  SamplerConfig sc;
  sc.steps = 8;
  sc.seed = 5;
  EXPECT_EQ(sample(8, cfg_logits(m, aa(), cond, 1.0), sc, aa()).ids, sample(8, model_logits(m, aa(), &cond), sc, aa()).ids);
  EXPECT_THROW(cfg_logits(tiny_denoiser(), aa(), cond, 1.5), std::logic_error);
}

TEST(Labeler, LearnsDeterministicLabels) {
  EXPECT_GE(labeler_accuracy(trained_labeler(), grammar_held_out()), 0.98);
  SspTrainConfig tc;
  tc.noise_aware = false;
  tc.seed = 4;
  EXPECT_GE(labeler_accuracy(train_ssp_classifier(grammar_corpus(), aa(), tc), grammar_held_out()), 0.98);
}

TEST(Labeler, FullyMaskedInputIsNearUniform) {
  const std::vector<TokenId> masked(40, aa().mask_id());
  const auto lp = trained_labeler().label_log_probs(std::span<const TokenId>(masked));
  ASSERT_TRUE(lp.allFinite());
  for (Eigen::Index i = 0; i < lp.rows(); ++i) {
    const auto p = lp.row(i).array().exp();
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
    const double entropy = -(p * lp.row(i).array()).sum();
    EXPECT_GT(entropy, 0.9 * std::log(3.0));
  }
}

TEST(Labeler, OneHotAndTokenPathsAgree) {
  SspClassifier m(aa().size(), small_labeler(), 13);
  const auto ids = aa().encode("ACDXXWYG");
  const auto a = m.label_log_probs(std::span<const TokenId>(ids));
  const auto b = m.relaxed_label_log_probs(one_hot(ids, aa().size()));
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Labeler, RejectsEmptyCorpus) {
  EXPECT_THROW(train_ssp_classifier({}, aa()), std::invalid_argument);
}

TEST(GuidedSample, ZeroEtaEqualsUnguided) {
  const auto m = tiny_denoiser();
  const auto y = grammar_held_out()[0].labels;
  SamplerConfig sc;
  sc.steps = 20;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    sc.seed = seed;
    EXPECT_EQ(guided_sample(y.length(), model_logits(m, aa()), trained_labeler(), y, 0.0, sc, aa()).ids,
              sample(y.length(), model_logits(m, aa()), sc, aa()).ids);
  }
}

TEST(GuidedSample, RaisesAnnotationMatch) {
  const auto m = tiny_denoiser();
  SamplerConfig sc;
  sc.steps = 16;
  std::vector<TokenSequence> plain, guided;
  const Annotation y = grammar_held_out()[1].labels;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    sc.seed = seed;
    plain.push_back(sample(y.length(), model_logits(m, aa()), sc, aa()));
    guided.push_back(guided_sample(y.length(), model_logits(m, aa()), trained_labeler(), y, 4.0, sc, aa()));
  }
  EXPECT_GT(annotation_match_rate(guided, y, aa()), annotation_match_rate(plain, y, aa()));
}

TEST(GuidedSample, ObservedPositionsStayFixed) {
  const auto m = tiny_denoiser();
  const auto tmpl = InfillTemplate::from_letters("AXXDXXXXWXG", aa());
  const Annotation y = parse_annotation("HEEECCCHHEC");
  SamplerConfig sc;
  sc.steps = 6;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    sc.seed = seed;
    const auto x = guided_infill(tmpl, model_logits(m, aa()), trained_labeler(), y, 4.0, sc, aa());
    for (std::size_t i = 0; i < x.ids.size(); ++i) {
      if (tmpl.observed[i]) EXPECT_EQ(x.ids[i], tmpl.ids[i]);
      EXPECT_TRUE(aa().is_residue(x.ids[i]));
    }
  }
  EXPECT_THROW(guided_infill(tmpl, model_logits(m, aa()), trained_labeler(), parse_annotation("HEC"), 1.0, sc, aa()),
               std::invalid_argument);
}
