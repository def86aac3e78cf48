#include <gtest/gtest.h>

#include <functional>

#include "test_util.hpp"
#include "tsav/metrics.hpp"

using namespace tsav;

namespace {

constexpr std::size_t kAu = 8;

Prediction random_prediction(Rng& rng) {
  Prediction p;
  p.valence = rng.uniform(-1, 1);
  p.arousal = rng.uniform(-1, 1);
  for (auto& z : p.ex_logits) z = rng.normal(0, 2);
  p.au_logits.resize(kAu);
  for (auto& z : p.au_logits) z = rng.normal(0, 2);
  return p;
}

Target random_target(Rng& rng) {
  Target t;
  if (rng.bernoulli(0.7)) t.valence = rng.uniform(-1, 1);
  if (rng.bernoulli(0.7)) t.arousal = rng.uniform(-1, 1);
  const double u = rng.uniform();
  if (u < 0.4) {
    t.ex.hard = static_cast<Expression>(rng.below(kNumExpressions));
  } else if (u < 0.7) {
    SoftExpression s{};
    double sum = 0;
    for (auto& v : s) sum += (v = rng.uniform());
    for (auto& v : s) v /= sum;
    t.ex.soft = s;
  }
  if (rng.bernoulli(0.6)) {
    std::vector<std::uint8_t> au(kAu);
    for (auto& b : au) b = rng.bernoulli(0.3);
    t.au = au;
  }
  return t;
}

// Visits every scalar of a batch so gradients can be probed uniformly.
void for_each_entry(BatchPredictions& p, const std::function<void(std::size_t, double&)>& fn) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    fn(i, p[i].valence);
    fn(i, p[i].arousal);
    for (auto& z : p[i].ex_logits) fn(i, z);
    for (auto& z : p[i].au_logits) fn(i, z);
  }
}

}  // namespace

TEST(Ccc, Examples) {
  const std::vector<double> x{0.1, 0.5, -0.3};
  EXPECT_DOUBLE_EQ(ccc(x, x), 1.0);
  const std::vector<double> a{1, 2, 3}, b{2, 4, 6};
  // means 2 and 4, variances 2/3 and 8/3, covariance 4/3
  EXPECT_NEAR(ccc(a, b), 8.0 / 22.0, 1e-12);
  const std::vector<double> c(5, 0.3);
  EXPECT_EQ(ccc(c, c), 0.0);
  EXPECT_THROW(ccc(a, std::vector<double>{1, 2}), ShapeError);
  EXPECT_THROW(ccc(std::vector<double>{1}, std::vector<double>{1}), ShapeError);
}

TEST(Ccc, SymmetricAndBounded) {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    const std::size_t n = 2 + rng.below(6);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.normal(0, 1);
    for (auto& v : y) v = rng.bernoulli(0.2) ? rng.normal(0, 1) : 0.5 * x[&v - y.data()] + rng.normal(0, 0.1);
    const double c = ccc(x, y);
    ASSERT_LE(std::abs(c), 1.0 + 1e-12);
    ASSERT_NEAR(c, ccc(y, x), 1e-12);
  }
}

TEST(Ccc, NotDecomposableOverParts) {
  // Each half is perfectly concordant on its own but the halves disagree in
  // offset, so the whole series is not.
  const std::vector<double> p{0, 1, 10, 11}, y{0, 1, 0, 1};
  const double whole = ccc(p, y);
  const double halves = 0.5 * (ccc(std::span(p).first(2), std::span(y).first(2)) +
                               ccc(std::span(p).last(2), std::span(y).last(2)));
  EXPECT_NEAR(ccc(std::span(p).first(2), std::span(y).first(2)), 1.0, 1e-12);
  EXPECT_LT(ccc(std::span(p).last(2), std::span(y).last(2)), 0.1);
  EXPECT_GT(std::abs(whole - halves), 0.05);
}

TEST(Loss, NoExLabelsMeansZeroExTerm) {
  Rng rng(2);
  BatchPredictions p{random_prediction(rng), random_prediction(rng)};
  BatchTargets t(2);
  t[0].valence = 0.2;
  const auto r = multitask_loss(p, t);
  EXPECT_EQ(r.loss.l_ex, 0.0);
  EXPECT_EQ(r.loss.l_va, 0.0);  // a single valence label cannot form a CCC
  for (const auto& g : r.grad)
    for (double v : g.ex_logits) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(multitask_loss({}, {}), ShapeError);
}

TEST(Loss, ConfidentCorrectExpressionApproachesZero) {
  BatchTargets t(1);
  t[0].ex.hard = Expression::surprise;
  double prev = 1e9;
  for (double conf : {1.0, 5.0, 20.0, 50.0}) {
    Prediction p;
    p.ex_logits[static_cast<std::size_t>(Expression::surprise)] = conf;
    const auto l = multitask_loss({p}, t).loss.l_ex;
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(Loss, GradientsMatchCentralDifferences) {
  Rng rng(3);
  const double h = 1e-5;
  for (int batch = 0; batch < 100; ++batch) {
    BatchPredictions p(16);
    BatchTargets t(16);
    for (auto& x : p) x = random_prediction(rng);
    for (auto& x : t) x = random_target(rng);
    const auto analytic = multitask_loss(p, t);
    auto g = analytic.grad;
    std::vector<double> grads;
    for_each_entry(g, [&](std::size_t, double& v) { grads.push_back(v); });
    std::size_t k = 0;
    for_each_entry(p, [&](std::size_t, double& v) {
      const double keep = v;
      v = keep + h;
      const double up = multitask_loss(p, t).loss.total();
      v = keep - h;
      const double down = multitask_loss(p, t).loss.total();
      v = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[k++];
      const bool ok = std::abs(a - numeric) <= 1e-7 || tsav_test::rel_err(a, numeric) <= 1e-4;
      ASSERT_TRUE(ok) << "batch " << batch << " entry " << k - 1 << ": " << a << " vs " << numeric;
    });
  }
}

TEST(Loss, ClassificationTermsAccumulateOverParts) {
  Rng rng(4);
  BatchPredictions p(320);
  BatchTargets t(320);
  for (auto& x : p) x = random_prediction(rng);
  for (auto& x : t) x = random_target(rng);
  const auto full = multitask_loss(p, t).loss;
  const LossNormalization norm{full.n_ex, full.n_au};
  double ex = 0, au = 0;
  for (std::size_t part = 0; part < 10; ++part) {
    const BatchPredictions pp(p.begin() + part * 32, p.begin() + (part + 1) * 32);
    const BatchTargets tt(t.begin() + part * 32, t.begin() + (part + 1) * 32);
    const auto l = multitask_loss(pp, tt, norm).loss;
    ex += l.l_ex;
    au += l.l_au;
  }
  EXPECT_LE(tsav_test::rel_err(ex, full.l_ex), 1e-6);
  EXPECT_LE(tsav_test::rel_err(au, full.l_au), 1e-6);
}

TEST(Loss, CccTermDoesNotAccumulate) {
  BatchPredictions p(4);
  BatchTargets t(4);
  const double pv[] = {0, 1, 10, 11}, yv[] = {0, 1, 0, 1};
  for (int i = 0; i < 4; ++i) {
    p[i].valence = pv[i];
    t[i].valence = yv[i];
  }
  const double full = multitask_loss(p, t).loss.l_va;
  const double first = multitask_loss({p[0], p[1]}, {t[0], t[1]}).loss.l_va;
  const double second = multitask_loss({p[2], p[3]}, {t[2], t[3]}).loss.l_va;
  // neither summing nor averaging the parts recovers the full-batch term
  EXPECT_GT(std::abs(full - (first + second)), 1e-3);
  EXPECT_GT(std::abs(full - 0.5 * (first + second)), 0.05);
}

TEST(F1, PerfectAndUndefined) {
  const std::vector<int> y{0, 1, 2, 1};
  const auto perfect = f1_scores(confusion_from_labels(y, y, 4));
  EXPECT_EQ(perfect.per_class[0], 1.0);
  EXPECT_EQ(perfect.per_class[2], 1.0);
  EXPECT_EQ(perfect.per_class[3], 0.0);  // absent and never predicted
}

TEST(F1, HandcraftedConfusion) {
  // truth 0: predicted 0,0,1   truth 1: 1,1,2   truth 2: 2,0
  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 2, 2}, pred{0, 0, 1, 1, 1, 2, 2, 0};
  const auto cm = confusion_from_labels(truth, pred, 3);
  const auto f = f1_scores(cm);
  // class 0: tp2 fp1 fn1 -> 4/6; class 1: tp2 fp1 fn1 -> 4/6; class 2: tp1 fp1 fn1 -> 2/4
  EXPECT_NEAR(f.per_class[0], 2.0 / 3, 1e-12);
  EXPECT_NEAR(f.per_class[1], 2.0 / 3, 1e-12);
  EXPECT_NEAR(f.per_class[2], 0.5, 1e-12);
  EXPECT_NEAR(f.macro, (2.0 / 3 + 2.0 / 3 + 0.5) / 3, 1e-12);
  EXPECT_NEAR(cm.accuracy(), 5.0 / 8, 1e-12);
}

TEST(Criteria, PublishedScoreComposition) {
  EXPECT_NEAR(expression_criterion(0.40, 0.70), 0.50, 0.005);
  EXPECT_NEAR(expression_criterion(0.29, 0.66), 0.412, 0.0005);
  EXPECT_NEAR(au_criterion(0.27, 0.93), 0.60, 0.005);
  EXPECT_NEAR(au_criterion(0.216, 0.886), 0.551, 0.0005);
  EXPECT_NEAR(va_score(0.45, 0.41), 0.43, 0.005);
  EXPECT_NEAR(va_score(0.493, 0.613), 0.553, 0.0005);
  EXPECT_DOUBLE_EQ(expression_criterion(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(au_criterion(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(va_score(1, 1), 1.0);
}

TEST(Criteria, MonotoneInEachArgument) {
  for (double a = 0; a <= 1.0; a += 0.05)
    for (double b = 0; b <= 0.95; b += 0.05) {
      EXPECT_LE(expression_criterion(a, b), expression_criterion(a, b + 0.05));
      EXPECT_LE(expression_criterion(b, a), expression_criterion(b + 0.05, a));
      EXPECT_LE(au_criterion(a, b), au_criterion(a, b + 0.05));
      EXPECT_LE(au_criterion(b, a), au_criterion(b + 0.05, a));
    }
}

TEST(Evaluate, UsesOnlyLabeledEntries) {
  BatchPredictions p(4);
  BatchTargets t(4);
  for (std::size_t i = 0; i < 4; ++i) {
    p[i].valence = p[i].arousal = 0.1 * double(i);
    p[i].ex_logits[i % 2] = 5;
    p[i].au_logits = {1, -1};
  }
  t[0].valence = 0.0; t[1].valence = 0.1; t[2].valence = 0.2;  // arousal absent everywhere
  t[0].ex.hard = Expression::neutral;
  t[1].ex.hard = Expression::neutral;  // wrong: predicted anger
  t[3].au = std::vector<std::uint8_t>{1, 0};
  const auto r = evaluate(p, t);
  EXPECT_EQ(r.n_v, 3u);
  EXPECT_EQ(r.n_a, 0u);
  EXPECT_NEAR(r.ccc_v, 1.0, 1e-12);
  EXPECT_EQ(r.ccc_a, 0.0);
  EXPECT_EQ(r.n_ex, 2u);
  EXPECT_DOUBLE_EQ(r.ex_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.au_accuracy, 1.0);
  // unit 1 is never positive, so its F1 is 0 by convention
  EXPECT_DOUBLE_EQ(r.au_mean_f1, 0.5);
  EXPECT_DOUBLE_EQ(r.au_criterion_value, 0.75);
  EXPECT_DOUBLE_EQ(r.ex_criterion, expression_criterion(r.ex_macro_f1, r.ex_accuracy));
}

TEST(Targets, PseudoLabelsOnlyForTraining) {
  FrameRecord r;
  r.pseudo_va = PartialVa{0.3, -0.2};
  SoftExpression s{};
  s[3] = 1.0;
  r.soft_ex = s;
  const auto train = target_from_record(r);
  EXPECT_EQ(*train.valence, 0.3);
  EXPECT_TRUE(train.ex.soft);
  const auto eval = label_target(r);
  EXPECT_FALSE(eval.valence);
  EXPECT_FALSE(eval.ex.present());
}

TEST(Targets, PredictionFromVector) {
  std::vector<double> v(17);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i);
  const auto p = prediction_from_vector(v, 8);
  EXPECT_EQ(p.arousal, 1.0);
  EXPECT_EQ(p.ex_logits[6], 8.0);
  EXPECT_EQ(p.au_logits.back(), 16.0);
  EXPECT_THROW(prediction_from_vector(v, 7), ShapeError);
}
