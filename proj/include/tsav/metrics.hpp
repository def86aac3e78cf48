// Multi-task losses with analytic gradients and the challenge evaluation
// criteria (CCC, expression and action-unit scores).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tsav/annotations.hpp"
#include "tsav/common.hpp"

namespace tsav {

inline constexpr double kCccEpsilon = 1e-12;

struct Moments {
  double mean_x = 0, mean_y = 0, var_x = 0, var_y = 0, cov = 0;
};

inline Moments population_moments(std::span<const double> x, std::span<const double> y) {
  Moments m;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mean_x += x[i];
    m.mean_y += y[i];
  }
  m.mean_x /= n;
  m.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mean_x, dy = y[i] - m.mean_y;
    m.var_x += dx * dx;
    m.var_y += dy * dy;
    m.cov += dx * dy;
  }
  m.var_x /= n;
  m.var_y /= n;
  m.cov /= n;
  return m;
}

/// Concordance correlation coefficient with population moments. Returns 0
/// when the denominator vanishes.
inline double ccc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw ShapeError("ccc series lengths differ: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw ShapeError("ccc needs at least 2 samples");
  const auto m = population_moments(x, y);
  const double d = m.mean_x - m.mean_y;
  const double den = m.var_x + m.var_y + d * d;
  if (den < kCccEpsilon) return 0.0;
  return 2.0 * m.cov / den;
}

/// 1 - ccc(pred, target) and its gradient with respect to pred.
inline double ccc_loss(std::span<const double> pred, std::span<const double> target, std::span<double> grad) {
  const double n = static_cast<double>(pred.size());
  const auto m = population_moments(pred, target);
  const double d = m.mean_x - m.mean_y;
  const double den = m.var_x + m.var_y + d * d;
  if (den < kCccEpsilon) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 1.0;
  }
  const double num = 2.0 * m.cov;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dnum = 2.0 * (target[i] - m.mean_y) / n;
    // d(var_x)/dx_i = 2(x_i - mean_x)/n and d(d^2)/dx_i = 2d/n
    const double dden = 2.0 * (pred[i] - m.mean_x) / n + 2.0 * d / n;
    grad[i] = -(dnum * den - num * dden) / (den * den);
  }
  return 1.0 - num / den;
}

// ---------------------------------------------------------------------------
// Batches

struct Prediction {
  double valence = 0.0;
  double arousal = 0.0;
  std::array<double, kNumExpressions> ex_logits{};
  std::vector<double> au_logits;
};

/// Expression target: hard class or a probability vector.
struct ExTarget {
  std::optional<Expression> hard;
  std::optional<SoftExpression> soft;

  bool present() const { return hard.has_value() || soft.has_value(); }
};

struct Target {
  std::optional<double> valence;
  std::optional<double> arousal;
  ExTarget ex;
  std::optional<std::vector<std::uint8_t>> au;
};

using BatchPredictions = std::vector<Prediction>;
using BatchTargets = std::vector<Target>;

struct LossBreakdown {
  double l_ex = 0.0;
  double l_au = 0.0;
  double l_va = 0.0;
  std::size_t n_ex = 0;
  std::size_t n_au = 0;
  std::size_t n_v = 0;
  std::size_t n_a = 0;

  double total() const { return l_ex + l_au + l_va; }
};

struct LossResult {
  LossBreakdown loss;
  BatchPredictions grad;  // same layout as the predictions
};

/// Fixed divisors for split-batch accumulation. When absent, the divisors
/// are the labeled counts of the batch itself.
struct LossNormalization {
  std::size_t n_ex = 0;
  std::size_t n_au = 0;
};

inline std::array<double, kNumExpressions> softmax(const std::array<double, kNumExpressions>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::array<double, kNumExpressions> p{};
  double s = 0.0;
  for (int i = 0; i < kNumExpressions; ++i) s += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= s;
  return p;
}

inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// Each task loss is divided by its labeled count; the VA term is the mean
/// of the valence and arousal CCC losses over their labeled subsets (a term
/// with fewer than 2 labels contributes 0).
inline LossResult multitask_loss(const BatchPredictions& pred, const BatchTargets& tgt,
                                 std::optional<LossNormalization> norm = std::nullopt) {
  if (pred.size() != tgt.size()) throw ShapeError("prediction and target batch sizes differ");
  if (pred.empty()) throw ShapeError("empty batch");
  LossResult res;
  res.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) res.grad[i].au_logits.assign(pred[i].au_logits.size(), 0.0);
  auto& L = res.loss;

  for (const auto& t : tgt) {
    L.n_ex += t.ex.present();
    L.n_au += t.au.has_value();
    L.n_v += t.valence.has_value();
    L.n_a += t.arousal.has_value();
  }
  const double div_ex = static_cast<double>(norm ? norm->n_ex : L.n_ex);
  const double div_au = static_cast<double>(norm ? norm->n_au : L.n_au);

  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& t = tgt[i];
    if (t.ex.present() && div_ex > 0) {
      std::array<double, kNumExpressions> target{};
      if (t.ex.soft) target = *t.ex.soft;
      else target[static_cast<std::size_t>(*t.ex.hard)] = 1.0;
      const auto& z = pred[i].ex_logits;
      const double mx = *std::max_element(z.begin(), z.end());
      double lse = 0.0;
      for (double v : z) lse += std::exp(v - mx);
      lse = mx + std::log(lse);
      const auto q = softmax(z);
      double ce = 0.0;
      for (int k = 0; k < kNumExpressions; ++k) {
        if (target[k] > 0) ce -= target[k] * (z[k] - lse);
        res.grad[i].ex_logits[k] = (q[k] - target[k]) / div_ex;
      }
      L.l_ex += ce / div_ex;
    }
    if (t.au && div_au > 0) {
      const auto& z = pred[i].au_logits;
      if (t.au->size() != z.size())
        throw ShapeError("AU target has " + std::to_string(t.au->size()) + " units, prediction has " + std::to_string(z.size()));
      for (std::size_t k = 0; k < z.size(); ++k) {
        const double y = (*t.au)[k];
        L.l_au -= (y * log_sigmoid(z[k]) + (1.0 - y) * log_sigmoid(-z[k])) / div_au;
        res.grad[i].au_logits[k] = (sigmoid(z[k]) - y) / div_au;
      }
    }
  }

  auto va_term = [&](bool valence) {
    std::vector<double> p, y;
    std::vector<std::size_t> at;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto& lab = valence ? tgt[i].valence : tgt[i].arousal;
      if (!lab) continue;
      p.push_back(valence ? pred[i].valence : pred[i].arousal);
      y.push_back(*lab);
      at.push_back(i);
    }
    if (p.size() < 2) return 0.0;
    std::vector<double> g(p.size());
    const double l = ccc_loss(p, y, g);
    for (std::size_t j = 0; j < at.size(); ++j) (valence ? res.grad[at[j]].valence : res.grad[at[j]].arousal) = 0.5 * g[j];
    return l;
  };
  L.l_va = 0.5 * (va_term(true) + va_term(false));
  return res;
}

// ---------------------------------------------------------------------------
// Classification scores

struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;  // [truth][predicted]

  explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k * k, 0) {}

  void add(std::size_t truth, std::size_t predicted) {
    if (truth >= classes || predicted >= classes) throw IndexError("label outside confusion matrix");
    ++counts[truth * classes + predicted];
  }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  double accuracy() const {
    const auto n = total();
    if (n == 0) return 0.0;
    std::size_t diag = 0;
    for (std::size_t k = 0; k < classes; ++k) diag += at(k, k);
    return static_cast<double>(diag) / static_cast<double>(n);
  }
};

inline ConfusionMatrix confusion_from_labels(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) throw ShapeError("label vectors differ in length");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0) throw IndexError("negative class label");
    m.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return m;
}

struct F1Scores {
  std::vector<double> per_class;
  double macro = 0.0;
};

/// Per-class F1 = 2TP / (2TP + FP + FN), 0 when undefined; macro is the
/// unweighted mean.
inline F1Scores f1_scores(const ConfusionMatrix& m) {
  F1Scores s;
  s.per_class.resize(m.classes, 0.0);
  for (std::size_t k = 0; k < m.classes; ++k) {
    std::size_t tp = m.at(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < m.classes; ++j) {
      if (j == k) continue;
      fp += m.at(j, k);
      fn += m.at(k, j);
    }
    const auto den = 2 * tp + fp + fn;
    s.per_class[k] = den ? 2.0 * tp / static_cast<double>(den) : 0.0;
  }
  if (m.classes) {
    for (double v : s.per_class) s.macro += v;
    s.macro /= static_cast<double>(m.classes);
  }
  return s;
}

/// Multi-label AU scores: binary F1 of the positive class per unit, their
/// mean, and accuracy over every (sample, unit) decision.
struct AuScores {
  std::vector<double> per_unit_f1;
  double mean_f1 = 0.0;
  double accuracy = 0.0;
};

inline AuScores au_scores(const std::vector<std::vector<std::uint8_t>>& truth,
                          const std::vector<std::vector<std::uint8_t>>& predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("AU truth/prediction counts differ");
  AuScores s;
  if (truth.empty()) return s;
  const std::size_t K = truth[0].size();
  std::vector<std::size_t> tp(K), fp(K), fn(K);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != K || predicted[i].size() != K) throw ShapeError("AU vector length mismatch");
    for (std::size_t k = 0; k < K; ++k) {
      const bool t = truth[i][k], p = predicted[i][k];
      correct += t == p;
      tp[k] += t && p;
      fp[k] += !t && p;
      fn[k] += t && !p;
    }
  }
  s.per_unit_f1.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto den = 2 * tp[k] + fp[k] + fn[k];
    s.per_unit_f1[k] = den ? 2.0 * tp[k] / static_cast<double>(den) : 0.0;
    s.mean_f1 += s.per_unit_f1[k];
  }
  if (K) s.mean_f1 /= static_cast<double>(K);
  s.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size() * K);
  return s;
}

inline constexpr double kExF1Weight = 0.67;
inline constexpr double kExAccuracyWeight = 0.33;
inline constexpr double kAuF1Weight = 0.5;
inline constexpr double kAuAccuracyWeight = 0.5;

inline double expression_criterion(double macro_f1, double accuracy) {
  return kExF1Weight * macro_f1 + kExAccuracyWeight * accuracy;
}

inline double au_criterion(double mean_f1, double accuracy) { return kAuF1Weight * mean_f1 + kAuAccuracyWeight * accuracy; }

inline double va_score(double ccc_valence, double ccc_arousal) { return 0.5 * (ccc_valence + ccc_arousal); }

// ---------------------------------------------------------------------------
// Evaluation over a labeled set

struct EvaluationReport {
  double ccc_v = 0.0;
  double ccc_a = 0.0;
  double ccc_mean = 0.0;
  std::vector<double> ex_f1;
  double ex_macro_f1 = 0.0;
  double ex_accuracy = 0.0;
  double ex_criterion = 0.0;
  std::vector<double> au_f1;
  double au_mean_f1 = 0.0;
  double au_accuracy = 0.0;
  double au_criterion_value = 0.0;
  std::size_t n_v = 0, n_a = 0, n_ex = 0, n_au = 0;
};

/// Scores predictions against hard labels only. CCC is computed over the
/// concatenated labeled series; series shorter than 2 score 0.
inline EvaluationReport evaluate(const BatchPredictions& pred, const BatchTargets& tgt) {
  if (pred.size() != tgt.size()) throw ShapeError("prediction and target counts differ");
  EvaluationReport r;
  std::vector<double> pv, tv, pa, ta;
  std::vector<int> ex_truth, ex_pred;
  std::vector<std::vector<std::uint8_t>> au_truth, au_pred;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& p = pred[i];
    const auto& t = tgt[i];
    if (t.valence) { pv.push_back(p.valence); tv.push_back(*t.valence); }
    if (t.arousal) { pa.push_back(p.arousal); ta.push_back(*t.arousal); }
    if (t.ex.hard) {
      ex_truth.push_back(static_cast<int>(*t.ex.hard));
      ex_pred.push_back(static_cast<int>(std::max_element(p.ex_logits.begin(), p.ex_logits.end()) - p.ex_logits.begin()));
    }
    if (t.au) {
      au_truth.push_back(*t.au);
      std::vector<std::uint8_t> bits(p.au_logits.size());
      for (std::size_t k = 0; k < bits.size(); ++k) bits[k] = p.au_logits[k] > 0.0;
      au_pred.push_back(std::move(bits));
    }
  }
  r.n_v = pv.size();
  r.n_a = pa.size();
  r.n_ex = ex_truth.size();
  r.n_au = au_truth.size();
  r.ccc_v = pv.size() >= 2 ? ccc(pv, tv) : 0.0;
  r.ccc_a = pa.size() >= 2 ? ccc(pa, ta) : 0.0;
  r.ccc_mean = va_score(r.ccc_v, r.ccc_a);
  const auto cm = confusion_from_labels(ex_truth, ex_pred, kNumExpressions);
  const auto f1 = f1_scores(cm);
  r.ex_f1 = f1.per_class;
  r.ex_macro_f1 = f1.macro;
  r.ex_accuracy = cm.accuracy();
  r.ex_criterion = expression_criterion(r.ex_macro_f1, r.ex_accuracy);
  const auto au = au_scores(au_truth, au_pred);
  r.au_f1 = au.per_unit_f1;
  r.au_mean_f1 = au.mean_f1;
  r.au_accuracy = au.accuracy;
  r.au_criterion_value = au_criterion(au.mean_f1, au.accuracy);
  return r;
}

/// Training target for a record: real labels first, then pseudo labels.
inline Target target_from_record(const FrameRecord& r) {
  Target t;
  if (r.va) {
    t.valence = r.va->valence;
    t.arousal = r.va->arousal;
  } else if (r.pseudo_va) {
    t.valence = r.pseudo_va->valence;
    t.arousal = r.pseudo_va->arousal;
  }
  if (r.ex) t.ex.hard = r.ex;
  else if (r.soft_ex) t.ex.soft = r.soft_ex;
  if (r.au) t.au = *r.au;
  return t;
}

/// Evaluation target: real labels only.
inline Target label_target(const FrameRecord& r) {
  Target t;
  if (r.va) {
    t.valence = r.va->valence;
    t.arousal = r.va->arousal;
  }
  if (r.ex) t.ex.hard = r.ex;
  if (r.au) t.au = *r.au;
  return t;
}

inline Prediction prediction_from_vector(std::span<const double> v, std::size_t au_count) {
  if (v.size() != 2 + kNumExpressions + au_count)
    throw ShapeError("prediction vector has " + std::to_string(v.size()) + " entries, expected " +
                     std::to_string(2 + kNumExpressions + au_count));
  Prediction p;
  p.valence = v[0];
  p.arousal = v[1];
  std::copy_n(v.begin() + 2, kNumExpressions, p.ex_logits.begin());
  p.au_logits.assign(v.begin() + 2 + kNumExpressions, v.end());
  return p;
}

}  // namespace tsav
