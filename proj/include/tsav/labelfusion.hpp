// Cross-task label fusion: valence/arousal histograms per expression, pseudo
// VA sampling, soft expression labels and contradiction filtering.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsav/annotations.hpp"
#include "tsav/common.hpp"

namespace tsav {

inline constexpr int kDefaultHistogramBins = 20;

/// Per-expression B x B count grids over [-1,1]^2, indexed [valence][arousal].
class VaHistogramSet {
 public:
  explicit VaHistogramSet(int bins = kDefaultHistogramBins) : bins_(bins) {
    if (bins < 1) throw std::invalid_argument("histogram bins must be >= 1");
    for (auto& g : counts_) g.assign(static_cast<std::size_t>(bins) * bins, 0);
    totals_.fill(0);
  }

  int bins() const { return bins_; }
  double bin_width() const { return 2.0 / bins_; }

  /// Uniform bins over [-1,1]; 1.0 lands in the last bin.
  int bin_of(double x) const {
    int b = static_cast<int>(std::floor((x + 1.0) / 2.0 * bins_));
    return std::clamp(b, 0, bins_ - 1);
  }

  double bin_lower(int b) const { return -1.0 + b * bin_width(); }

  void add(Expression e, const ValenceArousal& va, std::uint64_t n = 1) {
    at(e, bin_of(va.valence), bin_of(va.arousal)) += n;
    totals_[idx(e)] += n;
  }

  std::uint64_t count(Expression e, int vbin, int abin) const {
    return counts_[idx(e)][static_cast<std::size_t>(vbin) * bins_ + abin];
  }

  std::uint64_t total(Expression e) const { return totals_[idx(e)]; }

  const std::vector<std::uint64_t>& grid(Expression e) const { return counts_[idx(e)]; }

  /// Associative, commutative merge of partial histograms.
  void merge(const VaHistogramSet& other) {
    if (other.bins_ != bins_) throw std::invalid_argument("histogram bin mismatch in merge");
    for (std::size_t e = 0; e < counts_.size(); ++e) {
      for (std::size_t i = 0; i < counts_[e].size(); ++i) counts_[e][i] += other.counts_[e][i];
      totals_[e] += other.totals_[e];
    }
  }

  void set_count(Expression e, int vbin, int abin, std::uint64_t n) {
    auto& c = at(e, vbin, abin);
    totals_[idx(e)] = totals_[idx(e)] - c + n;
    c = n;
  }

  friend bool operator==(const VaHistogramSet&, const VaHistogramSet&) = default;

 private:
  static std::size_t idx(Expression e) { return static_cast<std::size_t>(e); }

  std::uint64_t& at(Expression e, int vbin, int abin) {
    return counts_[idx(e)][static_cast<std::size_t>(vbin) * bins_ + abin];
  }

  int bins_;
  std::array<std::vector<std::uint64_t>, kNumExpressions> counts_;
  std::array<std::uint64_t, kNumExpressions> totals_{};
};

/// Only frames carrying both a valid expression and valid VA contribute.
/// Excluded frames are skipped.
inline VaHistogramSet build_va_histograms(const DatasetIndex& index, int bins = kDefaultHistogramBins) {
  VaHistogramSet total(bins);
  for (const auto& [id, recs] : index.videos()) {
    VaHistogramSet part(bins);
    for (const auto& r : recs)
      if (r.ex && r.va && !r.excluded) part.add(*r.ex, *r.va);
    total.merge(part);
  }
  return total;
}

/// Draw a bin with probability count/total, then a point uniformly inside it.
inline ValenceArousal sample_pseudo_va(const VaHistogramSet& hist, Expression ex, Rng& rng) {
  const auto total = hist.total(ex);
  if (total == 0)
    throw EmptyDistributionError("no VA samples for expression " + std::string(expression_name(ex)));
  std::uint64_t target = rng.below(total);
  const auto& grid = hist.grid(ex);
  std::size_t cell = 0;
  for (; cell < grid.size(); ++cell) {
    if (target < grid[cell]) break;
    target -= grid[cell];
  }
  const int vbin = static_cast<int>(cell / hist.bins());
  const int abin = static_cast<int>(cell % hist.bins());
  const double w = hist.bin_width();
  // Clamp guards the upper edge of the last bin against rounding past 1.
  return {std::min(hist.bin_lower(vbin) + w * rng.uniform(), 1.0),
          std::min(hist.bin_lower(abin) + w * rng.uniform(), 1.0)};
}

/// p_i(v,a) = n_i(v,a) / sum_j n_j(v,a) over the bin containing (v,a).
inline SoftExpression soft_expression(const VaHistogramSet& hist, const ValenceArousal& va) {
  if (!va.valid()) throw std::invalid_argument("soft_expression requires valid VA");
  const int vb = hist.bin_of(va.valence);
  const int ab = hist.bin_of(va.arousal);
  std::uint64_t sum = 0;
  for (int i = 0; i < kNumExpressions; ++i) sum += hist.count(static_cast<Expression>(i), vb, ab);
  if (sum == 0) throw EmptyDistributionError("empty VA bin (" + std::to_string(vb) + "," + std::to_string(ab) + ")");
  SoftExpression p{};
  for (int i = 0; i < kNumExpressions; ++i)
    p[i] = static_cast<double>(hist.count(static_cast<Expression>(i), vb, ab)) / static_cast<double>(sum);
  return p;
}

// ---------------------------------------------------------------------------
// Filtering

enum class FilterReason : std::uint8_t {
  kept = 0,
  invalid_label,
  happy_negative_valence,
  sad_positive_valence,
  neutral_high_norm,
};

inline std::string_view filter_reason_name(FilterReason r) {
  switch (r) {
    case FilterReason::kept: return "kept";
    case FilterReason::invalid_label: return "invalid_label";
    case FilterReason::happy_negative_valence: return "happy_negative_valence";
    case FilterReason::sad_positive_valence: return "sad_positive_valence";
    case FilterReason::neutral_high_norm: return "neutral_high_norm";
  }
  return "?";
}

inline constexpr double kNeutralNormLimit = 0.5;

inline FilterReason contradiction_reason(const FrameRecord& r) {
  if (r.va_raw_invalid || r.ex_raw_invalid) return FilterReason::invalid_label;
  if (!r.ex || !r.va) return FilterReason::kept;
  const double v = r.va->valence;
  const double a = r.va->arousal;
  switch (*r.ex) {
    case Expression::happiness:
      if (v < 0.0) return FilterReason::happy_negative_valence;
      break;
    case Expression::sadness:
      if (v > 0.0) return FilterReason::sad_positive_valence;
      break;
    case Expression::neutral:
      if (std::sqrt(v * v + a * a) > kNeutralNormLimit) return FilterReason::neutral_high_norm;
      break;
    default:
      break;
  }
  return FilterReason::kept;
}

struct FilterResult {
  FrameRecord record;
  FilterReason reason;
};

inline FilterResult filter_record(FrameRecord r) {
  const auto reason = contradiction_reason(r);
  r.excluded = reason != FilterReason::kept;
  return {std::move(r), reason};
}

struct FilterReport {
  std::size_t removed_invalid = 0;
  std::size_t removed_happy_neg = 0;
  std::size_t removed_sad_pos = 0;
  std::size_t removed_neutral_highnorm = 0;
  std::size_t kept = 0;

  std::size_t total() const {
    return removed_invalid + removed_happy_neg + removed_sad_pos + removed_neutral_highnorm + kept;
  }
  std::size_t removed() const { return total() - kept; }

  void tally(FilterReason r) {
    switch (r) {
      case FilterReason::kept: ++kept; break;
      case FilterReason::invalid_label: ++removed_invalid; break;
      case FilterReason::happy_negative_valence: ++removed_happy_neg; break;
      case FilterReason::sad_positive_valence: ++removed_sad_pos; break;
      case FilterReason::neutral_high_norm: ++removed_neutral_highnorm; break;
    }
  }
  friend bool operator==(const FilterReport&, const FilterReport&) = default;
};

struct FilteredFrame {
  std::string video_id;
  std::uint32_t frame_index;
  FilterReason reason;
};

struct FilterOutcome {
  DatasetIndex index;
  FilterReport report;
  std::vector<FilteredFrame> removed;  // in index order
};

inline FilterOutcome filter_dataset(const DatasetIndex& index) {
  FilterOutcome out;
  out.index = index.transformed([&](FrameRecord& r) {
    auto res = filter_record(r);
    out.report.tally(res.reason);
    if (res.reason != FilterReason::kept)
      out.removed.push_back({r.video_id, r.frame_index, res.reason});
    r = std::move(res.record);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo labels

enum class PseudoPolicy { none, valence, va, va_ex };

inline std::string_view pseudo_policy_name(PseudoPolicy p) {
  switch (p) {
    case PseudoPolicy::none: return "none";
    case PseudoPolicy::valence: return "valence";
    case PseudoPolicy::va: return "va";
    case PseudoPolicy::va_ex: return "va+ex";
  }
  return "?";
}

inline std::optional<PseudoPolicy> parse_pseudo_policy(std::string_view s) {
  if (s == "none") return PseudoPolicy::none;
  if (s == "valence" || s == "valence-only") return PseudoPolicy::valence;
  if (s == "va") return PseudoPolicy::va;
  if (s == "va+ex") return PseudoPolicy::va_ex;
  return std::nullopt;
}

enum class EmptyBinMode { error, skip };

struct PseudoStats {
  std::size_t pseudo_va = 0;
  std::size_t soft_ex = 0;
  std::size_t skipped_empty = 0;
};

/// Fills unlabeled tasks from the histograms. Existing labels are never
/// touched and excluded frames receive nothing. Sampling consumes `rng` in
/// index order, so a fixed seed gives a fixed result; callers resample per
/// epoch by calling again with an advanced rng.
inline DatasetIndex apply_pseudo_policy(const DatasetIndex& index, const VaHistogramSet& hist,
                                        PseudoPolicy policy, Rng& rng,
                                        EmptyBinMode on_empty = EmptyBinMode::error,
                                        PseudoStats* stats = nullptr) {
  if (policy == PseudoPolicy::none) return index;
  PseudoStats local;
  auto out = index.transformed([&](FrameRecord& r) {
    if (r.excluded) return;
    try {
      if (r.ex && !r.va && !r.pseudo_va) {
        const auto s = sample_pseudo_va(hist, *r.ex, rng);
        PartialVa p{s.valence, std::nullopt};
        if (policy != PseudoPolicy::valence) p.arousal = s.arousal;
        r.pseudo_va = p;
        ++local.pseudo_va;
      }
      if (policy == PseudoPolicy::va_ex && r.va && !r.ex && !r.soft_ex) {
        r.soft_ex = soft_expression(hist, *r.va);
        ++local.soft_ex;
      }
    } catch (const EmptyDistributionError& e) {
      if (on_empty == EmptyBinMode::error)
        throw EmptyDistributionError(r.video_id + "#" + std::to_string(r.frame_index) + ": " + e.what());
      ++local.skipped_empty;
    }
  });
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// One block per expression: a comment line then B rows of B counts
/// (rows = valence bins ascending, columns = arousal bins ascending).
inline std::string histogram_text(const VaHistogramSet& hist) {
  std::string out;
  for (int e = 0; e < kNumExpressions; ++e) {
    const auto ex = static_cast<Expression>(e);
    out += "# " + std::string(expression_name(ex)) + " total " + std::to_string(hist.total(ex)) + "\n";
    for (int v = 0; v < hist.bins(); ++v) {
      for (int a = 0; a < hist.bins(); ++a) {
        if (a) out += ' ';
        out += std::to_string(hist.count(ex, v, a));
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace tsav
