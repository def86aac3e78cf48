// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <set>
#include <string>

#include "test_util.hpp"
#include "tsav/pipeline.hpp"
#include "tsav/synth.hpp"

#ifndef TSAV_CLI_PATH
#error "TSAV_CLI_PATH must be defined by the build"
#endif

using namespace tsav;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// -- 1 ----------------------------------------------------------------------

Outcome sub_spectrogram_shape() {
  Waveform w{std::vector<double>(41000 * 30), 41000.0};
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = 0.3 * std::sin(2 * std::numbers::pi * 440.0 * i / 41000.0);
  const auto t0 = Clock::now();
  const auto spec = mel_spectrogram(w, MelConfig{});
  const auto sub = extract_subspectrogram(spec, 450, 30.0, 10.0);
  const double dt = seconds_since(t0);
  const bool ok = sub.rows == 1001 && sub.n_mels == 64 && sub.data.size() == 1001u * 64 && dt < 1.0;
  return {ok, fmt("%zux%zu from a 30 s waveform in %.3f s", sub.rows, sub.n_mels, dt)};
}

// -- 2 ----------------------------------------------------------------------

Outcome criterion_arithmetic() {
  const double ex = expression_criterion(0.40, 0.70);
  const double au = au_criterion(0.27, 0.93);
  const double m1 = va_score(0.45, 0.41);
  const double m2 = va_score(0.493, 0.613);
  const bool ok = std::abs(ex - 0.50) <= 0.005 && std::abs(au - 0.60) <= 0.005 && std::abs(m1 - 0.43) <= 0.005 &&
                  std::abs(m2 - 0.553) <= 0.005;
  return {ok, fmt("ex %.4f, au %.4f, ccc %.4f, ccc %.4f", ex, au, m1, m2)};
}

// -- 3 ----------------------------------------------------------------------

Outcome soft_labels_normalized() {
  Rng rng(3);
  std::size_t checked = 0, empty_errors = 0, empty_bins = 0;
  double worst = 0.0;
  for (int set = 0; set < 100; ++set) {
    VaHistogramSet h(20);
    for (int e = 0; e < kNumExpressions; ++e)
      for (int v = 0; v < 20; ++v)
        for (int a = 0; a < 20; ++a)
          if (rng.bernoulli(0.3)) h.set_count(static_cast<Expression>(e), v, a, 1 + rng.below(1000));
    for (int v = 0; v < 20; ++v)
      for (int a = 0; a < 20; ++a) {
        const ValenceArousal center{h.bin_lower(v) + 0.05, h.bin_lower(a) + 0.05};
        std::uint64_t n = 0;
        for (int e = 0; e < kNumExpressions; ++e) n += h.count(static_cast<Expression>(e), v, a);
        if (n == 0) {
          ++empty_bins;
          try {
            soft_expression(h, center);
          } catch (const EmptyDistributionError&) {
            ++empty_errors;
          }
          continue;
        }
        const auto p = soft_expression(h, center);
        double s = 0;
        for (double x : p) s += x;
        worst = std::max(worst, std::abs(s - 1.0));
        ++checked;
      }
  }
  const bool ok = worst <= 1e-9 && empty_errors == empty_bins && empty_bins > 0;
  return {ok, fmt("%zu nonempty bins, max |sum-1| = %.2e; %zu/%zu empty bins raised", checked, worst, empty_errors,
                  empty_bins)};
}

// -- 4 ----------------------------------------------------------------------

Outcome filter_exact(const fs::path& corpus, const SyntheticManifest& m) {
  const auto t0 = Clock::now();
  const auto raw = load_dataset(corpus / "annotations");
  const auto out = filter_dataset(raw);
  const double dt = seconds_since(t0);
  std::set<std::tuple<std::string, std::uint32_t, FilterReason>> injected, removed;
  for (const auto& c : m.contradictions) injected.insert({c.video_id, c.frame_index, c.rule});
  for (const auto& r : out.removed) removed.insert({r.video_id, r.frame_index, r.reason});
  std::size_t excluded = 0;
  out.index.for_each([&](const FrameRecord& r) { excluded += r.excluded; });
  const bool ok = raw.size() == 1000 && injected.size() == 137 && removed == injected && excluded == 137 && dt < 1.0;
  return {ok, fmt("%zu frames, %zu injected, %zu removed (rules match: %s) in %.3f s", raw.size(), injected.size(),
                  removed.size(), removed == injected ? "yes" : "no", dt)};
}

// -- 5 ----------------------------------------------------------------------

Outcome clip_indices() {
  const ClipConfig cfg;
  const auto idx = clip_frame_indices(100, cfg);
  const std::vector<std::int64_t> want{58, 64, 70, 76, 82, 88, 94, 100};
  const double span = clip_span_seconds(cfg);
  const bool ok = idx == want && span == 1.6;
  std::string s;
  for (auto i : idx) s += (s.empty() ? "" : ",") + std::to_string(i);
  return {ok, "indices {" + s + "}, span " + fmt("%.17g", span) + " s"};
}

// -- 6 ----------------------------------------------------------------------

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
  return t;
}

ConvWeights random_weights(Rng& rng, const Conv3dSpec& s) {
  ConvWeights w{random_tensor(rng, s.weight_shape()), std::vector<double>(std::size_t(s.out_channels))};
  for (auto& b : w.bias) b = rng.uniform(-1, 1);
  return w;
}

Conv3dSpec random_spec(Rng& rng) {
  Conv3dSpec s;
  s.in_channels = 1 + int(rng.below(3));
  s.out_channels = 1 + int(rng.below(4));
  for (int d = 0; d < 3; ++d) {
    s.kernel[d] = 1 + int(rng.below(3));
    s.stride[d] = 1 + int(rng.below(2));
    s.padding[d] = int(rng.below(2));
  }
  return s;
}

std::vector<std::size_t> random_input(Rng& rng, const Conv3dSpec& s) {
  return {1 + rng.below(2), std::size_t(s.in_channels), std::size_t(s.kernel[0]) + rng.below(4),
          std::size_t(s.kernel[1]) + rng.below(5), std::size_t(s.kernel[2]) + rng.below(5)};
}

// Scalar loop straight from the definition, independent of the library's
// extent helper.
Tensor triple_loop(const Tensor& x, const Conv3dSpec& s, const ConvWeights& w) {
  std::size_t o_ext[3];
  for (int d = 0; d < 3; ++d) o_ext[d] = (x.dim(2 + d) + 2 * s.padding[d] - s.kernel[d]) / s.stride[d] + 1;
  Tensor y({x.dim(0), std::size_t(s.out_channels), o_ext[0], o_ext[1], o_ext[2]});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (int o = 0; o < s.out_channels; ++o)
      for (std::size_t t = 0; t < o_ext[0]; ++t)
        for (std::size_t h = 0; h < o_ext[1]; ++h)
          for (std::size_t q = 0; q < o_ext[2]; ++q) {
            double acc = w.bias[o];
            for (int c = 0; c < s.in_channels; ++c)
              for (int a = 0; a < s.kernel[0]; ++a)
                for (int b = 0; b < s.kernel[1]; ++b)
                  for (int e = 0; e < s.kernel[2]; ++e) {
                    const long it = long(t * s.stride[0]) - s.padding[0] + a;
                    const long ih = long(h * s.stride[1]) - s.padding[1] + b;
                    const long iw = long(q * s.stride[2]) - s.padding[2] + e;
                    if (it < 0 || ih < 0 || iw < 0 || it >= long(x.dim(2)) || ih >= long(x.dim(3)) || iw >= long(x.dim(4)))
                      continue;
                    acc += w.weight.at(o, c, a, b, e) * x.at(n, c, it, ih, iw);
                  }
            y.at(n, o, t, h, q) = acc;
          }
  return y;
}

Outcome convolution_oracle() {
  Rng rng(6);
  int shape_ok = 0;
  double sep_err = 0, direct_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto full = random_spec(rng);
    const auto spec = Conv2Plus1dSpec::from_full(full);
    const auto in = random_input(rng, full);
    const auto x = random_tensor(rng, in);

    // separable weights: W[o,c,a,b,e] = sum_m T[o,m,a] S[m,c,b,e], no spatial bias
    auto sw = random_weights(rng, spec.spatial());
    std::fill(sw.bias.begin(), sw.bias.end(), 0.0);
    const auto tw = random_weights(rng, spec.temporal());
    ConvWeights fw{Tensor(full.weight_shape()), tw.bias};
    for (int o = 0; o < full.out_channels; ++o)
      for (int c = 0; c < full.in_channels; ++c)
        for (int a = 0; a < full.kernel[0]; ++a)
          for (int b = 0; b < full.kernel[1]; ++b)
            for (int e = 0; e < full.kernel[2]; ++e) {
              double acc = 0;
              for (int m = 0; m < spec.mid_channels; ++m) acc += tw.weight.at(o, m, a, 0, 0) * sw.weight.at(m, c, 0, b, e);
              fw.weight.at(o, c, a, b, e) = acc;
            }
    const auto y21 = conv2plus1d(x, spec, sw, tw, Activation::linear);
    const auto y3 = conv3d_direct(x, full, fw);
    shape_ok += y21.shape() == y3.shape();
    if (y21.shape() == y3.shape())
      for (std::size_t i = 0; i < y3.size(); ++i) sep_err = std::max(sep_err, std::abs(y21[i] - y3[i]));

    const auto w = random_weights(rng, full);
    const auto fast = conv3d_direct(x, full, w);
    const auto ref = triple_loop(x, full, w);
    if (fast.shape() != ref.shape()) direct_err = INFINITY;
    else
      for (std::size_t i = 0; i < ref.size(); ++i) direct_err = std::max(direct_err, std::abs(fast[i] - ref[i]));
  }
  const bool ok = shape_ok == 100 && sep_err <= 1e-5 && direct_err <= 1e-6;
  return {ok, fmt("shapes %d/100, separable max err %.2e, direct vs loop max err %.2e", shape_ok, sep_err, direct_err)};
}

// -- 7 ----------------------------------------------------------------------

Outcome midplanes_inequality() {
  std::size_t cases = 0, bad = 0;
  for (std::int64_t t = 1; t <= 4; ++t)
    for (std::int64_t d = 1; d <= 7; ++d)
      for (std::int64_t ni = 1; ni <= 32; ++ni)
        for (std::int64_t no = 1; no <= 32; ++no) {
          ++cases;
          const auto m = midplanes(t, d, ni, no);
          bad += !(m * (d * d * ni + t * no) <= t * d * d * ni * no);
        }
  return {bad == 0, fmt("%zu cases, %zu violations", cases, bad)};
}

// -- 8 ----------------------------------------------------------------------

Prediction random_prediction(Rng& rng) {
  Prediction p;
  p.valence = rng.uniform(-1, 1);
  p.arousal = rng.uniform(-1, 1);
  for (auto& z : p.ex_logits) z = rng.normal(0, 2);
  p.au_logits.resize(8);
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
    std::vector<std::uint8_t> au(8);
    for (auto& b : au) b = rng.bernoulli(0.3);
    t.au = au;
  }
  return t;
}

std::vector<double*> entries(BatchPredictions& p) {
  std::vector<double*> out;
  for (auto& x : p) {
    out.push_back(&x.valence);
    out.push_back(&x.arousal);
    for (auto& z : x.ex_logits) out.push_back(&z);
    for (auto& z : x.au_logits) out.push_back(&z);
  }
  return out;
}

Outcome loss_gradients() {
  Rng rng(8);
  const double h = 1e-5;
  std::size_t checked = 0, bad = 0;
  double worst_rel = 0, worst_abs = 0;
  for (int batch = 0; batch < 100; ++batch) {
    BatchPredictions p(16);
    BatchTargets t(16);
    for (auto& x : p) x = random_prediction(rng);
    for (auto& x : t) x = random_target(rng);
    auto g = multitask_loss(p, t).grad;
    const auto ge = entries(g);
    const auto pe = entries(p);
    for (std::size_t k = 0; k < pe.size(); ++k) {
      const double keep = *pe[k];
      *pe[k] = keep + h;
      const double up = multitask_loss(p, t).loss.total();
      *pe[k] = keep - h;
      const double down = multitask_loss(p, t).loss.total();
      *pe[k] = keep;
      const double num = (up - down) / (2 * h);
      const double abs_err = std::abs(*ge[k] - num);
      const double rel = tsav_test::rel_err(*ge[k], num);
      ++checked;
      worst_abs = std::max(worst_abs, abs_err);
      if (abs_err > 1e-7) {
        worst_rel = std::max(worst_rel, rel);
        bad += rel > 1e-4;
      }
    }
  }

  BatchPredictions p(320);
  BatchTargets t(320);
  for (auto& x : p) x = random_prediction(rng);
  for (auto& x : t) x = random_target(rng);
  const auto full = multitask_loss(p, t).loss;
  double ex = 0, au = 0;
  for (std::size_t part = 0; part < 10; ++part) {
    const BatchPredictions pp(p.begin() + part * 32, p.begin() + (part + 1) * 32);
    const BatchTargets tt(t.begin() + part * 32, t.begin() + (part + 1) * 32);
    const auto l = multitask_loss(pp, tt, LossNormalization{full.n_ex, full.n_au}).loss;
    ex += l.l_ex;
    au += l.l_au;
  }
  const double acc_err = std::max(tsav_test::rel_err(ex, full.l_ex), tsav_test::rel_err(au, full.l_au));

  // CCC is not decomposable: two concordant halves, discordant whole.
  const std::vector<double> pv{0, 1, 10, 11}, yv{0, 1, 0, 1};
  const double whole = ccc(pv, yv);
  const double halves = 0.5 * (ccc(std::span(pv).first(2), std::span(yv).first(2)) + ccc(std::span(pv).last(2), std::span(yv).last(2)));

  const bool ok = bad == 0 && acc_err <= 1e-6 && std::abs(whole - halves) > 0.05;
  return {ok, fmt("%zu partials, %zu over tolerance (max abs err %.2e, worst rel above 1e-7 abs %.2e); accumulation rel err %.2e; ccc whole %.3f vs "
                  "mean of parts %.3f",
                  checked, bad, worst_abs, worst_rel, acc_err, whole, halves)};
}

// -- 9 ----------------------------------------------------------------------

Outcome similarity_recovery() {
  const FivePoints src = kDefaultTemplate5;
  auto map = [&](const SimilarityTransform& t) {
    FivePoints d;
    for (std::size_t i = 0; i < 5; ++i) d[i] = t.apply(src[i]);
    return d;
  };
  auto err = [](const SimilarityTransform& a, const SimilarityTransform& b) {
    return std::max({std::abs(a.scale - b.scale), std::abs(a.rotation - b.rotation),
                     std::abs(a.translation.x - b.translation.x), std::abs(a.translation.y - b.translation.y)});
  };
  const SimilarityTransform known{2.0, 30.0 * std::numbers::pi / 180.0, {5.0, -3.0}};
  const SimilarityTransform shift{1.0, 0.0, {12.5, -7.25}};
  const double e_known = err(estimate_similarity(src, map(known)).transform, known);
  const double e_id = err(estimate_similarity(src, src).transform, SimilarityTransform::identity());
  const double e_tr = err(estimate_similarity(src, map(shift)).transform, shift);
  const bool ok = e_known <= 1e-9 && e_id <= 1e-12 && e_tr <= 1e-12;
  return {ok, fmt("(2, 30 deg, (5,-3)) err %.2e; identity err %.2e; translation err %.2e", e_known, e_id, e_tr)};
}

// -- 10 ---------------------------------------------------------------------

Outcome determinism(const fs::path& corpus, const fs::path& work) {
  double worst = 0;
  std::string hashes[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = work / ("run" + std::to_string(i));
    const std::string cmd = std::string(TSAV_CLI_PATH) + " run --corpus " + corpus.string() + " --out " + out.string() +
                            " --seed 7 > /dev/null";
    const auto t0 = Clock::now();
    const int status = std::system(cmd.c_str());
    worst = std::max(worst, seconds_since(t0));
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "run " + std::to_string(i) + " failed"};
    hashes[i] = fnv1a_hex(artifact_listing(out).dump());
  }
  const bool ok = hashes[0] == hashes[1] && worst < 60.0;
  return {ok, fmt("tree hashes %s / %s, slowest run %.1f s", hashes[0].c_str(), hashes[1].c_str(), worst)};
}

}  // namespace

int main() {
  tsav_test::TempDir tmp;
  SyntheticSpec spec;
  spec.n_videos = 10;
  spec.frames_per_video = 100;
  spec.contradictions = spread_contradictions(137);
  spec.seed = 7;
  const auto corpus = tmp.path() / "corpus";
  const auto manifest = synth_dataset(spec, corpus);

  report(1, "sub-spectrogram shape", sub_spectrogram_shape);
  report(2, "criterion arithmetic", criterion_arithmetic);
  report(3, "soft labels", soft_labels_normalized);
  report(4, "contradiction filter", [&] { return filter_exact(corpus, manifest); });
  report(5, "clip sampling", clip_indices);
  report(6, "convolution oracle", convolution_oracle);
  report(7, "midplanes inequality", midplanes_inequality);
  report(8, "loss gradients", loss_gradients);
  report(9, "similarity transform", similarity_recovery);
  report(10, "determinism and runtime", [&] { return determinism(corpus, tmp.path()); });

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
