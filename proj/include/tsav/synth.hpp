// Synthetic corpus generator: annotation files with exact label coverage and
// recorded contradiction injections, procedural face frames with landmarks,
// and per-expression tone audio.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "tsav/annotations.hpp"
#include "tsav/audiodsp.hpp"
#include "tsav/common.hpp"
#include "tsav/geometry.hpp"
#include "tsav/image.hpp"
#include "tsav/labelfusion.hpp"
#include "tsav/parallel.hpp"
#include "tsav/serialization.hpp"

namespace tsav {

struct VaGaussian {
  double mean_v = 0.0;
  double mean_a = 0.0;
  double stddev = 0.15;
};

struct ContradictionCounts {
  std::size_t invalid = 0;
  std::size_t happy_neg = 0;
  std::size_t sad_pos = 0;
  std::size_t neutral_high = 0;

  std::size_t total() const { return invalid + happy_neg + sad_pos + neutral_high; }
};

/// Split n injections across the four rules as evenly as possible.
inline ContradictionCounts spread_contradictions(std::size_t n) {
  ContradictionCounts c;
  std::array<std::size_t*, 4> slots{&c.invalid, &c.happy_neg, &c.sad_pos, &c.neutral_high};
  for (std::size_t i = 0; i < n; ++i) ++*slots[i % 4];
  return c;
}

struct SyntheticSpec {
  int n_videos = 10;
  int frames_per_video = 100;
  double ex_coverage = 0.59;
  double va_coverage = 0.75;
  double au_coverage = 0.5;
  std::array<VaGaussian, kNumExpressions> gaussians = {{
      {0.0, 0.0, 0.12},     // neutral
      {-0.5, 0.6, 0.15},    // anger
      {-0.6, 0.3, 0.15},    // disgust
      {-0.4, 0.7, 0.15},    // fear
      {0.6, 0.4, 0.15},     // happiness
      {-0.6, -0.3, 0.15},   // sadness
      {0.2, 0.7, 0.15},     // surprise
  }};
  ContradictionCounts contradictions;
  int image_size = 128;
  double audio_rate = 22050.0;
  std::size_t au_count = kDefaultAuCount;
  double fps = 30.0;
  std::uint64_t seed = 0;

  void check() const {
    if (n_videos < 0 || frames_per_video < 0) throw std::invalid_argument("video and frame counts must be >= 0");
    for (double c : {ex_coverage, va_coverage, au_coverage})
      if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("coverage fractions must lie in [0,1]");
    if (image_size < 32) throw std::invalid_argument("image_size must be >= 32");
    if (!(audio_rate > 0)) throw std::invalid_argument("audio rate must be positive");
    for (const auto& g : gaussians)
      if (!(g.stddev >= 0.0) || std::abs(g.mean_v) > 1 || std::abs(g.mean_a) > 1)
        throw std::invalid_argument("VA gaussian means must lie in [-1,1] with stddev >= 0");
  }
};

inline json to_json(const SyntheticSpec& s) {
  json g = json::array();
  for (const auto& x : s.gaussians) g.push_back({{"mean_v", x.mean_v}, {"mean_a", x.mean_a}, {"stddev", x.stddev}});
  return {{"n_videos", s.n_videos},
          {"frames_per_video", s.frames_per_video},
          {"coverage", {{"ex", s.ex_coverage}, {"va", s.va_coverage}, {"au", s.au_coverage}}},
          {"gaussians", g},
          {"contradictions",
           {{"invalid", s.contradictions.invalid},
            {"happy_neg", s.contradictions.happy_neg},
            {"sad_pos", s.contradictions.sad_pos},
            {"neutral_high", s.contradictions.neutral_high}}},
          {"image_size", s.image_size},
          {"audio_rate", s.audio_rate},
          {"au_count", s.au_count},
          {"fps", s.fps},
          {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const json& j, SyntheticSpec s = {}) {
  s.n_videos = j.value("n_videos", s.n_videos);
  s.frames_per_video = j.value("frames_per_video", s.frames_per_video);
  if (j.contains("coverage")) {
    const auto& c = j["coverage"];
    s.ex_coverage = c.value("ex", s.ex_coverage);
    s.va_coverage = c.value("va", s.va_coverage);
    s.au_coverage = c.value("au", s.au_coverage);
  }
  if (j.contains("gaussians")) {
    const auto& g = j["gaussians"];
    if (!g.is_array() || g.size() != kNumExpressions) throw std::invalid_argument("gaussians must list 7 entries");
    for (std::size_t i = 0; i < kNumExpressions; ++i) {
      s.gaussians[i].mean_v = g[i].value("mean_v", s.gaussians[i].mean_v);
      s.gaussians[i].mean_a = g[i].value("mean_a", s.gaussians[i].mean_a);
      s.gaussians[i].stddev = g[i].value("stddev", s.gaussians[i].stddev);
    }
  }
  if (j.contains("contradictions")) {
    const auto& c = j["contradictions"];
    if (c.is_number_unsigned() || c.is_number_integer()) {
      s.contradictions = spread_contradictions(c.get<std::size_t>());
    } else {
      s.contradictions.invalid = c.value("invalid", s.contradictions.invalid);
      s.contradictions.happy_neg = c.value("happy_neg", s.contradictions.happy_neg);
      s.contradictions.sad_pos = c.value("sad_pos", s.contradictions.sad_pos);
      s.contradictions.neutral_high = c.value("neutral_high", s.contradictions.neutral_high);
    }
  }
  s.image_size = j.value("image_size", s.image_size);
  s.audio_rate = j.value("audio_rate", s.audio_rate);
  s.au_count = j.value("au_count", s.au_count);
  s.fps = j.value("fps", s.fps);
  s.seed = j.value("seed", s.seed);
  return s;
}

// ---------------------------------------------------------------------------
// Procedural face model

/// Canonical 68-point layout in the 112 x 112 aligned frame, consistent with
/// kDefaultTemplate5.
inline Landmarks68 canonical_landmarks() {
  Landmarks68 lm{};
  const double pi = std::numbers::pi;
  for (int i = 0; i <= 16; ++i) {
    const double phi = pi * i / 16.0;
    lm[i] = {56.0 - 44.0 * std::cos(phi), 50.0 + 58.0 * std::sin(phi)};
  }
  for (int k = 0; k < 5; ++k) {
    lm[17 + k] = {24.0 + 6.5 * k, 38.0 - 4.0 * std::sin(pi * k / 4.0)};
    lm[22 + k] = {62.0 + 6.5 * k, 38.0 - 4.0 * std::sin(pi * k / 4.0)};
  }
  const double bridge[4] = {50.0, 57.0, 64.0, 71.7366};
  for (int k = 0; k < 4; ++k) lm[27 + k] = {56.0252, bridge[k]};
  const double base_x[5] = {46, 51, 56, 61, 66};
  const double base_y[5] = {76, 78, 79, 78, 76};
  for (int k = 0; k < 5; ++k) lm[31 + k] = {base_x[k], base_y[k]};
  auto eye = [&](int first, Point c) {
    const double ang[6] = {180, 120, 60, 0, -60, -120};
    for (int k = 0; k < 6; ++k) {
      const double a = ang[k] * pi / 180.0;
      lm[first + k] = {c.x + 8.0 * std::cos(a), c.y - 4.0 * std::sin(a)};
    }
  };
  eye(36, kDefaultTemplate5[0]);
  eye(42, kDefaultTemplate5[1]);
  const Point mouth{(kDefaultTemplate5[3].x + kDefaultTemplate5[4].x) / 2, (kDefaultTemplate5[3].y + kDefaultTemplate5[4].y) / 2};
  const double rx = (kDefaultTemplate5[4].x - kDefaultTemplate5[3].x) / 2;
  for (int k = 0; k < 12; ++k) {
    const double a = pi - k * pi / 6.0;
    lm[48 + k] = {mouth.x + rx * std::cos(a), mouth.y - 7.0 * std::sin(a)};
  }
  lm[48] = kDefaultTemplate5[3];
  lm[54] = kDefaultTemplate5[4];
  for (int k = 0; k < 8; ++k) {
    const double a = pi - k * pi / 4.0;
    lm[60 + k] = {mouth.x + 9.0 * std::cos(a), mouth.y - 3.0 * std::sin(a)};
  }
  return lm;
}

/// Expression-specific deformation of the canonical layout.
inline Landmarks68 expression_landmarks(Expression e) {
  auto lm = canonical_landmarks();
  auto shift = [&](int first, int last, double dx, double dy) {
    for (int i = first; i <= last; ++i) lm[i] = lm[i] + Point{dx, dy};
  };
  auto scale_about = [&](int first, int last, double sx, double sy) {
    Point c;
    for (int i = first; i <= last; ++i) c = c + lm[i];
    c = c * (1.0 / (last - first + 1));
    for (int i = first; i <= last; ++i) lm[i] = {c.x + (lm[i].x - c.x) * sx, c.y + (lm[i].y - c.y) * sy};
  };
  switch (e) {
    case Expression::neutral: break;
    case Expression::anger:
      lm[21] = lm[21] + Point{0, 4};
      lm[22] = lm[22] + Point{0, 4};
      scale_about(48, 59, 0.9, 0.7);
      break;
    case Expression::disgust:
      shift(31, 35, 0, -2);
      shift(49, 53, 0, -3);
      break;
    case Expression::fear:
      shift(17, 26, 0, -4);
      scale_about(36, 41, 1.0, 1.5);
      scale_about(42, 47, 1.0, 1.5);
      break;
    case Expression::happiness:
      lm[48] = lm[48] + Point{-2, -3};
      lm[54] = lm[54] + Point{2, -3};
      scale_about(55, 59, 1.0, 1.3);
      break;
    case Expression::sadness:
      lm[48] = lm[48] + Point{0, 3};
      lm[54] = lm[54] + Point{0, 3};
      lm[21] = lm[21] + Point{0, -3};
      lm[22] = lm[22] + Point{0, -3};
      break;
    case Expression::surprise:
      shift(17, 26, 0, -5);
      scale_about(48, 59, 0.85, 1.8);
      scale_about(60, 67, 0.85, 2.5);
      break;
  }
  return lm;
}

/// Source-image rendering of a face: skin ellipse plus dark feature strokes.
inline Image render_face(const Landmarks68& lm_src, const SimilarityTransform& pose, int size, std::uint8_t shade) {
  Image img(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto g = static_cast<std::uint8_t>(40 + (shade + x + y) % 60);
      img.at(y, x, 0) = g;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = static_cast<std::uint8_t>(g + 20);
    }
  const auto inv = pose.inverse();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Point c = inv.apply({double(x), double(y)});
      const double ex = (c.x - 56.0) / 46.0, ey = (c.y - 64.0) / 52.0;
      if (ex * ex + ey * ey <= 1.0) {
        img.at(y, x, 0) = 205;
        img.at(y, x, 1) = static_cast<std::uint8_t>(160 + shade % 20);
        img.at(y, x, 2) = 130;
      }
    }
  Image strokes(size, size, 1);
  const auto spec = MaskSpec::standard(1.5 * pose.scale);
  std::vector<Point> pts;
  for (const auto& g : spec.groups) {
    if (g.name == "jaw") continue;
    pts.clear();
    for (int i : g.indices) pts.push_back(lm_src[static_cast<std::size_t>(i)]);
    draw_polyline(strokes, pts, g.closed, spec.thickness);
  }
  for (std::size_t i = 0; i < strokes.data.size(); ++i) {
    const double cov = strokes.data[i] / 255.0;
    for (int c = 0; c < 3; ++c) {
      auto& px = img.data[i * 3 + c];
      const double ink = c == 0 ? 70.0 : 30.0;
      px = static_cast<std::uint8_t>(std::lround((1.0 - cov) * px + cov * ink));
    }
  }
  return img;
}

inline constexpr std::array<double, kNumExpressions> kExpressionToneHz = {220.0, 330.0, 370.0, 440.0, 523.25, 196.0, 659.25};

// Prototype AU activations per expression (8 units).
inline constexpr std::array<std::array<std::uint8_t, 8>, kNumExpressions> kAuPrototypes = {{
    {0, 0, 0, 0, 0, 0, 0, 0},
    {0, 0, 1, 1, 0, 0, 1, 0},
    {0, 0, 0, 1, 0, 1, 0, 1},
    {1, 1, 1, 0, 1, 0, 0, 0},
    {0, 0, 0, 0, 1, 1, 0, 1},
    {1, 0, 1, 0, 0, 0, 1, 0},
    {1, 1, 0, 0, 1, 0, 0, 1},
}};

// ---------------------------------------------------------------------------
// Corpus generation

struct InjectedContradiction {
  std::string video_id;
  std::uint32_t frame_index;
  FilterReason rule;
};

struct SyntheticManifest {
  std::vector<std::string> videos;
  std::size_t frames = 0;
  std::size_t ex_labels = 0;
  std::size_t va_labels = 0;
  std::size_t au_labels = 0;
  std::vector<InjectedContradiction> contradictions;
};

inline json to_json(const SyntheticManifest& m, const SyntheticSpec& spec) {
  json c = json::array();
  ContradictionCounts by_rule;
  for (const auto& x : m.contradictions) {
    c.push_back({{"video_id", x.video_id}, {"frame", x.frame_index}, {"rule", filter_reason_name(x.rule)}});
    switch (x.rule) {
      case FilterReason::invalid_label: ++by_rule.invalid; break;
      case FilterReason::happy_negative_valence: ++by_rule.happy_neg; break;
      case FilterReason::sad_positive_valence: ++by_rule.sad_pos; break;
      case FilterReason::neutral_high_norm: ++by_rule.neutral_high; break;
      default: break;
    }
  }
  return {{"spec", to_json(spec)},
          {"videos", m.videos},
          {"frames", m.frames},
          {"labels", {{"ex", m.ex_labels}, {"va", m.va_labels}, {"au", m.au_labels}}},
          {"contradiction_counts",
           {{"invalid_label", by_rule.invalid},
            {"happy_negative_valence", by_rule.happy_neg},
            {"sad_positive_valence", by_rule.sad_pos},
            {"neutral_high_norm", by_rule.neutral_high}}},
          {"contradictions", c}};
}

inline std::string video_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video%03d", i);
  return buf;
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

namespace detail {

// Latent VA for a frame of class e that satisfies every filter rule.
inline ValenceArousal consistent_va(const VaGaussian& g, Expression e, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    ValenceArousal va{rng.normal(g.mean_v, g.stddev), rng.normal(g.mean_a, g.stddev)};
    if (!va.valid()) continue;
    FrameRecord r;
    r.ex = e;
    r.va = va;
    if (contradiction_reason(r) == FilterReason::kept) return va;
  }
  ValenceArousal fallback{std::clamp(g.mean_v, -1.0, 1.0), std::clamp(g.mean_a, -1.0, 1.0)};
  if (e == Expression::happiness) fallback.valence = std::max(fallback.valence, 0.0);
  if (e == Expression::sadness) fallback.valence = std::min(fallback.valence, 0.0);
  if (e == Expression::neutral && std::hypot(fallback.valence, fallback.arousal) > kNeutralNormLimit) fallback = {0, 0};
  return fallback;
}

}  // namespace detail

/// Label layer of a synthetic corpus, before any file IO.
struct SyntheticLabels {
  // Per video, per frame.
  std::vector<std::vector<Expression>> latent_class;
  std::vector<std::vector<std::array<double, 2>>> va_raw;   // file values
  std::vector<std::vector<double>> ex_raw;
  std::vector<std::vector<std::vector<double>>> au_raw;
  SyntheticManifest manifest;
};

inline SyntheticLabels synth_labels(const SyntheticSpec& spec) {
  spec.check();
  Rng rng(spec.seed);
  const auto nv = static_cast<std::size_t>(spec.n_videos);
  const auto nf = static_cast<std::size_t>(spec.frames_per_video);
  const std::size_t total = nv * nf;

  SyntheticLabels L;
  L.latent_class.resize(nv);
  L.va_raw.resize(nv);
  L.ex_raw.resize(nv);
  L.au_raw.resize(nv);
  std::vector<std::vector<ValenceArousal>> latent_va(nv);

  // Latent expression runs with consistent VA.
  for (std::size_t v = 0; v < nv; ++v) {
    L.manifest.videos.push_back(video_name(static_cast<int>(v)));
    Rng vr = rng.fork(v);
    Expression cur = static_cast<Expression>(vr.below(kNumExpressions));
    std::size_t run = 0;
    for (std::size_t f = 0; f < nf; ++f) {
      if (run == 0) {
        cur = vr.bernoulli(0.35) ? Expression::neutral : static_cast<Expression>(vr.below(kNumExpressions));
        run = 15 + vr.below(40);
      }
      --run;
      L.latent_class[v].push_back(cur);
      latent_va[v].push_back(detail::consistent_va(spec.gaussians[static_cast<std::size_t>(cur)], cur, vr));
    }
  }

  // Exact coverage: choose round(fraction * total) frames per task.
  auto choose = [&](double frac) {
    std::vector<std::size_t> ids(total);
    for (std::size_t i = 0; i < total; ++i) ids[i] = i;
    rng.shuffle(ids);
    ids.resize(static_cast<std::size_t>(std::llround(frac * static_cast<double>(total))));
    std::vector<char> mask(total, 0);
    for (auto i : ids) mask[i] = 1;
    return mask;
  };
  const auto has_ex = choose(spec.ex_coverage);
  const auto has_va = choose(spec.va_coverage);
  const auto has_au = choose(spec.au_coverage);

  for (std::size_t v = 0; v < nv; ++v) {
    L.va_raw[v].resize(nf);
    L.ex_raw[v].resize(nf);
    L.au_raw[v].resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      const std::size_t g = v * nf + f;
      const auto cls = L.latent_class[v][f];
      L.ex_raw[v][f] = has_ex[g] ? static_cast<double>(cls) : kAbsentEx;
      L.va_raw[v][f] = has_va[g] ? std::array<double, 2>{latent_va[v][f].valence, latent_va[v][f].arousal}
                                 : std::array<double, 2>{kAbsentVa, kAbsentVa};
      auto& au = L.au_raw[v][f];
      au.assign(spec.au_count, kAbsentAu);
      if (has_au[g]) {
        for (std::size_t k = 0; k < spec.au_count; ++k) {
          const std::uint8_t proto = k < 8 ? kAuPrototypes[static_cast<std::size_t>(cls)][k] : 0;
          au[k] = rng.bernoulli(0.1) ? 1.0 - proto : proto;
        }
      }
    }
  }
  L.manifest.frames = total;

  // Contradictions are injected into frames labeled for both EX and VA.
  const auto& cc = spec.contradictions;
  if (cc.total() > 0) {
    std::vector<std::size_t> both;
    for (std::size_t g = 0; g < total; ++g)
      if (has_ex[g] && has_va[g]) both.push_back(g);
    if (both.size() < cc.total())
      throw std::invalid_argument("cannot inject " + std::to_string(cc.total()) + " contradictions into " +
                                  std::to_string(both.size()) + " doubly labeled frames");
    rng.shuffle(both);
    both.resize(cc.total());
    std::sort(both.begin(), both.end());
    std::vector<FilterReason> rules;
    rules.insert(rules.end(), cc.invalid, FilterReason::invalid_label);
    rules.insert(rules.end(), cc.happy_neg, FilterReason::happy_negative_valence);
    rules.insert(rules.end(), cc.sad_pos, FilterReason::sad_positive_valence);
    rules.insert(rules.end(), cc.neutral_high, FilterReason::neutral_high_norm);
    rng.shuffle(rules);
    for (std::size_t i = 0; i < both.size(); ++i) {
      const std::size_t v = both[i] / nf, f = both[i] % nf;
      auto& va = L.va_raw[v][f];
      auto& ex = L.ex_raw[v][f];
      switch (rules[i]) {
        case FilterReason::invalid_label:
          if (i % 2 == 0) va[0] = rng.uniform(1.1, 2.0);
          else ex = 7.0 + static_cast<double>(rng.below(3));
          break;
        case FilterReason::happy_negative_valence:
          ex = static_cast<double>(Expression::happiness);
          va = {-rng.uniform(0.05, 0.9), rng.uniform(-0.5, 0.5)};
          break;
        case FilterReason::sad_positive_valence:
          ex = static_cast<double>(Expression::sadness);
          va = {rng.uniform(0.05, 0.9), rng.uniform(-0.5, 0.5)};
          break;
        case FilterReason::neutral_high_norm: {
          ex = static_cast<double>(Expression::neutral);
          const double r = rng.uniform(0.55, 0.95), a = rng.uniform(0.0, 2.0 * std::numbers::pi);
          va = {r * std::cos(a), r * std::sin(a)};
          break;
        }
        default: break;
      }
      L.manifest.contradictions.push_back({L.manifest.videos[v], static_cast<std::uint32_t>(f), rules[i]});
    }
  }

  for (std::size_t g = 0; g < total; ++g) {
    L.manifest.ex_labels += has_ex[g];
    L.manifest.va_labels += has_va[g];
    L.manifest.au_labels += has_au[g];
  }
  return L;
}

/// Smoothly varying head pose for frame f of a video.
inline SimilarityTransform synthetic_pose(int image_size, std::size_t f, double phase) {
  const double s = image_size / 140.0;
  const double t = static_cast<double>(f);
  const double rot = 0.12 * std::sin(0.05 * t + phase);
  const double scale = s * (1.0 + 0.05 * std::sin(0.031 * t + 2.0 * phase));
  SimilarityTransform pose{scale, rot, {}};
  const Point c = pose.apply({56.0, 64.0});
  pose.translation = {image_size / 2.0 - c.x + 3.0 * std::sin(0.07 * t + phase),
                      image_size / 2.0 - c.y + 2.0 * std::cos(0.04 * t + phase)};
  return pose;
}

inline Waveform synth_audio(const std::vector<Expression>& classes, double rate, double fps, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(classes.size() / fps * rate));
  Waveform w{std::vector<double>(n), rate};
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = std::min(classes.size() - 1, static_cast<std::size_t>(static_cast<double>(i) / rate * fps));
    const double hz = kExpressionToneHz[static_cast<std::size_t>(classes[f])];
    phase += 2.0 * std::numbers::pi * hz / rate;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
    w.samples[i] = 0.25 * std::sin(phase) + 0.08 * std::sin(2.0 * phase) + 0.01 * rng.normal();
  }
  return w;
}

/// Writes the full corpus under `out` (which must not exist or be empty).
inline SyntheticManifest synth_dataset(const SyntheticSpec& spec, const std::filesystem::path& out, int jobs = 1) {
  namespace fs = std::filesystem;
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out)))
    throw IoError("output path already exists and is not empty: " + out.string());
  auto L = synth_labels(spec);
  const auto nv = static_cast<std::size_t>(spec.n_videos);
  const auto nf = static_cast<std::size_t>(spec.frames_per_video);
  // The layout exists even for empty corpora and zero-frame videos.
  for (const char* d : {"annotations/VA", "annotations/EX", "annotations/AU", "landmarks", "frames", "audio"})
    fs::create_directories(out / d);

  parallel_for(nv, jobs, [&](std::size_t v) {
    const auto& id = L.manifest.videos[v];
    fs::create_directories(out / "landmarks" / id);
    fs::create_directories(out / "frames" / id);
    AnnotationFile va{AnnotationKind::va, 2, {}}, ex{AnnotationKind::ex, 1, {}}, au{AnnotationKind::au, spec.au_count, {}};
    for (std::size_t f = 0; f < nf; ++f) {
      va.rows.push_back({L.va_raw[v][f][0], L.va_raw[v][f][1]});
      ex.rows.push_back({L.ex_raw[v][f]});
      au.rows.push_back(L.au_raw[v][f]);
    }
    write_file_atomic(out / "annotations" / "VA" / (id + ".txt"), serialize_annotation(va));
    write_file_atomic(out / "annotations" / "EX" / (id + ".txt"), serialize_annotation(ex));
    write_file_atomic(out / "annotations" / "AU" / (id + ".txt"), serialize_annotation(au));

    Rng vr(spec.seed ^ (0xA5A5A5A5ULL + v * 0x100000001B3ULL));
    const double phase = vr.uniform(0.0, 2.0 * std::numbers::pi);
    const auto shade = static_cast<std::uint8_t>(vr.below(200));
    for (std::size_t f = 0; f < nf; ++f) {
      auto lm = expression_landmarks(L.latent_class[v][f]);
      for (auto& p : lm) p = p + Point{vr.normal(0.0, 0.3), vr.normal(0.0, 0.3)};
      const auto pose = synthetic_pose(spec.image_size, f, phase);
      for (auto& p : lm) p = pose.apply(p);
      write_file_atomic(out / "landmarks" / id / (frame_name(f) + ".csv"), format_landmarks(lm));
      write_pnm(out / "frames" / id / (frame_name(f) + ".ppm"), render_face(lm, pose, spec.image_size, shade));
    }
    write_file_atomic(out / "audio" / (id + ".wav"), encode_wav_pcm16(synth_audio(L.latent_class[v], spec.audio_rate, spec.fps, vr)));
  });
  write_file_atomic(out / "manifest.json", dump_json(to_json(L.manifest, spec)));
  return L.manifest;
}

}  // namespace tsav
