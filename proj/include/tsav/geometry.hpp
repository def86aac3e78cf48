// Face alignment from a five point template and landmark mask rendering.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsav/common.hpp"
#include "tsav/image.hpp"

namespace tsav {

struct Point {
  double x = 0.0;
  double y = 0.0;

  Point operator+(Point o) const { return {x + o.x, y + o.y}; }
  Point operator-(Point o) const { return {x - o.x, y - o.y}; }
  Point operator*(double s) const { return {x * s, y * s}; }
  friend bool operator==(const Point&, const Point&) = default;
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::sqrt(dot(a, a)); }

inline constexpr int kNumLandmarks = 68;
inline constexpr int kAlignedSize = 112;

using Landmarks68 = std::array<Point, kNumLandmarks>;
using FivePoints = std::array<Point, 5>;

/// Left eye, right eye, nose tip, left and right mouth corner in a 112x112
/// crop (the common ArcFace arrangement).
inline constexpr FivePoints kDefaultTemplate5 = {{
    {38.2946, 51.6963},
    {73.5318, 51.5014},
    {56.0252, 71.7366},
    {41.5493, 92.3655},
    {70.7299, 92.2041},
}};

inline FivePoints five_points_from_68(const Landmarks68& lm) {
  auto mean = [&](int first, int last) {
    Point s;
    for (int i = first; i <= last; ++i) s = s + lm[i];
    return s * (1.0 / (last - first + 1));
  };
  return {mean(36, 41), mean(42, 47), lm[30], lm[48], lm[54]};
}

/// x' = scale * R(rotation) * x + translation
struct SimilarityTransform {
  double scale = 1.0;
  double rotation = 0.0;  // radians
  Point translation;

  Point apply(Point p) const {
    const double c = std::cos(rotation) * scale;
    const double s = std::sin(rotation) * scale;
    return {c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y};
  }

  SimilarityTransform inverse() const {
    SimilarityTransform inv{1.0 / scale, -rotation, {}};
    const Point t = inv.apply(translation);
    inv.translation = {-t.x, -t.y};
    return inv;
  }

  /// Row-major 2x3 [sR | t].
  std::array<double, 6> matrix() const {
    const double c = std::cos(rotation) * scale;
    const double s = std::sin(rotation) * scale;
    return {c, -s, translation.x, s, c, translation.y};
  }

  static SimilarityTransform identity() { return {}; }
};

struct SimilarityFit {
  SimilarityTransform transform;
  double rms_residual = 0.0;
};

template <std::size_t N>
double rms_residual(const SimilarityTransform& t, const std::array<Point, N>& src,
                    const std::array<Point, N>& dst) {
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const Point d = t.apply(src[i]) - dst[i];
    acc += dot(d, d);
  }
  return std::sqrt(acc / N);
}

/// Least-squares similarity mapping src onto dst. In 2D the polar factor of
/// the centered cross-covariance reduces to the angle atan2(b, a) with
/// a = sum p.q, b = sum p x q; scale is the trace ratio and translation
/// closes the means.
template <std::size_t N>
SimilarityFit estimate_similarity(const std::array<Point, N>& src, const std::array<Point, N>& dst) {
  Point ms, md;
  for (std::size_t i = 0; i < N; ++i) {
    ms = ms + src[i];
    md = md + dst[i];
  }
  ms = ms * (1.0 / N);
  md = md * (1.0 / N);

  double a = 0.0, b = 0.0, var = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const Point p = src[i] - ms;
    const Point q = dst[i] - md;
    a += p.x * q.x + p.y * q.y;
    b += p.x * q.y - p.y * q.x;
    var += dot(p, p);
  }
  if (var < 1e-18) throw DegenerateError("source points are coincident; similarity is undetermined");
  if (std::hypot(a, b) < 1e-18) throw DegenerateError("target points are coincident; scale would be zero");

  SimilarityFit fit;
  fit.transform.rotation = std::atan2(b, a);
  fit.transform.scale = std::hypot(a, b) / var;
  const Point rotated = SimilarityTransform{fit.transform.scale, fit.transform.rotation, {}}.apply(ms);
  fit.transform.translation = md - rotated;
  fit.rms_residual = rms_residual(fit.transform, src, dst);
  return fit;
}

/// Inverse warp with bilinear sampling; source taps outside the image are
/// black. Integer coordinates are pixel centers.
inline Image align_face(const Image& src, const SimilarityTransform& t, int out_height = kAlignedSize,
                        int out_width = kAlignedSize) {
  Image out(out_height, out_width, src.channels);
  const auto inv = t.inverse();
  const auto m = inv.matrix();
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const double sx = m[0] * x + m[1] * y + m[2];
      const double sy = m[3] * x + m[4] * y + m[5];
      const double fx = std::floor(sx);
      const double fy = std::floor(sy);
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const double ax = sx - fx;
      const double ay = sy - fy;
      for (int c = 0; c < src.channels; ++c) {
        auto px = [&](int yy, int xx) -> double {
          if (xx < 0 || yy < 0 || xx >= src.width || yy >= src.height) return 0.0;
          return src.at(yy, xx, c);
        };
        double v = 0.0;
        // Skip zero-weight taps so exact integer shifts stay exact.
        if (ax < 1 && ay < 1) v += (1 - ax) * (1 - ay) * px(y0, x0);
        if (ax > 0 && ay < 1) v += ax * (1 - ay) * px(y0, x0 + 1);
        if (ax < 1 && ay > 0) v += (1 - ax) * ay * px(y0 + 1, x0);
        if (ax > 0 && ay > 0) v += ax * ay * px(y0 + 1, x0 + 1);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask rendering

inline double distance_to_segment(Point p, Point a, Point b) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + ab * t));
}

/// Anti-aliased stroke: coverage = clamp(thickness/2 + 0.5 - distance, 0, 1),
/// combined with existing pixels by max. Writes channel `channel` only.
inline void draw_segment(Image& img, Point a, Point b, double thickness, std::uint8_t value = 255,
                         int channel = 0) {
  const double reach = thickness / 2.0 + 0.5;
  const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - reach)));
  const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + reach)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - reach)));
  const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + reach)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double cov = std::clamp(reach - distance_to_segment({double(x), double(y)}, a, b), 0.0, 1.0);
      if (cov <= 0.0) continue;
      const auto v = static_cast<std::uint8_t>(std::lround(cov * value));
      auto& px = img.at(y, x, channel);
      px = std::max(px, v);
    }
  }
}

inline void draw_polyline(Image& img, std::span<const Point> pts, bool closed, double thickness,
                          std::uint8_t value = 255, int channel = 0) {
  if (pts.empty()) return;
  if (pts.size() == 1) {
    draw_segment(img, pts[0], pts[0], thickness, value, channel);
    return;
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) draw_segment(img, pts[i], pts[i + 1], thickness, value, channel);
  if (closed && pts.size() > 2) draw_segment(img, pts.back(), pts.front(), thickness, value, channel);
}

struct ContourGroup {
  std::string name;
  std::vector<int> indices;
  bool closed = false;
};

struct MaskSpec {
  std::vector<ContourGroup> groups;
  double thickness = 2.0;

  static std::vector<int> range(int first, int last) {
    std::vector<int> v;
    for (int i = first; i <= last; ++i) v.push_back(i);
    return v;
  }

  /// Conventional 68-point grouping: brows, outer eye contours, nose bridge
  /// and base, outer lip, jaw line.
  static MaskSpec standard(double thickness = 2.0) {
    return {{
                {"left_brow", range(17, 21), false},
                {"right_brow", range(22, 26), false},
                {"left_eye", range(36, 41), true},
                {"right_eye", range(42, 47), true},
                {"nose_bridge", range(27, 30), false},
                {"nose_base", range(31, 35), false},
                {"outer_lip", range(48, 59), true},
                {"jaw", range(0, 16), false},
            },
            thickness};
  }

  void check() const {
    for (const auto& g : groups)
      for (int i : g.indices)
        if (i < 0 || i >= kNumLandmarks) throw std::invalid_argument("mask contour index out of range: " + std::to_string(i));
  }
};

template <std::size_t N>
Image render_mask(const std::array<Point, N>& landmarks, const SimilarityTransform& t, const MaskSpec& spec,
                  int out_height = kAlignedSize, int out_width = kAlignedSize) {
  Image mask(out_height, out_width, 1);
  std::vector<Point> pts;
  for (const auto& g : spec.groups) {
    pts.clear();
    for (int i : g.indices) {
      if (i < 0 || static_cast<std::size_t>(i) >= N) throw std::invalid_argument("mask contour index out of range");
      pts.push_back(t.apply(landmarks[static_cast<std::size_t>(i)]));
    }
    draw_polyline(mask, pts, g.closed, spec.thickness);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Landmark files: 68 lines of `x,y`

inline Landmarks68 parse_landmarks(std::string_view text) {
  Landmarks68 lm{};
  std::size_t count = 0;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 2) throw FormatError("landmark line needs 2 fields", line_no);
    if (count >= kNumLandmarks) throw FormatError("more than 68 landmarks", line_no);
    Point p;
    if (!parse_number(f[0], p.x) || !parse_number(f[1], p.y) || !std::isfinite(p.x) || !std::isfinite(p.y))
      throw FormatError("non-numeric or non-finite landmark", line_no);
    lm[count++] = p;
  }
  if (count != kNumLandmarks) throw FormatError("expected 68 landmarks, got " + std::to_string(count));
  return lm;
}

inline std::string format_landmarks(const Landmarks68& lm) {
  std::string out;
  for (const auto& p : lm) out += format_number(p.x) + "," + format_number(p.y) + "\n";
  return out;
}

inline Landmarks68 read_landmarks(const std::filesystem::path& path) {
  try {
    return parse_landmarks(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct AlignedFrame {
  Image face;
  Image mask;
  SimilarityFit fit;
};

inline AlignedFrame align_frame(const Image& source, const Landmarks68& lm, const MaskSpec& spec = MaskSpec::standard(),
                                const FivePoints& templ = kDefaultTemplate5, int size = kAlignedSize) {
  FivePoints scaled = templ;
  for (auto& p : scaled) p = p * (static_cast<double>(size) / kAlignedSize);
  const auto fit = estimate_similarity(five_points_from_68(lm), scaled);
  return {align_face(source, fit.transform, size, size), render_mask(lm, fit.transform, spec, size, size), fit};
}

}  // namespace tsav
