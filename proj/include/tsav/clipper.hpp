// Dilated 4-channel clip assembly and temporally coherent augmentation.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tsav/common.hpp"
#include "tsav/image.hpp"

namespace tsav {

struct ClipConfig {
  int length = 8;     // l
  int dilation = 6;   // d
  int height = 112;
  int width = 112;
  double fps = 30.0;

  void check() const {
    if (length < 1) throw std::invalid_argument("clip length must be >= 1");
    if (dilation < 1) throw std::invalid_argument("clip dilation must be >= 1");
    if (height < 1 || width < 1) throw std::invalid_argument("clip size must be positive");
    if (!(fps > 0)) throw std::invalid_argument("fps must be positive");
  }
};

/// Aligned faces (H x W x 3) and masks (H x W x 1) of one video.
class FrameStore {
 public:
  FrameStore() = default;
  FrameStore(std::vector<Image> faces, std::vector<Image> masks) : faces_(std::move(faces)), masks_(std::move(masks)) {
    if (faces_.size() != masks_.size()) throw ShapeError("face and mask counts differ");
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      if (faces_[i].channels != 3) throw ShapeError("face frame " + std::to_string(i) + " is not 3-channel");
      if (masks_[i].channels != 1) throw ShapeError("mask frame " + std::to_string(i) + " is not 1-channel");
      if (faces_[i].height != faces_[0].height || faces_[i].width != faces_[0].width ||
          masks_[i].height != faces_[0].height || masks_[i].width != faces_[0].width)
        throw ShapeError("frame " + std::to_string(i) + " size differs from frame 0");
    }
  }

  std::size_t size() const { return faces_.size(); }
  int height() const { return faces_.empty() ? 0 : faces_[0].height; }
  int width() const { return faces_.empty() ? 0 : faces_[0].width; }
  const Image& face(std::size_t i) const { return faces_.at(i); }
  const Image& mask(std::size_t i) const { return masks_.at(i); }

 private:
  std::vector<Image> faces_;
  std::vector<Image> masks_;
};

/// l x H x W x 4 values in [0,1]; channels 0..2 face RGB, channel 3 mask.
struct Clip {
  int length = 0;
  int height = 0;
  int width = 0;
  std::int64_t anchor = 0;
  std::vector<float> data;

  static constexpr int kChannels = 4;

  std::size_t offset(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * kChannels + c;
  }
  float& at(int t, int y, int x, int c) { return data[offset(t, y, x, c)]; }
  float at(int t, int y, int x, int c) const { return data[offset(t, y, x, c)]; }
  friend bool operator==(const Clip&, const Clip&) = default;
};

/// {t - d*k : k = l-1 .. 0}, negative indices clamped to 0.
inline std::vector<std::int64_t> clip_frame_indices(std::int64_t t, const ClipConfig& cfg) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.length));
  for (int k = 0; k < cfg.length; ++k)
    idx[static_cast<std::size_t>(cfg.length - 1 - k)] = std::max<std::int64_t>(0, t - static_cast<std::int64_t>(cfg.dilation) * k);
  return idx;
}

/// l * d / fps.
inline double clip_span_seconds(const ClipConfig& cfg) { return cfg.length * cfg.dilation / cfg.fps; }

inline Clip sample_clip(const FrameStore& store, std::int64_t t, const ClipConfig& cfg) {
  cfg.check();
  if (t < 0 || t >= static_cast<std::int64_t>(store.size()))
    throw IndexError("clip anchor " + std::to_string(t) + " outside video of " + std::to_string(store.size()) + " frames");
  if (store.height() != cfg.height || store.width() != cfg.width)
    throw ShapeError("frame store is " + std::to_string(store.height()) + "x" + std::to_string(store.width()) +
                     ", clip config wants " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  Clip clip{cfg.length, cfg.height, cfg.width, t, {}};
  clip.data.resize(static_cast<std::size_t>(cfg.length) * cfg.height * cfg.width * Clip::kChannels);
  const auto idx = clip_frame_indices(t, cfg);
  for (int f = 0; f < cfg.length; ++f) {
    const auto& face = store.face(static_cast<std::size_t>(idx[f]));
    const auto& mask = store.mask(static_cast<std::size_t>(idx[f]));
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        for (int c = 0; c < 3; ++c) clip.at(f, y, x, c) = face.at(y, x, c) / 255.0f;
        clip.at(f, y, x, 3) = mask.at(y, x) / 255.0f;
      }
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
  bool flip = false;
  double hue_degrees = 0.0;
  double saturation_scale = 1.0;
  double lightness_scale = 1.0;

  bool color_identity() const { return hue_degrees == 0.0 && saturation_scale == 1.0 && lightness_scale == 1.0; }
};

inline constexpr double kMaxHueShiftDegrees = 18.0;
inline constexpr double kMinColorScale = 0.9;
inline constexpr double kMaxColorScale = 1.1;

/// One draw per clip; the same parameters apply to every frame.
inline AugmentParams draw_augment_params(Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.hue_degrees = rng.uniform(-kMaxHueShiftDegrees, kMaxHueShiftDegrees);
  p.saturation_scale = rng.uniform(kMinColorScale, kMaxColorScale);
  p.lightness_scale = rng.uniform(kMinColorScale, kMaxColorScale);
  return p;
}

struct Hsl {
  double h;  // degrees [0, 360)
  double s;
  double l;
};

inline Hsl rgb_to_hsl(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double l = (mx + mn) / 2.0;
  const double d = mx - mn;
  if (d <= 0.0) return {0.0, 0.0, l};
  const double s = l > 0.5 ? d / (2.0 - mx - mn) : d / (mx + mn);
  double h;
  if (mx == r)
    h = std::fmod((g - b) / d + 6.0, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  return {h * 60.0, s, l};
}

inline std::array<double, 3> hsl_to_rgb(Hsl c) {
  const double chroma = (1.0 - std::abs(2.0 * c.l - 1.0)) * c.s;
  double hp = std::fmod(c.h, 360.0);
  if (hp < 0) hp += 360.0;
  hp /= 60.0;
  const double x = chroma * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = chroma; g = x; }
  else if (hp < 2) { r = x; g = chroma; }
  else if (hp < 3) { g = chroma; b = x; }
  else if (hp < 4) { g = x; b = chroma; }
  else if (hp < 5) { r = x; b = chroma; }
  else { r = chroma; b = x; }
  const double m = c.l - chroma / 2.0;
  return {r + m, g + m, b + m};
}

/// Flip mirrors all four channels; color jitter touches face channels only.
inline Clip apply_augmentation(const Clip& in, const AugmentParams& p) {
  Clip out = in;
  if (p.flip) {
    for (int t = 0; t < in.length; ++t)
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
          for (int c = 0; c < Clip::kChannels; ++c) out.at(t, y, x, c) = in.at(t, y, in.width - 1 - x, c);
  }
  if (p.color_identity()) return out;
  for (int t = 0; t < in.length; ++t)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        auto hsl = rgb_to_hsl(out.at(t, y, x, 0), out.at(t, y, x, 1), out.at(t, y, x, 2));
        hsl.h += p.hue_degrees;
        hsl.s = std::clamp(hsl.s * p.saturation_scale, 0.0, 1.0);
        hsl.l = std::clamp(hsl.l * p.lightness_scale, 0.0, 1.0);
        const auto rgb = hsl_to_rgb(hsl);
        for (int c = 0; c < 3; ++c) out.at(t, y, x, c) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
      }
  return out;
}

inline Clip augment_clip(const Clip& clip, Rng& rng) { return apply_augmentation(clip, draw_augment_params(rng)); }

// ---------------------------------------------------------------------------
// `CLP4`, u32 l, H, W, then f32 LE payload in l x H x W x 4 order.

inline std::string encode_clip(const Clip& clip) {
  ByteWriter w;
  w.magic("CLP4");
  w.u32(static_cast<std::uint32_t>(clip.length));
  w.u32(static_cast<std::uint32_t>(clip.height));
  w.u32(static_cast<std::uint32_t>(clip.width));
  for (float v : clip.data) w.f32(v);
  return w.take();
}

inline Clip decode_clip(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("CLP4");
  Clip c;
  c.length = static_cast<int>(r.u32());
  c.height = static_cast<int>(r.u32());
  c.width = static_cast<int>(r.u32());
  const std::size_t n = static_cast<std::size_t>(c.length) * c.height * c.width * Clip::kChannels;
  if (r.remaining() != n * 4) throw FormatError("CLP4 payload length mismatch");
  c.data.resize(n);
  for (auto& v : c.data) v = r.f32();
  return c;
}

}  // namespace tsav
