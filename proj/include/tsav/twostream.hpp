// Toy two-stream aural-visual network: (2+1)D residual visual stream over
// 4-channel clips, 2D residual aural stream over 1-channel sub-spectrograms,
// concatenated features and one affine head.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tsav/annotations.hpp"
#include "tsav/audiodsp.hpp"
#include "tsav/clipper.hpp"
#include "tsav/common.hpp"
#include "tsav/netkernels.hpp"

namespace tsav {

struct TwoStreamConfig {
  int visual_in_channels = 4;
  int aural_in_channels = 1;
  int base_channels = 16;
  int visual_blocks = 1;
  int aural_blocks = 1;
  int au_count = static_cast<int>(kDefaultAuCount);

  Conv3dSpec visual_stem() const {
    return {visual_in_channels, base_channels, {3, 7, 7}, {1, 2, 2}, {1, 3, 3}};
  }
  Conv3dSpec visual_block_conv() const { return {base_channels, base_channels, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}}; }
  Conv3dSpec aural_stem() const { return {aural_in_channels, base_channels, {1, 7, 7}, {1, 2, 2}, {0, 3, 3}}; }
  Conv3dSpec aural_block_conv() const { return {base_channels, base_channels, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}}; }

  int feature_dim() const { return 2 * base_channels; }
  int head_width() const { return 2 + kNumExpressions + au_count; }

  void check() const {
    if (visual_in_channels < 1 || aural_in_channels < 1 || base_channels < 1 || au_count < 0 ||
        visual_blocks < 0 || aural_blocks < 0)
      throw std::invalid_argument("invalid two-stream configuration");
  }
};

struct WeightBlob {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

/// Every layer's (name, shape), in canonical order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> layer_shapes(const TwoStreamConfig& cfg) {
  cfg.check();
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  auto add_conv = [&](const std::string& name, const Conv3dSpec& s) {
    out.emplace_back(name + ".weight", s.weight_shape());
    out.emplace_back(name + ".bias", std::vector<std::size_t>{std::size_t(s.out_channels)});
  };
  auto add_factorized = [&](const std::string& name, const Conv3dSpec& full) {
    const auto f = Conv2Plus1dSpec::from_full(full);
    add_conv(name + ".spatial", f.spatial());
    add_conv(name + ".temporal", f.temporal());
  };
  add_factorized("visual.stem", cfg.visual_stem());
  for (int b = 0; b < cfg.visual_blocks; ++b) {
    add_factorized("visual.block" + std::to_string(b) + ".conv1", cfg.visual_block_conv());
    add_factorized("visual.block" + std::to_string(b) + ".conv2", cfg.visual_block_conv());
  }
  add_conv("aural.stem", cfg.aural_stem());
  for (int b = 0; b < cfg.aural_blocks; ++b) {
    add_conv("aural.block" + std::to_string(b) + ".conv1", cfg.aural_block_conv());
    add_conv("aural.block" + std::to_string(b) + ".conv2", cfg.aural_block_conv());
  }
  out.emplace_back("head.weight", std::vector<std::size_t>{std::size_t(cfg.head_width()), std::size_t(cfg.feature_dim())});
  out.emplace_back("head.bias", std::vector<std::size_t>{std::size_t(cfg.head_width())});
  return out;
}

class WeightManifest {
 public:
  WeightManifest() = default;

  std::uint64_t seed = 0;

  void add(WeightBlob blob) {
    if (index_.count(blob.name)) throw ShapeError("duplicate weight blob " + blob.name);
    if (blob.values.size() != Tensor::element_count(blob.shape))
      throw ShapeError("blob " + blob.name + " has " + std::to_string(blob.values.size()) + " values for shape " +
                       shape_string(blob.shape));
    index_[blob.name] = blobs_.size();
    blobs_.push_back(std::move(blob));
  }

  const std::vector<WeightBlob>& blobs() const { return blobs_; }

  const WeightBlob& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("missing weight blob " + name);
    return blobs_[it->second];
  }

  Tensor tensor(const std::string& name) const {
    const auto& b = get(name);
    return Tensor(b.shape, std::vector<double>(b.values.begin(), b.values.end()));
  }

  std::vector<double> vector(const std::string& name) const {
    const auto& b = get(name);
    return {b.values.begin(), b.values.end()};
  }

  ConvWeights conv(const std::string& name) const { return {tensor(name + ".weight"), vector(name + ".bias")}; }

  /// Exactly one blob of matching shape per layer, and nothing else.
  void validate(const TwoStreamConfig& cfg) const {
    const auto shapes = layer_shapes(cfg);
    for (const auto& [name, shape] : shapes) {
      const auto& b = get(name);
      if (b.shape != shape)
        throw ShapeError("blob " + name + " has shape " + shape_string(b.shape) + ", config expects " + shape_string(shape));
    }
    if (shapes.size() != blobs_.size())
      throw ShapeError("manifest has " + std::to_string(blobs_.size()) + " blobs, config defines " +
                       std::to_string(shapes.size()));
  }

  friend bool operator==(const WeightManifest& a, const WeightManifest& b) {
    if (a.seed != b.seed || a.blobs_.size() != b.blobs_.size()) return false;
    for (std::size_t i = 0; i < a.blobs_.size(); ++i)
      if (a.blobs_[i].name != b.blobs_[i].name || a.blobs_[i].shape != b.blobs_[i].shape ||
          a.blobs_[i].values != b.blobs_[i].values)
        return false;
    return true;
  }

 private:
  std::vector<WeightBlob> blobs_;
  std::map<std::string, std::size_t> index_;
};

/// Deterministic fixture weights: uniform(+-sqrt(3/fan_in)) for kernels,
/// uniform(+-0.05) for biases.
inline WeightManifest generate_weights(const TwoStreamConfig& cfg, std::uint64_t seed) {
  WeightManifest m;
  m.seed = seed;
  Rng rng(seed);
  for (const auto& [name, shape] : layer_shapes(cfg)) {
    WeightBlob b{name, shape, std::vector<float>(Tensor::element_count(shape))};
    const bool is_bias = shape.size() == 1;
    double bound = 0.05;
    if (!is_bias) {
      const auto fan_in = Tensor::element_count(shape) / shape[0];
      bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    }
    for (auto& v : b.values) v = static_cast<float>(rng.uniform(-bound, bound));
    m.add(std::move(b));
  }
  return m;
}

/// All-zero weights of the right shapes.
inline WeightManifest zero_weights(const TwoStreamConfig& cfg) {
  WeightManifest m;
  for (const auto& [name, shape] : layer_shapes(cfg))
    m.add({name, shape, std::vector<float>(Tensor::element_count(shape), 0.0f)});
  return m;
}

struct ParamCount {
  std::size_t visual = 0;
  std::size_t aural = 0;
  std::size_t head = 0;
  std::size_t total() const { return visual + aural + head; }
};

inline ParamCount count_params(const TwoStreamConfig& cfg) {
  ParamCount c;
  for (const auto& [name, shape] : layer_shapes(cfg)) {
    const auto n = Tensor::element_count(shape);
    if (name.starts_with("visual.")) c.visual += n;
    else if (name.starts_with("aural.")) c.aural += n;
    else c.head += n;
  }
  return c;
}

/// Visual stream parameter count if every (2+1)D pair were a full 3D kernel.
inline std::size_t full3d_visual_param_count(const TwoStreamConfig& cfg) {
  std::size_t n = conv_param_count(cfg.visual_stem());
  n += static_cast<std::size_t>(2 * cfg.visual_blocks) * conv_param_count(cfg.visual_block_conv());
  return n;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Clip (l x H x W x 4) to a 1 x 4 x l x H x W tensor.
inline Tensor clip_to_tensor(const Clip& clip) {
  const std::size_t L = clip.length, H = clip.height, W = clip.width;
  Tensor t({1, Clip::kChannels, L, H, W});
  for (std::size_t f = 0; f < L; ++f)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < Clip::kChannels; ++c)
          t.at(0, c, f, y, x) = clip.at(int(f), int(y), int(x), int(c));
  return t;
}

/// Sub-spectrogram (rows x mels) to a 1 x 1 x rows x mels tensor. The toy
/// network sees log1p of the mel power; the spectrogram itself stays linear.
inline Tensor subspectrogram_to_tensor(const SubSpectrogram& sub) {
  std::vector<double> v(sub.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log1p(static_cast<double>(sub.data[i]));
  return Tensor({1, 1, sub.rows, sub.n_mels}, std::move(v));
}

inline Tensor add_relu(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("residual shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a[i] + b[i]);
  return out;
}

struct StreamFeatures {
  std::vector<double> visual;
  std::vector<double> aural;
};

inline std::vector<double> visual_features(const Tensor& clip, const TwoStreamConfig& cfg, const WeightManifest& w) {
  auto factorized = [&](const Tensor& x, const std::string& name, const Conv3dSpec& full) {
    return conv2plus1d(x, Conv2Plus1dSpec::from_full(full), w.conv(name + ".spatial"), w.conv(name + ".temporal"));
  };
  Tensor x = factorized(clip, "visual.stem", cfg.visual_stem());
  apply_activation(x, Activation::relu);
  for (int b = 0; b < cfg.visual_blocks; ++b) {
    const std::string p = "visual.block" + std::to_string(b);
    Tensor h = factorized(x, p + ".conv1", cfg.visual_block_conv());
    apply_activation(h, Activation::relu);
    h = factorized(h, p + ".conv2", cfg.visual_block_conv());
    x = add_relu(h, x);
  }
  return global_average_pool(x).data();
}

inline std::vector<double> aural_features(const Tensor& spec, const TwoStreamConfig& cfg, const WeightManifest& w) {
  auto conv = [&](const Tensor& x, const std::string& name, const Conv3dSpec& s) {
    return conv2d(x, s.out_channels, {s.kernel[1], s.kernel[2]}, {s.stride[1], s.stride[2]}, {s.padding[1], s.padding[2]},
                  w.conv(name));
  };
  Tensor x = conv(spec, "aural.stem", cfg.aural_stem());
  apply_activation(x, Activation::relu);
  for (int b = 0; b < cfg.aural_blocks; ++b) {
    const std::string p = "aural.block" + std::to_string(b);
    Tensor h = conv(x, p + ".conv1", cfg.aural_block_conv());
    apply_activation(h, Activation::relu);
    h = conv(h, p + ".conv2", cfg.aural_block_conv());
    x = add_relu(h, x);
  }
  return global_average_pool(x).data();
}

/// Head output: [valence, arousal, 7 expression logits, K AU logits] with
/// tanh on valence and arousal.
inline std::vector<double> head_forward(const std::vector<double>& features, const TwoStreamConfig& cfg,
                                        const WeightManifest& w) {
  const auto W = w.tensor("head.weight");
  const auto b = w.vector("head.bias");
  if (features.size() != static_cast<std::size_t>(cfg.feature_dim()))
    throw ShapeError("head input has " + std::to_string(features.size()) + " features, expected " +
                     std::to_string(cfg.feature_dim()));
  std::vector<double> out(static_cast<std::size_t>(cfg.head_width()));
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < features.size(); ++i) acc += W.at(o, i) * features[i];
    out[o] = acc;
  }
  out[0] = std::tanh(out[0]);
  out[1] = std::tanh(out[1]);
  return out;
}

inline std::vector<double> two_stream_forward(const Clip& clip, const SubSpectrogram& sub, const TwoStreamConfig& cfg,
                                              const WeightManifest& w) {
  auto v = visual_features(clip_to_tensor(clip), cfg, w);
  auto a = aural_features(subspectrogram_to_tensor(sub), cfg, w);
  v.insert(v.end(), a.begin(), a.end());
  return head_forward(v, cfg, w);
}

// ---------------------------------------------------------------------------
// Manifest files: JSON index (name, shape, offset in bytes) plus a flat
// little-endian f32 blob. JSON encoding lives in serialization.hpp.

inline std::string encode_weight_blob(const WeightManifest& m) {
  ByteWriter w;
  for (const auto& b : m.blobs())
    for (float v : b.values) w.f32(v);
  return w.take();
}

}  // namespace tsav
