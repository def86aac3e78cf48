// Dense tensors and the convolution kernels of the two-stream network:
// direct 3D cross-correlation and its factorized (2+1)D form.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tsav/common.hpp"

namespace tsav {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) throw ShapeError("tensor data length does not match shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Row-major flat index for a full coordinate.
  template <typename... I>
  std::size_t index(I... idx) const {
    const std::array<std::size_t, sizeof...(I)> c{static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < c.size(); ++d) off = off * shape_[d] + c[d];
    return off;
  }
  template <typename... I>
  double& at(I... idx) {
    return data_[index(idx...)];
  }
  template <typename... I>
  double at(I... idx) const {
    return data_[index(idx...)];
  }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (element_count(shape) != data_.size()) throw ShapeError("reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

using Triple = std::array<int, 3>;  // (time, height, width)

struct Conv3dSpec {
  int in_channels = 1;
  int out_channels = 1;
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};

  void check() const {
    if (in_channels < 1 || out_channels < 1) throw ShapeError("conv channels must be positive");
    for (int i = 0; i < 3; ++i) {
      if (kernel[i] < 1) throw ShapeError("conv kernel extents must be positive");
      if (stride[i] < 1) throw ShapeError("conv strides must be positive");
      if (padding[i] < 0) throw ShapeError("conv padding must be non-negative");
    }
  }

  std::vector<std::size_t> weight_shape() const {
    return {std::size_t(out_channels), std::size_t(in_channels), std::size_t(kernel[0]), std::size_t(kernel[1]),
            std::size_t(kernel[2])};
  }

  std::size_t weight_count() const { return Tensor::element_count(weight_shape()); }
};

/// Weight tensor (out, in, kt, kh, kw) and one bias per output channel.
struct ConvWeights {
  Tensor weight;
  std::vector<double> bias;
};

enum class Activation { linear, relu };

inline void apply_activation(Tensor& t, Activation a) {
  if (a == Activation::relu)
    for (auto& v : t.data()) v = std::max(v, 0.0);
}

inline std::size_t conv_output_extent(std::size_t in, int kernel, int stride, int pad, const char* dim_name) {
  const auto padded = static_cast<std::int64_t>(in) + 2 * pad;
  if (padded < kernel)
    throw ShapeError(std::string("input ") + dim_name + " extent " + std::to_string(in) + " (padded " +
                     std::to_string(padded) + ") is smaller than kernel " + std::to_string(kernel));
  return static_cast<std::size_t>((padded - kernel) / stride + 1);
}

inline std::vector<std::size_t> conv3d_output_shape(const std::vector<std::size_t>& in, const Conv3dSpec& spec) {
  spec.check();
  if (in.size() != 5) throw ShapeError("conv3d input must be rank 5 (N,C,T,H,W), got " + shape_string(in));
  if (in[1] != static_cast<std::size_t>(spec.in_channels))
    throw ShapeError("channel dimension: input has " + std::to_string(in[1]) + ", spec expects " +
                     std::to_string(spec.in_channels));
  static constexpr const char* names[3] = {"time", "height", "width"};
  std::vector<std::size_t> out{in[0], std::size_t(spec.out_channels), 0, 0, 0};
  for (int d = 0; d < 3; ++d) out[2 + d] = conv_output_extent(in[2 + d], spec.kernel[d], spec.stride[d], spec.padding[d], names[d]);
  return out;
}

/// Direct 3D cross-correlation, N x C x T x H x W in, zero padding.
inline Tensor conv3d_direct(const Tensor& x, const Conv3dSpec& spec, const ConvWeights& w) {
  const auto out_shape = conv3d_output_shape(x.shape(), spec);
  if (w.weight.shape() != spec.weight_shape())
    throw ShapeError("weight shape " + shape_string(w.weight.shape()) + " does not match spec " +
                     shape_string(spec.weight_shape()));
  if (w.bias.size() != static_cast<std::size_t>(spec.out_channels))
    throw ShapeError("bias length " + std::to_string(w.bias.size()) + " does not match out_channels " +
                     std::to_string(spec.out_channels));

  const auto N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto O = out_shape[1], OT = out_shape[2], OH = out_shape[3], OW = out_shape[4];
  const auto [kt, kh, kw] = spec.kernel;
  const auto [st, sh, sw] = spec.stride;
  const auto [pt, ph, pw] = spec.padding;

  Tensor y(out_shape);
  const double* xin = x.data().data();
  const double* wt = w.weight.data().data();
  double* yo = y.data().data();
  const std::size_t in_plane = T * H * W;
  const std::size_t out_plane = OT * OH * OW;

  // Valid output column range per kernel column.
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> col_range(static_cast<std::size_t>(kw));
  for (int e = 0; e < kw; ++e) {
    std::ptrdiff_t lo = 0, hi = static_cast<std::ptrdiff_t>(OW);
    while (lo < hi && lo * sw - pw + e < 0) ++lo;
    while (hi > lo && (hi - 1) * sw - pw + e >= static_cast<std::ptrdiff_t>(W)) --hi;
    col_range[static_cast<std::size_t>(e)] = {lo, hi};
  }

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      double* ychan = yo + (n * O + o) * out_plane;
      std::fill(ychan, ychan + out_plane, w.bias[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* xchan = xin + (n * C + c) * in_plane;
        const double* wc = wt + (o * C + c) * static_cast<std::size_t>(kt * kh * kw);
        for (int a = 0; a < kt; ++a)
          for (int b = 0; b < kh; ++b) {
            const double* wrow = wc + (a * kh + b) * kw;
            for (std::size_t ot = 0; ot < OT; ++ot) {
              const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot) * st - pt + a;
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(T)) continue;
              for (std::size_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * sh - ph + b;
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                const double* xrow = xchan + (static_cast<std::size_t>(it) * H + static_cast<std::size_t>(ih)) * W;
                double* yrow = ychan + (ot * OH + oh) * OW;
                // all taps of one kernel row while the output row is hot
                for (int e = 0; e < kw; ++e) {
                  const double wv = wrow[e];
                  if (wv == 0.0) continue;
                  const auto [lo, hi] = col_range[static_cast<std::size_t>(e)];
                  const std::ptrdiff_t off = e - pw;
                  if (sw == 1) {
                    for (std::ptrdiff_t ow = lo; ow < hi; ++ow) yrow[ow] += wv * xrow[ow + off];
                  } else {
                    for (std::ptrdiff_t ow = lo; ow < hi; ++ow) yrow[ow] += wv * xrow[ow * sw + off];
                  }
                }
              }
            }
          }
      }
    }
  }
  return y;
}

/// 2D convolution on N x C x H x W, expressed as a 3D convolution over a
/// unit time axis. Kernel, stride and padding are (h, w).
inline Tensor conv2d(const Tensor& x, int out_channels, std::array<int, 2> kernel, std::array<int, 2> stride,
                     std::array<int, 2> padding, const ConvWeights& w) {
  if (x.rank() != 4) throw ShapeError("conv2d input must be rank 4 (N,C,H,W), got " + shape_string(x.shape()));
  Conv3dSpec spec{static_cast<int>(x.dim(1)), out_channels, {1, kernel[0], kernel[1]}, {1, stride[0], stride[1]},
                  {0, padding[0], padding[1]}};
  ConvWeights w5{w.weight.reshaped(spec.weight_shape()), w.bias};
  auto y = conv3d_direct(x.reshaped({x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)}), spec, w5);
  return y.reshaped({y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
}

// ---------------------------------------------------------------------------
// (2+1)D factorization

/// Intermediate channel count that keeps the factorized pair's parameter
/// count at most that of the full t x d x d kernel:
/// floor(t d^2 n_in n_out / (d^2 n_in + t n_out)).
inline std::int64_t midplanes(std::int64_t t, std::int64_t d, std::int64_t n_in, std::int64_t n_out) {
  if (t < 1 || d < 1 || n_in < 1 || n_out < 1) throw std::invalid_argument("midplanes arguments must be >= 1");
  return (t * d * d * n_in * n_out) / (d * d * n_in + t * n_out);
}

struct Conv2Plus1dSpec {
  Conv3dSpec full;  // equivalent 3D convolution (kernel, stride, padding)
  int mid_channels = 1;

  Conv3dSpec spatial() const {
    return {full.in_channels, mid_channels, {1, full.kernel[1], full.kernel[2]}, {1, full.stride[1], full.stride[2]},
            {0, full.padding[1], full.padding[2]}};
  }
  Conv3dSpec temporal() const {
    return {mid_channels, full.out_channels, {full.kernel[0], 1, 1}, {full.stride[0], 1, 1}, {full.padding[0], 0, 0}};
  }

  /// Uses midplanes() for the intermediate width, at least one channel.
  static Conv2Plus1dSpec from_full(const Conv3dSpec& full) {
    const auto m = midplanes(full.kernel[0], full.kernel[1], full.in_channels, full.out_channels);
    return {full, static_cast<int>(std::max<std::int64_t>(1, m))};
  }
};

/// Spatial (1 x kh x kw) convolution, activation, then temporal (t x 1 x 1)
/// convolution. The output shape matches conv3d_direct with `spec.full`.
inline Tensor conv2plus1d(const Tensor& x, const Conv2Plus1dSpec& spec, const ConvWeights& spatial,
                          const ConvWeights& temporal, Activation mid_activation = Activation::relu) {
  auto h = conv3d_direct(x, spec.spatial(), spatial);
  apply_activation(h, mid_activation);
  return conv3d_direct(h, spec.temporal(), temporal);
}

inline std::size_t conv_param_count(const Conv3dSpec& s, bool bias = true) {
  return s.weight_count() + (bias ? static_cast<std::size_t>(s.out_channels) : 0);
}

inline std::size_t conv2plus1d_param_count(const Conv2Plus1dSpec& s, bool bias = true) {
  return conv_param_count(s.spatial(), bias) + conv_param_count(s.temporal(), bias);
}

/// Global average over every axis after the channel axis; returns N x C.
inline Tensor global_average_pool(const Tensor& x) {
  if (x.rank() < 3) throw ShapeError("pooling needs rank >= 3");
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t inner = x.size() / (N * C);
  Tensor y({N, C});
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < inner; ++j) s += x[i * inner + j];
    y[i] = s / static_cast<double>(inner);
  }
  return y;
}

}  // namespace tsav
