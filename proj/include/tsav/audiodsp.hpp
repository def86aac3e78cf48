// Aural pre-processing: resampling, power mel spectrogram and frame-aligned
// sub-spectrogram windows.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "tsav/common.hpp"

namespace tsav {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 0.0;

  double duration() const { return sample_rate > 0 ? samples.size() / sample_rate : 0.0; }
};

// ---------------------------------------------------------------------------
// Resampling

inline constexpr int kResampleTaps = 64;

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Blackman window over [-half, half].
inline double blackman(double x, double half) {
  if (std::abs(x) >= half) return 0.0;
  const double t = (x + half) / (2.0 * half);
  return 0.42 - 0.5 * std::cos(2.0 * std::numbers::pi * t) + 0.08 * std::cos(4.0 * std::numbers::pi * t);
}

}  // namespace detail

/// Band-limited windowed-sinc interpolation with kResampleTaps source taps
/// per output sample. The cutoff follows the lower of the two Nyquist rates.
inline Waveform resample(const Waveform& wave, double target_rate) {
  if (!(target_rate > 0)) throw std::invalid_argument("target sample rate must be positive");
  if (!(wave.sample_rate > 0)) throw std::invalid_argument("source sample rate must be positive");
  if (wave.samples.empty()) return {{}, target_rate};
  if (target_rate == wave.sample_rate) return wave;

  const double ratio = target_rate / wave.sample_rate;
  const auto out_len = static_cast<std::size_t>(std::llround(wave.samples.size() * ratio));
  const double cutoff = std::min(1.0, ratio);
  const double half = kResampleTaps / 2.0;
  const auto n = static_cast<std::ptrdiff_t>(wave.samples.size());

  Waveform out{std::vector<double>(out_len), target_rate};
  for (std::size_t i = 0; i < out_len; ++i) {
    const double x = static_cast<double>(i) / ratio;  // position in source samples
    const auto first = static_cast<std::ptrdiff_t>(std::floor(x)) - kResampleTaps / 2 + 1;
    double acc = 0.0;
    for (std::ptrdiff_t k = first; k < first + kResampleTaps; ++k) {
      if (k < 0 || k >= n) continue;
      const double d = x - static_cast<double>(k);
      acc += wave.samples[static_cast<std::size_t>(k)] * cutoff * detail::sinc(cutoff * d) *
             detail::blackman(d, half);
    }
    out.samples[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// FFT

/// In-place iterative radix-2 complex FFT. Size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

/// Real-input FFT returning the n/2+1 non-negative frequency bins. Packs the
/// real signal into an n/2 complex transform and splits the result.
inline std::vector<std::complex<double>> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2 || (n & (n - 1)) != 0) throw std::invalid_argument("rfft size must be a power of two >= 2");
  const std::size_t h = n / 2;
  std::vector<std::complex<double>> z(h);
  for (std::size_t i = 0; i < h; ++i) z[i] = {x[2 * i], x[2 * i + 1]};
  fft_inplace(z);

  std::vector<std::complex<double>> out(h + 1);
  for (std::size_t k = 0; k <= h; ++k) {
    const auto zk = z[k % h];
    const auto zc = std::conj(z[(h - k) % h]);
    const auto even = 0.5 * (zk + zc);
    const auto odd = std::complex<double>(0.0, -0.5) * (zk - zc);
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    out[k] = even + std::complex<double>(std::cos(ang), std::sin(ang)) * odd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel spectrogram

struct MelConfig {
  int n_mels = 64;
  double window_seconds = 0.020;
  double stride_seconds = 0.010;
  int n_fft = 1024;
  double sample_rate = 41000.0;

  int win_length() const { return static_cast<int>(std::lround(window_seconds * sample_rate)); }
  int hop_length() const { return static_cast<int>(std::lround(stride_seconds * sample_rate)); }

  void check() const {
    if (n_mels < 1) throw std::invalid_argument("n_mels must be positive");
    if (!(sample_rate > 0)) throw std::invalid_argument("sample rate must be positive");
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) throw std::invalid_argument("n_fft must be a power of two");
    if (win_length() < 1 || win_length() > n_fft)
      throw std::invalid_argument("window must fit in n_fft");
    if (hop_length() < 1 || stride_seconds > window_seconds)
      throw std::invalid_argument("stride must be positive and not exceed the window");
  }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular HTK filterbank, shape (n_fft/2+1) x n_mels stored row-major,
/// spanning 0 Hz to Nyquist with no area normalization.
struct MelFilterbank {
  int n_freqs = 0;
  int n_mels = 0;
  std::vector<double> weights;       // [freq][mel]
  std::vector<double> center_hz;     // n_mels peak frequencies

  double at(int freq, int mel) const { return weights[static_cast<std::size_t>(freq) * n_mels + mel]; }
};

inline MelFilterbank make_mel_filterbank(const MelConfig& cfg) {
  MelFilterbank fb;
  fb.n_freqs = cfg.n_fft / 2 + 1;
  fb.n_mels = cfg.n_mels;
  fb.weights.assign(static_cast<std::size_t>(fb.n_freqs) * fb.n_mels, 0.0);

  // FFT bin frequencies span 0 .. floor(sr/2) evenly.
  const double f_top = std::floor(cfg.sample_rate / 2.0);
  std::vector<double> bin_hz(fb.n_freqs);
  for (int i = 0; i < fb.n_freqs; ++i) bin_hz[i] = f_top * i / (fb.n_freqs - 1);

  const double m_lo = hz_to_mel(0.0);
  const double m_hi = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> f_pts(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    f_pts[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
  fb.center_hz.assign(f_pts.begin() + 1, f_pts.end() - 1);

  for (int f = 0; f < fb.n_freqs; ++f) {
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double down = (bin_hz[f] - f_pts[m]) / (f_pts[m + 1] - f_pts[m]);
      const double up = (f_pts[m + 2] - bin_hz[f]) / (f_pts[m + 2] - f_pts[m + 1]);
      fb.weights[static_cast<std::size_t>(f) * fb.n_mels + m] = std::max(0.0, std::min(down, up));
    }
  }
  return fb;
}

/// T x n_mels grid of mel power, row t centered at t * stride seconds.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  double stride_seconds = 0.010;
  std::vector<float> data;  // row-major [frame][mel]

  float at(std::size_t t, std::size_t m) const { return data[t * n_mels + m]; }
  std::span<const float> row(std::size_t t) const { return {data.data() + t * n_mels, n_mels}; }
};

inline std::vector<double> hann_window(int length) {
  std::vector<double> w(length);
  // Periodic Hann, as used by spectral analysis libraries.
  for (int i = 0; i < length; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  return w;
}

namespace detail {

// Mirror index into [0, n) without repeating the edge sample; periodic so
// signals shorter than the padding still work.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace detail

/// Power mel spectrogram with centered, reflect-padded Hann frames.
inline MelSpectrogram mel_spectrogram(const Waveform& wave, const MelConfig& cfg) {
  cfg.check();
  if (std::abs(wave.sample_rate - cfg.sample_rate) > 1e-9)
    throw std::invalid_argument("waveform rate " + format_number(wave.sample_rate) +
                                " does not match mel config rate " + format_number(cfg.sample_rate));
  const auto fb = make_mel_filterbank(cfg);
  const int n_fft = cfg.n_fft;
  const int win = cfg.win_length();
  const int hop = cfg.hop_length();
  const std::size_t n = wave.samples.size();

  // Window zero-padded to n_fft, centered.
  std::vector<double> window(n_fft, 0.0);
  const auto hann = hann_window(win);
  const int offset = (n_fft - win) / 2;
  std::copy(hann.begin(), hann.end(), window.begin() + offset);

  MelSpectrogram spec;
  spec.frames = n / static_cast<std::size_t>(hop) + 1;
  spec.n_mels = static_cast<std::size_t>(cfg.n_mels);
  spec.stride_seconds = cfg.stride_seconds;
  spec.data.assign(spec.frames * spec.n_mels, 0.0f);
  if (n == 0) return spec;

  std::vector<double> frame(n_fft);
  std::vector<double> power(fb.n_freqs);
  const std::ptrdiff_t pad = n_fft / 2;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * hop - pad;
    for (int i = 0; i < n_fft; ++i) {
      if (window[i] == 0.0) {
        frame[i] = 0.0;
        continue;
      }
      frame[i] = wave.samples[detail::reflect_index(start + i, n)] * window[i];
    }
    const auto bins = rfft(frame);
    for (int f = 0; f < fb.n_freqs; ++f) power[f] = std::norm(bins[f]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      for (int f = 0; f < fb.n_freqs; ++f) acc += power[f] * fb.weights[static_cast<std::size_t>(f) * fb.n_mels + m];
      spec.data[t * spec.n_mels + m] = static_cast<float>(acc);
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Sub-spectrogram

struct SubSpectrogram {
  std::size_t rows = 0;
  std::size_t n_mels = 0;
  std::ptrdiff_t center_column = 0;
  std::vector<float> data;  // row-major [row][mel]

  float at(std::size_t r, std::size_t m) const { return data[r * n_mels + m]; }
};

inline std::size_t subspectrogram_rows(double window_seconds, double stride_seconds) {
  return static_cast<std::size_t>(std::llround(window_seconds / stride_seconds)) + 1;
}

inline std::ptrdiff_t frame_center_column(std::int64_t frame_index, double fps, double stride_seconds) {
  return static_cast<std::ptrdiff_t>(std::llround(static_cast<double>(frame_index) / (fps * stride_seconds)));
}

/// Window of `window_seconds` centered on the video frame's timestamp.
/// Columns beyond the spectrogram are zero (silence).
inline SubSpectrogram extract_subspectrogram(const MelSpectrogram& spec, std::int64_t frame_index,
                                             double fps = 30.0, double window_seconds = 10.0) {
  if (!(window_seconds > 0)) throw std::invalid_argument("sub-spectrogram length must be positive");
  if (!(fps > 0)) throw std::invalid_argument("fps must be positive");
  SubSpectrogram sub;
  sub.rows = subspectrogram_rows(window_seconds, spec.stride_seconds);
  sub.n_mels = spec.n_mels;
  sub.center_column = frame_center_column(frame_index, fps, spec.stride_seconds);
  sub.data.assign(sub.rows * sub.n_mels, 0.0f);
  const auto left = static_cast<std::ptrdiff_t>((sub.rows - 1) / 2);
  for (std::size_t r = 0; r < sub.rows; ++r) {
    const std::ptrdiff_t col = sub.center_column - left + static_cast<std::ptrdiff_t>(r);
    if (col < 0 || col >= static_cast<std::ptrdiff_t>(spec.frames)) continue;
    std::copy_n(spec.data.begin() + col * static_cast<std::ptrdiff_t>(spec.n_mels), spec.n_mels,
                sub.data.begin() + static_cast<std::ptrdiff_t>(r * sub.n_mels));
  }
  return sub;
}

// ---------------------------------------------------------------------------
// Binary / CSV formats

/// `MELS`, u32 rows, u32 cols, little-endian f32 row-major payload.
inline std::string encode_mels(std::size_t rows, std::size_t cols, std::span<const float> data) {
  if (data.size() != rows * cols) throw ShapeError("MELS payload size does not match rows*cols");
  ByteWriter w;
  w.magic("MELS");
  w.u32(static_cast<std::uint32_t>(rows));
  w.u32(static_cast<std::uint32_t>(cols));
  for (float v : data) w.f32(v);
  return w.take();
}

struct MelsBlob {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
};

inline MelsBlob decode_mels(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("MELS");
  MelsBlob b;
  b.rows = r.u32();
  b.cols = r.u32();
  if (r.remaining() != b.rows * b.cols * 4) throw FormatError("MELS payload length mismatch");
  b.data.resize(b.rows * b.cols);
  for (auto& v : b.data) v = r.f32();
  return b;
}

inline std::string mels_csv(std::size_t rows, std::size_t cols, std::span<const float> data) {
  std::string out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out += ',';
      out += format_number(static_cast<double>(data[r * cols + c]));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV

/// RIFF/WAVE reader for PCM16 and IEEE float32. Multi-channel input is
/// averaged to mono.
inline Waveform decode_wav(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("RIFF");
  r.u32();
  r.expect_magic("WAVE");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const auto id = r.take(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("WAV fmt chunk too short");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();
      r.u16();
      bits = r.u16();
      r.skip(size - 16 + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("WAV data chunk before fmt chunk");
      if (channels == 0 || rate == 0) throw FormatError("WAV has zero channels or rate");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) throw FormatError("unsupported WAV encoding (need PCM16 or float32)");
      const std::size_t bytes_per = bits / 8;
      const std::size_t frames = std::min<std::size_t>(size, r.remaining()) / (bytes_per * channels);
      Waveform w{std::vector<double>(frames), static_cast<double>(rate)};
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c)
          acc += pcm16 ? static_cast<std::int16_t>(r.u16()) / 32768.0 : static_cast<double>(r.f32());
        w.samples[i] = acc / channels;
      }
      return w;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1), r.remaining()));
    }
  }
  throw FormatError("WAV has no data chunk");
}

inline Waveform read_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Mono PCM16 encoder; samples are clipped to [-1, 1).
inline std::string encode_wav_pcm16(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  ByteWriter b;
  b.magic("RIFF");
  b.u32(36 + n * 2);
  b.magic("WAVE");
  b.magic("fmt ");
  b.u32(16);
  b.u16(1);
  b.u16(1);
  b.u32(rate);
  b.u32(rate * 2);
  b.u16(2);
  b.u16(16);
  b.magic("data");
  b.u32(n * 2);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    b.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  return b.take();
}

}  // namespace tsav
