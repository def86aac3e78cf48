// 8-bit interleaved images and binary PNM (P5/P6) IO.
#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsav/common.hpp"

namespace tsav {

struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;  // row-major, channels interleaved

  Image() = default;
  Image(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// P5 for one channel, P6 for three.
inline std::string encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("PNM supports 1 or 3 channels");
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
  return out;
}

inline Image decode_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  const auto magic = next_token();
  if (magic != "P5" && magic != "P6") throw FormatError("not a binary PGM/PPM image");
  const int channels = magic == "P5" ? 1 : 3;
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError("malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("unsupported PNM dimensions or depth");
  ++pos;  // single whitespace after maxval
  Image img(h, w, channels);
  if (bytes.size() < pos + img.data.size()) throw FormatError("truncated PNM payload");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.data.size(), img.data.begin());
  return img;
}

inline Image read_pnm(const std::filesystem::path& path) {
  try {
    return decode_pnm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  write_file_atomic(path, encode_pnm(img));
}

}  // namespace tsav
