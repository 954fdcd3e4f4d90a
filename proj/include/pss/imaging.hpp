#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pss/io.hpp"

namespace pss::imaging {

inline constexpr int kPageSide = 224;
inline constexpr int kPagePixels = kPageSide * kPageSide;

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major intensities

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("GrayImage: dimensions must be positive");
  }

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("RgbImage: dimensions must be positive");
  }
};

/// Binarized page at the fixed 224x224 working resolution. 1 = ink, 0 = paper.
struct Binary224 {
  std::vector<std::uint8_t> pixels;  // kPagePixels entries, each 0 or 1

  Binary224() : pixels(kPagePixels, 0) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * kPageSide + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * kPageSide + x]; }

  bool operator==(const Binary224& o) const { return pixels == o.pixels; }
};

/// Per-pixel luma: round(0.299 R + 0.587 G + 0.114 B), clamped to [0, 255].
inline GrayImage to_grayscale(const RgbImage& rgb) {
  if (rgb.width <= 0 || rgb.height <= 0)
    throw std::invalid_argument("to_grayscale: empty image");
  GrayImage out(rgb.width, rgb.height);
  const std::size_t n = static_cast<std::size_t>(rgb.width) * rgb.height;
  for (std::size_t i = 0; i < n; ++i) {
    double luma = 0.299 * rgb.pixels[3 * i] + 0.587 * rgb.pixels[3 * i + 1] +
                  0.114 * rgb.pixels[3 * i + 2];
    long v = std::lround(luma);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0l, 255l));
  }
  return out;
}

/// Bilinear resampling with half-pixel centers and edge clamping:
/// src = (dst + 0.5) * src_dim / dst_dim - 0.5, clamped into the source grid.
/// A constant image maps to the same constant; equal sizes copy exactly.
inline GrayImage resize_bilinear(const GrayImage& src, int out_w, int out_h) {
  if (src.width < 1 || src.height < 1)
    throw std::invalid_argument("resize_bilinear: empty source");
  if (out_w < 1 || out_h < 1)
    throw std::invalid_argument("resize_bilinear: empty target");
  GrayImage out(out_w, out_h);
  const double sx_scale = static_cast<double>(src.width) / out_w;
  const double sy_scale = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double sy = (y + 0.5) * sy_scale - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
    int y0 = static_cast<int>(sy);
    int y1 = std::min(y0 + 1, src.height - 1);
    double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      double sx = (x + 0.5) * sx_scale - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
      int x0 = static_cast<int>(sx);
      int x1 = std::min(x0 + 1, src.width - 1);
      double fx = sx - x0;
      double top = (1.0 - fx) * src.at(x0, y0) + fx * src.at(x1, y0);
      double bot = (1.0 - fx) * src.at(x0, y1) + fx * src.at(x1, y1);
      long v = std::lround((1.0 - fy) * top + fy * bot);
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0l, 255l));
    }
  }
  return out;
}

/// Threshold maximizing the between-class variance
///   sigma_b^2(t) = w0(t) w1(t) (mu0(t) - mu1(t))^2
/// over the 256-bin histogram, class 0 = pixels <= t. Ties break toward the
/// smallest t; a constant image returns its sole intensity.
inline int otsu_threshold(const GrayImage& img) {
  if (img.pixels.empty()) throw std::invalid_argument("otsu_threshold: empty image");
  std::array<std::int64_t, 256> hist{};
  for (std::uint8_t p : img.pixels) ++hist[p];

  const double total = static_cast<double>(img.pixels.size());
  double total_sum = 0.0;
  int min_intensity = 255;
  for (int i = 0; i < 256; ++i) {
    total_sum += static_cast<double>(i) * hist[i];
    if (hist[i] > 0 && i < min_intensity) min_intensity = i;
  }

  int best_t = min_intensity;
  double best_sigma = 0.0;
  double w0 = 0.0, sum0 = 0.0;
  for (int t = 0; t < 256; ++t) {
    w0 += static_cast<double>(hist[t]);
    sum0 += static_cast<double>(t) * hist[t];
    double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    double mu0 = sum0 / w0;
    double mu1 = (total_sum - sum0) / w1;
    double sigma = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (sigma > best_sigma) {
      best_sigma = sigma;
      best_t = t;
    }
  }
  return best_t;
}

/// Maps a 224x224 grayscale page onto {0,1}: pixel <= t becomes 1 (ink).
/// Documents are dark-on-light, so low intensities are foreground.
inline Binary224 binarize(const GrayImage& img, int threshold) {
  if (img.width != kPageSide || img.height != kPageSide)
    throw std::invalid_argument("binarize: expected a " + std::to_string(kPageSide) + "x" +
                                std::to_string(kPageSide) + " image, got " +
                                std::to_string(img.width) + "x" + std::to_string(img.height));
  Binary224 out;
  for (int i = 0; i < kPagePixels; ++i)
    out.pixels[i] = img.pixels[i] <= threshold ? 1 : 0;
  return out;
}

/// Full preprocessing for one scanned page: resample to 224x224, then
/// Otsu-binarize the resampled image.
inline Binary224 prepare_page(const GrayImage& raw) {
  GrayImage resized = resize_bilinear(raw, kPageSide, kPageSide);
  return binarize(resized, otsu_threshold(resized));
}

// --- packed-bit cache format -------------------------------------------------
// 8-byte magic "PSSBIN01" followed by 224*224 bits row-major, MSB first.

inline constexpr char kBinaryMagic[8] = {'P', 'S', 'S', 'B', 'I', 'N', '0', '1'};
inline constexpr std::size_t kPackedBytes = kPagePixels / 8;

inline std::vector<std::uint8_t> pack(const Binary224& img) {
  std::vector<std::uint8_t> out(8 + kPackedBytes, 0);
  std::copy(kBinaryMagic, kBinaryMagic + 8, out.begin());
  for (int i = 0; i < kPagePixels; ++i)
    if (img.pixels[i]) out[8 + i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  return out;
}

inline Binary224 unpack(const std::uint8_t* data, std::size_t n) {
  if (n < 8 + kPackedBytes || !std::equal(kBinaryMagic, kBinaryMagic + 8, data))
    throw std::runtime_error("unpack: not a packed binary page");
  Binary224 img;
  for (int i = 0; i < kPagePixels; ++i)
    img.pixels[i] = (data[8 + i / 8] >> (7 - i % 8)) & 1;
  return img;
}

inline void save_binary224(const Binary224& img, const std::filesystem::path& path) {
  auto bytes = pack(img);
  io::BinaryWriter w(path);
  w.bytes(bytes.data(), bytes.size());
  w.close();
}

inline Binary224 load_binary224(const std::filesystem::path& path) {
  auto bytes = io::read_file_bytes(path);
  return unpack(bytes.data(), bytes.size());
}

}  // namespace pss::imaging
