#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "pss/imaging.hpp"

// File I/O for page scans: PGM (P5) and PPM (P6) are parsed directly, PNG goes
// through libpng. PNG content is always decoded to RGB and reduced with the
// same luma formula as every other input path, so grayscale sources survive
// losslessly (0.299 + 0.587 + 0.114 = 1).

namespace pss::imaging {

namespace detail {

inline int pnm_next_int(std::istream& in) {
  // skips whitespace and '#' comment lines
  for (;;) {
    int c = in.peek();
    if (c == EOF) throw std::runtime_error("truncated PNM header");
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("malformed PNM header");
  return value;
}

inline GrayImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  char p, kind;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw std::runtime_error("unsupported PNM type in " + path.string());
  int w = pnm_next_int(in);
  int h = pnm_next_int(in);
  int maxval = pnm_next_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("unsupported PNM geometry in " + path.string());
  in.get();  // single whitespace before raster
  std::size_t count = static_cast<std::size_t>(w) * h * (kind == '6' ? 3 : 1);
  std::vector<std::uint8_t> raster(count);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(count));
  if (in.gcount() != static_cast<std::streamsize>(count))
    throw std::runtime_error("truncated PNM raster in " + path.string());
  if (kind == '5') {
    GrayImage img(w, h);
    img.pixels = std::move(raster);
    return img;
  }
  RgbImage rgb(w, h);
  rgb.pixels = std::move(raster);
  return to_grayscale(rgb);
}

inline GrayImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage rgb(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, rgb.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  return to_grayscale(rgb);
}

}  // namespace detail

/// Reads a PNG/PGM/PPM scan as grayscale. The format is detected from the
/// file's magic bytes, not the extension.
inline GrayImage read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open image: " + path.string());
  unsigned char sig[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(sig), 2);
  probe.close();
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return detail::read_pnm(path);
  if (sig[0] == 0x89 && sig[1] == 'P') return detail::read_png(path);
  throw std::runtime_error("unsupported image format: " + path.string());
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_png(const GrayImage& img, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

/// Renders a binarized page back to grayscale (ink=0/black on white) so
/// generated corpora can round-trip through the normal ingestion path.
inline GrayImage to_gray_rendering(const Binary224& page) {
  GrayImage img(kPageSide, kPageSide, 255);
  for (int i = 0; i < kPagePixels; ++i)
    if (page.pixels[i]) img.pixels[i] = 0;
  return img;
}

}  // namespace pss::imaging
