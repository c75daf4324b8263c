#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "asr/common.hpp"

namespace asr {

/// Row-major single-channel image, intensities nominally in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), pixels(size_t(w) * h, fill) {}

  double& at(int x, int y) { return pixels[size_t(y) * width + x]; }
  double at(int x, int y) const { return pixels[size_t(y) * width + x]; }
};

/// Nearest in-bounds pixel (replicate border).
inline double pixel_clamped(const GrayImage& img, int x, int y) {
  x = std::clamp(x, 0, img.width - 1);
  y = std::clamp(y, 0, img.height - 1);
  return img.at(x, y);
}

/// Bilinear sample with replicate border.
inline double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
  const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

// ---------------------------------------------------------------------------
// Binary 8-bit PGM (P5), intensities mapped to [0, 1] by /255.

namespace detail {

inline int pgm_next_int(std::istream& is, const std::string& what) {
  // skips whitespace and '#' comment lines
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) throw IoError(IoCode::truncated, what, "unexpected end of PGM header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw IoError(IoCode::parse_error, what, "malformed PGM header");
  return value;
}

}  // namespace detail

inline GrayImage read_pgm(std::istream& is) {
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (!is || m0 != 'P' || m1 != '5')
    throw IoError(IoCode::bad_magic, "pgm header", "not a binary PGM (P5) file");
  const int w = detail::pgm_next_int(is, "pgm width");
  const int h = detail::pgm_next_int(is, "pgm height");
  const int maxval = detail::pgm_next_int(is, "pgm maxval");
  if (w < 1 || h < 1) throw IoError(IoCode::dim_mismatch, "pgm header", "bad PGM dimensions");
  if (maxval < 1 || maxval > 255)
    throw IoError(IoCode::dim_mismatch, "pgm header", "only 8-bit PGM supported");
  // the single whitespace byte after maxval was already consumed by pgm_next_int
  GrayImage img(w, h);
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), w);
    if (is.gcount() != w) throw IoError(IoCode::truncated, "pgm pixels", "truncated PGM data");
    for (int x = 0; x < w; ++x) img.at(x, y) = row[x] / 255.0;
  }
  return img;
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(IoCode::io_failure, "", "cannot open " + path.string());
  return read_pgm(is);
}

inline void write_pgm(std::ostream& os, const GrayImage& img) {
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(img.at(x, y), 0.0, 1.0);
      row[size_t(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  atomic_write_file(path, [&](std::ostream& os) { write_pgm(os, img); });
}

/// Warps `src` through homography `h` (mapping src coords to dst coords) into
/// a dst_w x dst_h image; bilinear sampling with replicate border.
inline GrayImage warp_image(const GrayImage& src, const Eigen::Matrix3d& h, int dst_w, int dst_h) {
  const Eigen::Matrix3d hinv = h.inverse();
  GrayImage out(dst_w, dst_h);
  for (int y = 0; y < dst_h; ++y) {
    for (int x = 0; x < dst_w; ++x) {
      const Eigen::Vector3d p = hinv * Eigen::Vector3d(x, y, 1.0);
      const double w = p.z();
      if (std::abs(w) < 1e-12) continue;
      out.at(x, y) = sample_bilinear(src, p.x() / w, p.y() / w);
    }
  }
  return out;
}

}  // namespace asr
