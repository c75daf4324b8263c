#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "asr/common.hpp"
#include "asr/image.hpp"
#include "asr/patch.hpp"

namespace asr {

struct DogParams {
  int octaves = 4;
  int scales_per_octave = 3;
  double contrast_threshold = 0.03;
  double edge_ratio_threshold = 10.0;
  double base_sigma = 1.6;
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[size_t(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const std::vector<double> k = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;
  GrayImage tmp(img.width, img.height), out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[size_t(i + radius)] * pixel_clamped(img, x + i, y);
      tmp.at(x, y) = acc;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[size_t(i + radius)] * pixel_clamped(tmp, x, y + i);
      out.at(x, y) = acc;
    }
  return out;
}

inline GrayImage downsample2(const GrayImage& img) {
  GrayImage out(std::max(1, img.width / 2), std::max(1, img.height / 2));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = img.at(2 * x, 2 * y);
  return out;
}

struct DogCandidate {
  double x, y, sigma, response;
};

}  // namespace detail

/// Minimal DoG scale-space detector: Gaussian pyramid, 3x3x3 extrema,
/// quadratic sub-pixel refinement, contrast and edge rejection. Keypoints are
/// returned sorted by descending |response|, orientation unset.
inline std::vector<Keypoint> detect_dog(const GrayImage& img, const DogParams& p = {}) {
  if (img.width < 32 || img.height < 32) throw Error("image too small for DoG (needs 32x32)");
  if (p.octaves < 1 || p.scales_per_octave < 2 || !(p.base_sigma > 0.0) ||
      !(p.edge_ratio_threshold > 1.0) || p.contrast_threshold < 0.0)
    throw Error("invalid DoG parameters");

  const int S = p.scales_per_octave;
  const double assumed_blur = 0.5;
  GrayImage base = detail::gaussian_blur(
      img, std::sqrt(std::max(0.0, p.base_sigma * p.base_sigma - assumed_blur * assumed_blur)));

  const double edge_limit =
      (p.edge_ratio_threshold + 1.0) * (p.edge_ratio_threshold + 1.0) / p.edge_ratio_threshold;
  const int border = 5;
  std::vector<detail::DogCandidate> found;

  for (int octave = 0; octave < p.octaves; ++octave) {
    if (base.width < 2 * border + 3 || base.height < 2 * border + 3) break;
    std::vector<GrayImage> gauss;
    gauss.push_back(base);
    for (int k = 1; k <= S + 2; ++k) {
      const double s_prev = p.base_sigma * std::pow(2.0, double(k - 1) / S);
      const double s_curr = p.base_sigma * std::pow(2.0, double(k) / S);
      gauss.push_back(
          detail::gaussian_blur(gauss.back(), std::sqrt(s_curr * s_curr - s_prev * s_prev)));
    }
    std::vector<GrayImage> dog;
    for (int k = 0; k <= S + 1; ++k) {
      GrayImage d(base.width, base.height);
      for (size_t i = 0; i < d.pixels.size(); ++i)
        d.pixels[i] = gauss[size_t(k + 1)].pixels[i] - gauss[size_t(k)].pixels[i];
      dog.push_back(std::move(d));
    }

    const int w = base.width, h = base.height;
    auto D = [&](int k, int x, int y) { return dog[size_t(k)].at(x, y); };
    for (int k = 1; k <= S; ++k) {
      for (int y = border; y < h - border; ++y) {
        for (int x = border; x < w - border; ++x) {
          const double v = D(k, x, y);
          bool is_max = true, is_min = true;
          for (int dk = -1; dk <= 1 && (is_max || is_min); ++dk)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (dk == 0 && dy == 0 && dx == 0) continue;
                const double n = D(k + dk, x + dx, y + dy);
                if (n >= v) is_max = false;
                if (n <= v) is_min = false;
              }
          if (!is_max && !is_min) continue;

          // quadratic refinement in (x, y, scale)
          int cx = x, cy = y, ck = k;
          Eigen::Vector3d offset = Eigen::Vector3d::Zero();
          double refined = v;
          bool ok = false;
          for (int iter = 0; iter < 5; ++iter) {
            const double dxv = 0.5 * (D(ck, cx + 1, cy) - D(ck, cx - 1, cy));
            const double dyv = 0.5 * (D(ck, cx, cy + 1) - D(ck, cx, cy - 1));
            const double dsv = 0.5 * (D(ck + 1, cx, cy) - D(ck - 1, cx, cy));
            const double c = D(ck, cx, cy);
            Eigen::Matrix3d hess;
            hess(0, 0) = D(ck, cx + 1, cy) + D(ck, cx - 1, cy) - 2.0 * c;
            hess(1, 1) = D(ck, cx, cy + 1) + D(ck, cx, cy - 1) - 2.0 * c;
            hess(2, 2) = D(ck + 1, cx, cy) + D(ck - 1, cx, cy) - 2.0 * c;
            hess(0, 1) = hess(1, 0) = 0.25 * (D(ck, cx + 1, cy + 1) - D(ck, cx - 1, cy + 1) -
                                              D(ck, cx + 1, cy - 1) + D(ck, cx - 1, cy - 1));
            hess(0, 2) = hess(2, 0) = 0.25 * (D(ck + 1, cx + 1, cy) - D(ck + 1, cx - 1, cy) -
                                              D(ck - 1, cx + 1, cy) + D(ck - 1, cx - 1, cy));
            hess(1, 2) = hess(2, 1) = 0.25 * (D(ck + 1, cx, cy + 1) - D(ck + 1, cx, cy - 1) -
                                              D(ck - 1, cx, cy + 1) + D(ck - 1, cx, cy - 1));
            if (std::abs(hess.determinant()) < 1e-20) break;
            const Eigen::Vector3d grad(dxv, dyv, dsv);
            offset = -hess.colPivHouseholderQr().solve(grad);
            if (std::abs(offset.x()) < 0.5 && std::abs(offset.y()) < 0.5 &&
                std::abs(offset.z()) < 0.5) {
              refined = c + 0.5 * grad.dot(offset);
              ok = true;
              break;
            }
            cx += static_cast<int>(std::lround(std::clamp(offset.x(), -1.0, 1.0)));
            cy += static_cast<int>(std::lround(std::clamp(offset.y(), -1.0, 1.0)));
            ck += static_cast<int>(std::lround(std::clamp(offset.z(), -1.0, 1.0)));
            if (cx < border || cx >= w - border || cy < border || cy >= h - border || ck < 1 ||
                ck > S)
              break;
          }
          if (!ok || std::abs(refined) < p.contrast_threshold) continue;

          // edge response on the 2x2 spatial Hessian
          const double hxx = D(ck, cx + 1, cy) + D(ck, cx - 1, cy) - 2.0 * D(ck, cx, cy);
          const double hyy = D(ck, cx, cy + 1) + D(ck, cx, cy - 1) - 2.0 * D(ck, cx, cy);
          const double hxy = 0.25 * (D(ck, cx + 1, cy + 1) - D(ck, cx - 1, cy + 1) -
                                     D(ck, cx + 1, cy - 1) + D(ck, cx - 1, cy - 1));
          const double tr = hxx + hyy, det = hxx * hyy - hxy * hxy;
          if (det <= 0.0 || tr * tr / det >= edge_limit) continue;

          const double scale_factor = std::pow(2.0, double(octave));
          found.push_back({(cx + offset.x()) * scale_factor, (cy + offset.y()) * scale_factor,
                           p.base_sigma * std::pow(2.0, octave + (ck + offset.z()) / S),
                           refined});
        }
      }
    }
    base = detail::downsample2(gauss[size_t(S)]);
  }

  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    return std::abs(a.response) > std::abs(b.response);
  });
  std::vector<Keypoint> kps;
  kps.reserve(found.size());
  for (const auto& c : found) {
    Keypoint kp;
    kp.x = c.x;
    kp.y = c.y;
    kp.sigma = c.sigma;
    kp.response = c.response;
    kps.push_back(kp);
  }
  return kps;
}

// ---------------------------------------------------------------------------
// Keypoint text format: "# asr-keypoints v1" header, then one keypoint per
// line: "x y sigma orientation" (orientation "nan" when unset).

inline constexpr const char* kKeypointHeader = "# asr-keypoints v1";

inline void write_keypoints(std::ostream& os, const std::vector<Keypoint>& kps) {
  os << kKeypointHeader << "\n";
  char buf[160];
  for (const Keypoint& kp : kps) {
    if (kp.has_orientation())
      std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.6f\n", kp.x, kp.y, kp.sigma,
                    kp.orientation);
    else
      std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f nan\n", kp.x, kp.y, kp.sigma);
    os << buf;
  }
}

inline void write_keypoints(const std::vector<Keypoint>& kps, const std::filesystem::path& path) {
  atomic_write_file(path, [&](std::ostream& os) { write_keypoints(os, kps); });
}

inline std::vector<Keypoint> read_keypoints(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kKeypointHeader)
    throw IoError(IoCode::bad_magic, "keypoint header", "missing '# asr-keypoints v1' header");
  std::vector<Keypoint> kps;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    double vals[4];
    const char* s = line.c_str();
    char* end = nullptr;
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
      vals[i] = std::strtod(s, &end);
      if (end == s) {
        ok = false;
        break;
      }
      s = end;
    }
    while (ok && *s != '\0' && std::isspace(static_cast<unsigned char>(*s))) ++s;
    if (!ok || *s != '\0')
      throw IoError(IoCode::parse_error, "keypoints",
                    "malformed keypoint at line " + std::to_string(line_no));
    Keypoint kp;
    kp.x = vals[0];
    kp.y = vals[1];
    kp.sigma = vals[2];
    kp.orientation = vals[3];
    if (!(kp.sigma > 0.0))
      throw IoError(IoCode::parse_error, "keypoints",
                    "non-positive sigma at line " + std::to_string(line_no));
    kps.push_back(kp);
  }
  return kps;
}

inline std::vector<Keypoint> read_keypoints(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(IoCode::io_failure, "", "cannot open " + path.string());
  return read_keypoints(is);
}

}  // namespace asr
