#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "asr/geometry.hpp"
#include "asr/image.hpp"

namespace asr {

/// Scale-space keypoint. Orientation is optional: NaN means "not assigned".
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double sigma = 1.0;
  double orientation = std::numeric_limits<double>::quiet_NaN();
  double response = 0.0;

  bool has_orientation() const { return !std::isnan(orientation); }
};

/// Square grayscale patch in the canonical keypoint frame; side is odd so a
/// center pixel exists. Row-major, row = v + h, col = u + h for centered
/// integer offsets (u, v), h = (side-1)/2.
struct Patch {
  int side = 0;
  std::vector<double> pixels;

  Patch() = default;
  explicit Patch(int s, double fill = 0.0) : side(s), pixels(size_t(s) * s, fill) {}

  double& at(int col, int row) { return pixels[size_t(row) * side + col]; }
  double at(int col, int row) const { return pixels[size_t(row) * side + col]; }
  int radius() const { return (side - 1) / 2; }
};

namespace detail {

inline void check_patch_side(int side) {
  if (side < 3 || side % 2 == 0) throw Error("patch side must be odd and >= 3");
}

/// BRISK-like sampling pattern: three concentric rings at {0.33, 0.66, 1.0}
/// of the support radius carrying {n/4, n/3, rest} points (15/20/25 for the
/// default 60).
inline std::vector<std::pair<double, double>> orientation_pattern(double radius, int n_points) {
  const double fractions[3] = {0.33, 0.66, 1.0};
  const int counts[3] = {n_points / 4, n_points / 3, n_points - n_points / 4 - n_points / 3};
  std::vector<std::pair<double, double>> pts;
  pts.reserve(size_t(n_points));
  for (int ring = 0; ring < 3; ++ring) {
    const double r = fractions[ring] * radius;
    for (int k = 0; k < counts[ring]; ++k) {
      const double a = 2.0 * kPi * k / counts[ring];
      pts.emplace_back(r * std::cos(a), r * std::sin(a));
    }
  }
  return pts;
}

/// Average gradient over the ring pattern; gradients are central differences
/// of bilinearly sampled intensities.
inline std::pair<double, double> average_gradient(const GrayImage& img, double cx, double cy,
                                                  double radius, double step, int n_points) {
  double gx = 0.0, gy = 0.0;
  for (const auto& [dx, dy] : orientation_pattern(radius, n_points)) {
    const double px = cx + dx, py = cy + dy;
    gx += sample_bilinear(img, px + step, py) - sample_bilinear(img, px - step, py);
    gy += sample_bilinear(img, px, py + step) - sample_bilinear(img, px, py - step);
  }
  const double norm = 1.0 / (2.0 * step * n_points);
  return {gx * norm, gy * norm};
}

inline double direction_of(double gx, double gy) {
  if (std::hypot(gx, gy) < 1e-9) return 0.0;
  double a = std::atan2(gy, gx);
  if (a < 0.0) a += 2.0 * kPi;
  if (a >= 2.0 * kPi) a = 0.0;
  return a;
}

/// out(x) = ref(ainv * x), both grids centered, bilinear, replicate border.
/// Pure linear map of the input intensities: the weights depend only on ainv.
template <typename SrcScalar, typename DstScalar>
inline void warp_kernel(const SrcScalar* src, int src_side, const Eigen::Matrix2d& ainv,
                        int out_side, DstScalar* out) {
  const int hs = (src_side - 1) / 2;
  const int ho = (out_side - 1) / 2;
  const double a00 = ainv(0, 0), a01 = ainv(0, 1), a10 = ainv(1, 0), a11 = ainv(1, 1);
  const double top = src_side - 1.0;
  for (int row = 0; row < out_side; ++row) {
    const double v = row - ho;
    for (int col = 0; col < out_side; ++col) {
      const double u = col - ho;
      double sx = a00 * u + a01 * v + hs;
      double sy = a10 * u + a11 * v + hs;
      sx = std::clamp(sx, 0.0, top);
      sy = std::clamp(sy, 0.0, top);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, src_side - 1);
      const int y1 = std::min(y0 + 1, src_side - 1);
      const double fx = sx - x0, fy = sy - y0;
      const double t = src[size_t(y0) * src_side + x0] * (1.0 - fx) + src[size_t(y0) * src_side + x1] * fx;
      const double b = src[size_t(y1) * src_side + x0] * (1.0 - fx) + src[size_t(y1) * src_side + x1] * fx;
      out[size_t(row) * out_side + col] = static_cast<DstScalar>(t * (1.0 - fy) + b * fy);
    }
  }
}

}  // namespace detail

/// Dominant orientation at a keypoint: direction of the average gradient over
/// the ring pattern with support radius c_s * sigma and difference step
/// 0.5 * sigma. Returns a value in [0, 2pi); 0 when the average gradient is
/// degenerate (norm < 1e-9).
inline double estimate_orientation(const GrayImage& img, const Keypoint& kp, double c_s = 7.5,
                                   int n_points = 60) {
  if (!(kp.sigma > 0.0)) throw Error("keypoint sigma must be positive");
  auto [gx, gy] = detail::average_gradient(img, kp.x, kp.y, c_s * kp.sigma, 0.5 * kp.sigma, n_points);
  return detail::direction_of(gx, gy);
}

/// Same pattern applied to a patch around its center pixel: support radius
/// `radius_px` patch pixels, step scaled so radius/step matches the image-side
/// procedure (step = 0.5 * radius / c_s).
inline double estimate_patch_orientation(const Patch& p, double radius_px, double c_s = 7.5,
                                         int n_points = 60) {
  GrayImage view;
  view.width = p.side;
  view.height = p.side;
  view.pixels = p.pixels;
  const double c = p.radius();
  auto [gx, gy] =
      detail::average_gradient(view, c, c, radius_px, 0.5 * radius_px / c_s, n_points);
  return detail::direction_of(gx, gy);
}

/// Extracts the side x side patch around kp, rotated by theta, with the patch
/// radius (side-1)/2 mapping to `support_radius_px` image pixels:
///   p(u, v) = img(x + r (u cos - v sin), y + r (u sin + v cos)),
///   r = support_radius_px / ((side-1)/2).
/// Bilinear interpolation, replicate border.
inline Patch extract_patch(const GrayImage& img, const Keypoint& kp, int side, double theta,
                           double support_radius_px) {
  detail::check_patch_side(side);
  if (!(support_radius_px > 0.0)) throw Error("support radius must be positive");
  const int h = (side - 1) / 2;
  const double r = support_radius_px / h;
  const double c = std::cos(theta), s = std::sin(theta);
  Patch p(side);
  for (int row = 0; row < side; ++row) {
    const double v = row - h;
    for (int col = 0; col < side; ++col) {
      const double u = col - h;
      p.at(col, row) = sample_bilinear(img, kp.x + r * (u * c - v * s), kp.y + r * (u * s + v * c));
    }
  }
  return p;
}

/// Simulated view of a reference patch: out(x) = ref(A^-1 x) with bilinear
/// interpolation, both frames centered; the central crop is fused in (the
/// out grid is the crop). Requires the reference diagonal to cover the output
/// diagonal, i.e. (ref.side - 1) >= sqrt(2) (out_side - 1), since A^-1 never
/// expands for tilt >= 1.
inline Patch warp_patch(const Patch& ref, const AffineMap& a, int out_side) {
  detail::check_patch_side(ref.side);
  detail::check_patch_side(out_side);
  if (a.m.determinant() <= 0.0) throw Error("affine map must have positive determinant");
  if (double(ref.side - 1) + 1e-9 < std::sqrt(2.0) * (out_side - 1))
    throw PatchTooSmallError("reference patch side " + std::to_string(ref.side) +
                             " too small for output side " + std::to_string(out_side));
  Patch out(out_side);
  detail::warp_kernel(ref.pixels.data(), ref.side, Eigen::Matrix2d(a.m.inverse()), out_side,
                      out.pixels.data());
  return out;
}

/// Content rotation by `angle`: out(x) = ref(R(angle) x), cropped to out_side.
inline Patch rotate_patch(const Patch& ref, double angle, int out_side) {
  return warp_patch(ref, AffineMap{rotation2d(-angle)}, out_side);
}

}  // namespace asr
