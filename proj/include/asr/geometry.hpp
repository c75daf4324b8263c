#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "asr/common.hpp"

namespace asr {

/// One simulated camera view: tilt t >= 1 (latitude arccos(1/t)) and
/// longitude alpha in [0, pi). A circle (t = 1) has no longitude, so alpha is
/// canonicalized to 0 there.
struct ViewParams {
  double t = 1.0;
  double alpha = 0.0;
};

inline ViewParams make_view(double t, double alpha) {
  if (!std::isfinite(t) || t < 1.0) throw Error("view tilt must be finite and >= 1");
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha >= kPi)
    throw Error("view longitude must lie in [0, pi)");
  if (t == 1.0) alpha = 0.0;
  return ViewParams{t, alpha};
}

/// 2x2 linear map with positive determinant.
struct AffineMap {
  Eigen::Matrix2d m = Eigen::Matrix2d::Identity();
};

/// Origin-centered ellipse {x : x' e x <= 1}, e symmetric positive-definite.
struct Ellipse {
  Eigen::Matrix2d e = Eigen::Matrix2d::Identity();
};

inline Eigen::Matrix2d rotation2d(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

/// A = R(alpha) * diag(t, 1). Scale is left to the detector and in-plane
/// rotation to orientation alignment, so those factors are fixed at 1 and 0.
inline AffineMap affine_from_view(const ViewParams& v) {
  Eigen::Matrix2d m = rotation2d(v.alpha);
  m.col(0) *= v.t;
  return AffineMap{m};
}

/// The distortion ellipse of a view: R(alpha) * diag(t^2, 1) * R(alpha)' —
/// the unit circle seen under tilt t along direction alpha. Eigenvalues are
/// {t^2, 1} for every alpha.
inline Ellipse view_ellipse(const ViewParams& v) {
  const Eigen::Matrix2d a = affine_from_view(v).m;
  return Ellipse{a * a.transpose()};
}

namespace detail {

inline void check_ellipse(const Eigen::Matrix2d& e) {
  const double scale = e.cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || !e.allFinite() ||
      std::abs(e(0, 1) - e(1, 0)) > 1e-9 * std::max(1.0, scale))
    throw Error("invalid ellipse: matrix must be symmetric");
  const double det = e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0);
  if (!(e(0, 0) > 0.0) || !(det > 0.0))
    throw Error("invalid ellipse: matrix must be positive-definite");
}

/// q(phi) = u' e u for u = (cos phi, sin phi).
inline double ellipse_quadratic(const Eigen::Matrix2d& e, double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  return e(0, 0) * c * c + 2.0 * e(0, 1) * c * s + e(1, 1) * s * s;
}

/// Integral of 1/q(phi) over [lo, hi], in closed form. The antiderivative is
/// atan2(d sin + b cos, sqrt(det) cos)/sqrt(det); the interval is chopped so
/// each piece advances the atan2 argument by less than pi.
inline double inverse_quadratic_integral(const Eigen::Matrix2d& e, double lo, double hi) {
  const double b = e(0, 1), d = e(1, 1);
  const double det = e(0, 0) * d - b * b;
  const double rd = std::sqrt(det);
  // |dF/dphi| = rd / q <= rd / lambda_min; keep each chunk's advance < pi/2.
  const double tr = e(0, 0) + d;
  const double lmin = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
  const double max_step = 0.5 * kPi * std::max(lmin, 1e-300) / rd;
  const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / std::min(max_step, kPi / 8))));
  const double h = (hi - lo) / pieces;
  double total = 0.0;
  auto z = [&](double phi) {
    return std::complex<double>(rd * std::cos(phi), d * std::sin(phi) + b * std::cos(phi));
  };
  for (int k = 0; k < pieces; ++k) {
    const double a0 = lo + k * h, a1 = lo + (k + 1) * h;
    total += std::arg(z(a1) * std::conj(z(a0)));
  }
  return total / rd;
}

}  // namespace detail

/// Overlap rate of two origin-centered ellipses:
/// area(intersection) / max(area1, area2). For the equal-area ellipses of one
/// tilt row this is the plain intersection-over-area rate, and it is the
/// definition that reproduces the 44-view ballpark at the default threshold
/// (intersection-over-union lands near 78 at T_o = 0.8).
///
/// Both regions are star-shaped about the origin, so in polar coordinates the
/// intersection boundary is r(phi) = 1/sqrt(max(q1, q2)) and the area is a
/// piecewise closed-form integral between the (at most four) angles where the
/// two quadratics cross.
inline double ellipse_overlap(const Ellipse& e1, const Ellipse& e2) {
  detail::check_ellipse(e1.e);
  detail::check_ellipse(e2.e);
  if ((e1.e - e2.e).cwiseAbs().maxCoeff() <= 1e-12) return 1.0;

  const Eigen::Matrix2d diff = e1.e - e2.e;
  // q1 - q2 = p + m*cos(2 phi - psi)
  const double p = 0.5 * (diff(0, 0) + diff(1, 1));
  const double qc = 0.5 * (diff(0, 0) - diff(1, 1));
  const double qs = diff(0, 1);
  const double m = std::hypot(qc, qs);

  std::vector<double> cuts;
  cuts.push_back(0.0);
  if (m > 0.0 && std::abs(p) < m) {
    const double psi = std::atan2(qs, qc);
    const double th = std::acos(std::clamp(-p / m, -1.0, 1.0));
    for (double base : {0.5 * (psi + th), 0.5 * (psi - th)}) {
      for (int k = -2; k <= 2; ++k) {
        const double ang = base + k * kPi;
        if (ang > 1e-12 && ang < 2.0 * kPi - 1e-12) cuts.push_back(ang);
      }
    }
  }
  cuts.push_back(2.0 * kPi);
  std::sort(cuts.begin(), cuts.end());

  double inter_area = 0.0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    if (hi - lo < 1e-14) continue;
    const double mid = 0.5 * (lo + hi);
    const Eigen::Matrix2d& outer =
        detail::ellipse_quadratic(e1.e, mid) >= detail::ellipse_quadratic(e2.e, mid) ? e1.e : e2.e;
    inter_area += 0.5 * detail::inverse_quadratic_integral(outer, lo, hi);
  }

  auto area = [](const Eigen::Matrix2d& e) {
    return kPi / std::sqrt(e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0));
  };
  return std::clamp(inter_area / std::max(area(e1.e), area(e2.e)), 0.0, 1.0);
}

namespace detail {

/// Largest longitude step whose adjacent view ellipses still overlap more
/// than `threshold`, located by bisection on (0, pi/2] to 1e-4 rad. The
/// overlap is a decreasing function of the step on that interval.
inline double max_alpha_step(double tilt, double threshold) {
  const Ellipse base = view_ellipse(make_view(tilt, 0.0));
  auto above = [&](double step) {
    return ellipse_overlap(base, view_ellipse(make_view(tilt, step))) > threshold;
  };
  const double hi_cap = 0.5 * kPi;
  if (above(hi_cap)) return hi_cap;
  double lo = 0.0, hi = hi_cap;
  while (hi - lo > 1e-4) {
    const double mid = 0.5 * (lo + hi);
    (above(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace detail

/// Samples the simulated view set. Tilts are the geometric ladder
/// 4^(k/(n_t-1)), k = 0..n_t-1; tilt 1 contributes the single frontal view;
/// every other tilt row covers [0, pi) uniformly with the widest step that
/// keeps adjacent-ellipse overlap above `overlap_threshold` (rounded down so
/// the row divides [0, pi) evenly). Output is ordered by ascending tilt, then
/// ascending longitude.
inline std::vector<ViewParams> sample_views(double overlap_threshold, int tilt_count) {
  if (!(overlap_threshold > 0.0 && overlap_threshold < 1.0))
    throw Error("overlap threshold must lie in (0, 1)");
  if (tilt_count < 2) throw Error("tilt count must be >= 2");

  std::vector<ViewParams> views;
  views.push_back(make_view(1.0, 0.0));
  for (int k = 1; k < tilt_count; ++k) {
    const double t = std::pow(4.0, static_cast<double>(k) / (tilt_count - 1));
    const double widest = detail::max_alpha_step(t, overlap_threshold);
    const int row = std::max(1, static_cast<int>(std::ceil(kPi / widest - 1e-12)));
    const double step = kPi / row;
    for (int j = 0; j < row; ++j) views.push_back(make_view(t, j * step));
  }
  return views;
}

/// Text form: one "t alpha" line per view, 9 significant digits.
inline void write_views(std::ostream& os, const std::vector<ViewParams>& views) {
  char buf[80];
  for (const ViewParams& v : views) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g\n", v.t, v.alpha);
    os << buf;
  }
}

inline std::vector<ViewParams> read_views(std::istream& is) {
  std::vector<ViewParams> views;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double t, alpha;
    std::string extra;
    if (!(ls >> t >> alpha) || (ls >> extra))
      throw IoError(IoCode::parse_error, "views",
                    "malformed view at line " + std::to_string(line_no));
    views.push_back(make_view(t, alpha));
  }
  return views;
}

}  // namespace asr
