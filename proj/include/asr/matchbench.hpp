#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "asr/descriptor.hpp"
#include "asr/detect.hpp"

namespace asr {

/// One accepted NNDR match: a's nearest neighbor in b, with the distance and
/// the nearest/second-nearest ratio that accepted it.
struct MatchPair {
  int index_a = 0;
  int index_b = 0;
  double distance = 0.0;
  double ratio = 0.0;
};

/// For every descriptor in `a`, finds the nearest and second-nearest
/// descriptor in `b` by Euclidean distance and accepts the pair when
/// nearest/second < ratio_threshold. A single candidate has second distance
/// +inf, hence ratio 0. Ties go to the lower index. One match per query, no
/// cross-check.
inline std::vector<MatchPair> match_nndr(const std::vector<Eigen::VectorXd>& a,
                                         const std::vector<Eigen::VectorXd>& b,
                                         double ratio_threshold) {
  if (a.empty() || b.empty()) throw Error("match_nndr: empty descriptor list");
  std::vector<MatchPair> out;
  for (size_t i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (size_t j = 0; j < b.size(); ++j) {
      if (a[i].size() != b[j].size()) throw Error("match_nndr: descriptor dimension mismatch");
      const double d = (a[i] - b[j]).norm();
      if (d < best) {
        second = best;
        best = d;
        best_j = static_cast<int>(j);
      } else if (d < second) {
        second = d;
      }
    }
    double ratio;
    if (std::isinf(second))
      ratio = 0.0;
    else if (second > 0.0)
      ratio = best / second;
    else
      ratio = best > 0.0 ? 1.0 : 0.0;
    if (ratio < ratio_threshold) out.push_back({static_cast<int>(i), best_j, best, ratio});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Homography ground truth (Oxford-style "H1to2p" files).

struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
};

inline Homography make_homography(const Eigen::Matrix3d& h) {
  if (!h.allFinite() || std::abs(h.determinant()) < 1e-12)
    throw Error("homography must be finite and non-singular");
  Eigen::Matrix3d n = h;
  if (std::abs(n(2, 2)) > 1e-12) n /= n(2, 2);
  return Homography{n};
}

inline Homography read_homography(std::istream& is) {
  Eigen::Matrix3d h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(is >> h(r, c)))
        throw IoError(IoCode::parse_error, "homography", "expected 9 decimal values");
  return make_homography(h);
}

inline Homography read_homography(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(IoCode::io_failure, "", "cannot open " + path.string());
  return read_homography(is);
}

inline Eigen::Vector2d project_point(const Homography& h, double x, double y) {
  const Eigen::Vector3d p = h.h * Eigen::Vector3d(x, y, 1.0);
  if (std::abs(p.z()) < 1e-12) throw Error("homography maps point to infinity");
  return {p.x() / p.z(), p.y() / p.z()};
}

/// Geometric mean of the local Jacobian's singular values at (x, y); the
/// isotropic scale change of the mapping there.
inline double projected_scale_factor(const Homography& h, double x, double y) {
  const double w = h.h(2, 0) * x + h.h(2, 1) * y + h.h(2, 2);
  // det J = det(H) / w^3 for the normalized projective map
  return std::sqrt(std::abs(h.h.determinant() / (w * w * w)));
}

/// Pairs (i, j) such that kp_i projected through h lands within dist_thresh
/// pixels of kp_j and the projected scale agrees within scale_ratio_max;
/// greedy one-to-one assignment by ascending reprojection distance.
inline std::set<std::pair<int, int>> ground_truth_correspondences(
    const std::vector<Keypoint>& kps_a, const std::vector<Keypoint>& kps_b, const Homography& h,
    double dist_thresh = 2.5, double scale_ratio_max = 1.8) {
  if (std::abs(h.h.determinant()) < 1e-12) throw Error("singular homography");
  struct Cand {
    double d;
    int i, j;
  };
  std::vector<Cand> cands;
  for (size_t i = 0; i < kps_a.size(); ++i) {
    const Eigen::Vector2d p = project_point(h, kps_a[i].x, kps_a[i].y);
    const double s_proj = kps_a[i].sigma * projected_scale_factor(h, kps_a[i].x, kps_a[i].y);
    for (size_t j = 0; j < kps_b.size(); ++j) {
      const double d = std::hypot(p.x() - kps_b[j].x, p.y() - kps_b[j].y);
      if (d > dist_thresh) continue;
      const double ratio = std::max(s_proj / kps_b[j].sigma, kps_b[j].sigma / s_proj);
      if (ratio > scale_ratio_max) continue;
      cands.push_back({d, static_cast<int>(i), static_cast<int>(j)});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::set<std::pair<int, int>> gt;
  std::vector<char> used_a(kps_a.size(), 0), used_b(kps_b.size(), 0);
  for (const Cand& c : cands) {
    if (used_a[size_t(c.i)] || used_b[size_t(c.j)]) continue;
    used_a[size_t(c.i)] = used_b[size_t(c.j)] = 1;
    gt.insert({c.i, c.j});
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Recall / 1-precision curves.

struct CurvePoint {
  double threshold = 0.0;
  int matches = 0;
  int correct = 0;
  double recall = 0.0;
  double one_minus_precision = 0.0;
};

/// Sweeps the NNDR ratio threshold over the match list (one point per
/// distinct ratio). Recall denominators are |gt|.
inline std::vector<CurvePoint> recall_precision_curve(std::vector<MatchPair> matches,
                                                      const std::set<std::pair<int, int>>& gt) {
  if (gt.empty()) throw Error("recall_precision_curve: no ground-truth correspondences");
  std::sort(matches.begin(), matches.end(), [](const MatchPair& a, const MatchPair& b) {
    if (a.ratio != b.ratio) return a.ratio < b.ratio;
    if (a.index_a != b.index_a) return a.index_a < b.index_a;
    return a.index_b < b.index_b;
  });
  std::vector<CurvePoint> curve;
  int total = 0, correct = 0;
  size_t i = 0;
  while (i < matches.size()) {
    const double r = matches[i].ratio;
    while (i < matches.size() && matches[i].ratio == r) {
      ++total;
      if (gt.count({matches[i].index_a, matches[i].index_b})) ++correct;
      ++i;
    }
    CurvePoint p;
    p.threshold = r;
    p.matches = total;
    p.correct = correct;
    p.recall = double(correct) / double(gt.size());
    p.one_minus_precision = total > 0 ? double(total - correct) / double(total) : 0.0;
    curve.push_back(p);
  }
  return curve;
}

/// Largest recall among curve points whose 1-precision stays at or below x.
inline double recall_at_one_minus_precision(const std::vector<CurvePoint>& curve, double x) {
  double best = 0.0;
  for (const CurvePoint& p : curve)
    if (p.one_minus_precision <= x) best = std::max(best, p.recall);
  return best;
}

inline void write_curve_csv(const std::vector<CurvePoint>& curve, std::ostream& os) {
  os << "ratio,matches,correct,recall,one_minus_precision\n";
  char buf[160];
  for (const CurvePoint& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.9g,%d,%d,%.9g,%.9g\n", p.threshold, p.matches, p.correct,
                  p.recall, p.one_minus_precision);
    os << buf;
  }
}

inline void write_curve_csv(const std::vector<CurvePoint>& curve,
                            const std::filesystem::path& path) {
  atomic_write_file(path, [&](std::ostream& os) { write_curve_csv(curve, os); });
}

// ---------------------------------------------------------------------------
// Internal single-view baseline: the identity-view PCA-patch vector,
// L2-normalized. Stands in for external descriptors in comparisons.

inline std::vector<std::optional<Eigen::VectorXd>> baseline_single_view(
    const GrayImage& img, const std::vector<Keypoint>& kps, const TrainedModel& m) {
  std::vector<std::optional<Eigen::VectorXd>> out(kps.size());
  for (size_t i = 0; i < kps.size(); ++i) {
    const Keypoint& kp = kps[i];
    if (!detail::keypoint_usable(img, kp)) continue;
    const double theta = detail::resolve_orientation(img, kp, m.params);
    const Patch p = extract_patch(img, kp, m.params.s_l, theta, m.params.c_s * kp.sigma);
    Eigen::VectorXd v = pca_patch_vector(p, m.proj);
    const double n = v.norm();
    if (n > 0.0) v /= n;
    out[i] = std::move(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-stage timing.

struct StageStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
};

struct TimingReport {
  StageStats warping;        // patch extraction + per-view warps (+ realign)
  StageStats patch_repr;     // PCA-patch vector computation
  StageStats subspace_repr;  // subspace fit + subspace-to-point
  StageStats total;          // wall clock of the full loop
};

namespace detail {

inline StageStats stage_stats(const std::vector<double>& per_rep_ms, size_t n_kps) {
  StageStats s;
  double sum = 0.0;
  for (double v : per_rep_ms) sum += v / double(n_kps);
  s.mean_ms = sum / double(per_rep_ms.size());
  double var = 0.0;
  for (double v : per_rep_ms) {
    const double d = v / double(n_kps) - s.mean_ms;
    var += d * d;
  }
  s.stddev_ms = std::sqrt(var / double(per_rep_ms.size()));
  return s;
}

}  // namespace detail

/// Wall-clock per-descriptor stage means over `reps` repetitions (one warm-up
/// pass excluded), single-threaded so the stage split stays meaningful. The
/// fast mode never warps, so its warping stage is 0 by construction.
inline TimingReport bench_timing(const GrayImage& img, const std::vector<Keypoint>& keypoints,
                                 const TrainedModel& m, DescMode mode, int reps = 20) {
  if (keypoints.size() < 100) throw Error("bench_timing: needs at least 100 keypoints");
  if (reps < 1) throw Error("bench_timing: needs at least 1 repetition");

  std::vector<Keypoint> kps;
  for (const Keypoint& kp : keypoints)
    if (detail::keypoint_usable(img, kp)) kps.push_back(kp);
  if (kps.size() < 100) throw Error("bench_timing: needs at least 100 usable keypoints");
  for (Keypoint& kp : kps)
    if (!kp.has_orientation()) kp.orientation = estimate_orientation(img, kp, m.params.c_s, m.params.n_p);

  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0, clock::time_point t1) {
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };

  std::vector<double> warp_ms, repr_ms, sub_ms, total_ms;
  volatile double sink = 0.0;  // keeps the optimizer from dropping work
  for (int rep = -1; rep < reps; ++rep) {
    double warp_acc = 0.0, repr_acc = 0.0, sub_acc = 0.0;
    const auto rep_start = clock::now();
    for (const Keypoint& kp : kps) {
      std::vector<PcaPatchVector> vectors;
      if (mode == DescMode::naive) {
        const auto t0 = clock::now();
        const Patch ref = detail::extract_reference_patch(img, kp, m.params, 0.0);
        const std::vector<Patch> view_patches = make_view_patches(ref, m, /*realign=*/true);
        const auto t1 = clock::now();
        vectors = project_view_patches(view_patches, m.proj);
        const auto t2 = clock::now();
        warp_acc += ms_since(t0, t1);
        repr_acc += ms_since(t1, t2);
      } else {
        const auto t0 = clock::now();
        vectors = patch_vectors_fast(img, kp, m);
        const auto t1 = clock::now();
        repr_acc += ms_since(t0, t1);
      }
      const auto t2 = clock::now();
      const AsrDescriptor d = subspace_to_point(subspace_fit(vectors, m.params.n_s));
      const auto t3 = clock::now();
      sub_acc += ms_since(t2, t3);
      sink = sink + d.q[0];
    }
    const auto rep_end = clock::now();
    if (rep < 0) continue;  // warm-up
    warp_ms.push_back(warp_acc);
    repr_ms.push_back(repr_acc);
    sub_ms.push_back(sub_acc);
    total_ms.push_back(ms_since(rep_start, rep_end));
  }
  (void)sink;

  TimingReport report;
  report.warping = mode == DescMode::fast ? StageStats{0.0, 0.0}
                                          : detail::stage_stats(warp_ms, kps.size());
  report.patch_repr = detail::stage_stats(repr_ms, kps.size());
  report.subspace_repr = detail::stage_stats(sub_ms, kps.size());
  report.total = detail::stage_stats(total_ms, kps.size());
  return report;
}

inline void write_timing_csv(std::ostream& os,
                             const std::vector<std::pair<std::string, TimingReport>>& reports) {
  os << "stage,mean_ms,stddev_ms\n";
  char buf[160];
  for (const auto& [mode, r] : reports) {
    const std::pair<const char*, const StageStats*> stages[4] = {
        {"warping", &r.warping},
        {"patch_representation", &r.patch_repr},
        {"subspace_representation", &r.subspace_repr},
        {"total", &r.total}};
    for (const auto& [name, s] : stages) {
      std::snprintf(buf, sizeof(buf), "%s.%s,%.6g,%.6g\n", mode.c_str(), name, s->mean_ms,
                    s->stddev_ms);
      os << buf;
    }
  }
}

}  // namespace asr
