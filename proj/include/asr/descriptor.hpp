#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>
#include <vector>

#include "asr/model.hpp"

namespace asr {

using PcaPatchVector = Eigen::VectorXd;

/// n_s-dimensional subspace of the PCA-patch vector space; columns orthonormal.
struct Subspace {
  Eigen::MatrixXd basis;  // n_d x n_s
};

/// The subspace-to-point image: always has norm sqrt(n_s / 2).
struct AsrDescriptor {
  Eigen::VectorXd q;  // n_d (n_d + 1) / 2
};

enum class DescMode { naive, fast };

/// f(p) = P_d vec(p); strictly linear, no centering.
inline PcaPatchVector pca_patch_vector(const Patch& p, const PatchProjection& proj) {
  if (Eigen::Index(p.pixels.size()) != proj.basis.cols())
    throw Error("pca_patch_vector: patch/projection dimension mismatch");
  return proj.basis * vec_patch(p);
}

namespace detail {

/// Support radius used for the enlarged s_r reference grid: the central s_l
/// crop then covers exactly c_s * sigma image pixels at the canonical pitch.
inline double reference_support_radius(const ModelParams& p, double sigma) {
  return p.c_s * sigma * double(p.s_r - 1) / double(p.s_l - 1);
}

inline double resolve_orientation(const GrayImage& img, const Keypoint& kp, const ModelParams& p) {
  return kp.has_orientation() ? kp.orientation : estimate_orientation(img, kp, p.c_s, p.n_p);
}

inline Patch extract_reference_patch(const GrayImage& img, const Keypoint& kp,
                                     const ModelParams& p, double theta) {
  return extract_patch(img, kp, p.s_r, theta, reference_support_radius(p, kp.sigma));
}

/// Same-size simulated view used by per-view realignment; corners fall
/// outside the reference and replicate, but only the central crop survives.
inline Patch warp_patch_full(const Patch& ref, const AffineMap& a) {
  Patch out(ref.side);
  warp_kernel(ref.pixels.data(), ref.side, Eigen::Matrix2d(a.m.inverse()), ref.side,
              out.pixels.data());
  return out;
}

}  // namespace detail

/// The warped, aligned s_l patches of one reference patch, one per view.
/// With realignment each view re-estimates its own dominant orientation on
/// the warped patch; without it the reference alignment is trusted as-is.
inline std::vector<Patch> make_view_patches(const Patch& ref, const TrainedModel& m,
                                            bool realign) {
  if (ref.side != m.params.s_r) throw Error("make_view_patches: reference side mismatch");
  std::vector<Patch> out;
  out.reserve(m.views.size());
  const double align_radius = (m.params.s_l - 1) / 2.0;
  for (const ViewParams& v : m.views) {
    const AffineMap a = affine_from_view(v);
    if (!realign) {
      out.push_back(warp_patch(ref, a, m.params.s_l));
    } else {
      const Patch warped = detail::warp_patch_full(ref, a);
      const double phi =
          estimate_patch_orientation(warped, align_radius, m.params.c_s, m.params.n_p);
      out.push_back(rotate_patch(warped, phi, m.params.s_l));
    }
  }
  return out;
}

inline std::vector<PcaPatchVector> project_view_patches(const std::vector<Patch>& patches,
                                                        const PatchProjection& proj) {
  std::vector<PcaPatchVector> out;
  out.reserve(patches.size());
  for (const Patch& p : patches) out.push_back(pca_patch_vector(p, proj));
  return out;
}

/// Naive path on an already-extracted reference patch: warp per view, then
/// project. Exact but pays the warping cost at every call.
inline std::vector<PcaPatchVector> patch_vectors_from_ref(const Patch& ref, const TrainedModel& m,
                                                          bool realign) {
  return project_view_patches(make_view_patches(ref, m, realign), m.proj);
}

inline std::vector<PcaPatchVector> patch_vectors_naive(const GrayImage& img, const Keypoint& kp,
                                                       const TrainedModel& m, bool realign) {
  const double theta = realign ? 0.0 : detail::resolve_orientation(img, kp, m.params);
  return patch_vectors_from_ref(detail::extract_reference_patch(img, kp, m.params, theta), m,
                                realign);
}

/// Fast path on a reference patch: project onto the reference basis once and
/// combine the precomputed per-view tables; no warping at runtime.
/// `n_l_limit` truncates the expansion to the leading components (0 = all).
inline std::vector<PcaPatchVector> patch_vectors_fast_from_ref(const Patch& ref,
                                                               const TrainedModel& m,
                                                               int n_l_limit = 0) {
  if (ref.side != m.params.s_r) throw Error("patch_vectors_fast_from_ref: reference side mismatch");
  const int n_use = n_l_limit > 0 ? std::min(n_l_limit, m.params.n_l) : m.params.n_l;
  const Eigen::VectorXd centered = vec_patch(ref) - m.ref_basis.mean_patch;
  Eigen::MatrixXd rows = m.tables.d_bar;
  for (int i = 0; i < n_use; ++i) {
    const double a_i = m.ref_basis.components.row(i).dot(centered);
    rows.noalias() += a_i * m.tables.d_comp[size_t(i)];
  }
  std::vector<PcaPatchVector> out;
  out.reserve(size_t(rows.rows()));
  for (Eigen::Index v = 0; v < rows.rows(); ++v) out.push_back(rows.row(v).transpose());
  return out;
}

inline std::vector<PcaPatchVector> patch_vectors_fast(const GrayImage& img, const Keypoint& kp,
                                                      const TrainedModel& m, int n_l_limit = 0) {
  const double theta = detail::resolve_orientation(img, kp, m.params);
  return patch_vectors_fast_from_ref(detail::extract_reference_patch(img, kp, m.params, theta), m,
                                     n_l_limit);
}

// ---------------------------------------------------------------------------
// Subspace fitting and the subspace-to-point mapping.

namespace detail {

inline Eigen::MatrixXd centered_covariance(const std::vector<PcaPatchVector>& vectors,
                                           Eigen::VectorXd* mean_out = nullptr) {
  if (vectors.size() < 2) throw Error("subspace fit needs at least 2 vectors");
  const Eigen::Index n = vectors.front().size();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  for (const auto& v : vectors) {
    if (v.size() != n) throw Error("subspace fit: mixed vector dimensions");
    mu += v;
  }
  mu /= double(vectors.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  for (const auto& v : vectors) {
    const Eigen::VectorXd d = v - mu;
    c.selfadjointView<Eigen::Lower>().rankUpdate(d, 1.0);
  }
  c = c.selfadjointView<Eigen::Lower>();
  c /= double(vectors.size());
  if (mean_out) *mean_out = mu;
  return c;
}

}  // namespace detail

/// Columns are the top-n_s eigenvectors of the mean-centered covariance of
/// the vectors. Centering makes the whole construction exactly invariant to
/// linear illumination changes (the covariance scales by a^2). When the
/// covariance rank falls short, the basis is completed deterministically by
/// orthonormalizing canonical unit vectors e_1, e_2, ... in index order.
inline Subspace subspace_fit(const std::vector<PcaPatchVector>& vectors, int n_s) {
  const Eigen::MatrixXd c = detail::centered_covariance(vectors);
  const Eigen::Index n = c.rows();
  if (n_s < 1 || n_s > n) throw Error("subspace_fit: n_s out of range");
  const EigenDecomposition eig = sym_eigs_descending(c);
  const int take = std::min(n_s, eig.rank);
  Eigen::MatrixXd basis(n, n_s);
  basis.leftCols(take) = eig.vectors.leftCols(take);
  int have = take;
  for (Eigen::Index j = 0; j < n && have < n_s; ++j) {
    Eigen::VectorXd w = Eigen::VectorXd::Unit(n, j);
    w -= basis.leftCols(have) * (basis.leftCols(have).transpose() * w);
    const double norm = w.norm();
    if (norm > 1e-8) basis.col(have++) = w / norm;
  }
  return Subspace{basis};
}

/// Eigenvalue spectrum (descending) of the mean-centered covariance of the
/// vectors; handy for loss curves and eigen-gap checks.
inline Eigen::VectorXd subspace_spectrum(const std::vector<PcaPatchVector>& vectors) {
  return sym_eigs_descending(detail::centered_covariance(vectors)).values;
}

/// Fraction of centered energy outside the subspace:
/// sum ||(v - mu) - PP'(v - mu)||^2 / sum ||v - mu||^2, 0 for degenerate data.
inline double loss_rate(const std::vector<PcaPatchVector>& vectors, const Subspace& subspace) {
  if (vectors.empty()) throw Error("loss_rate: empty vector list");
  const Eigen::Index n = vectors.front().size();
  if (subspace.basis.rows() != n) throw Error("loss_rate: dimension mismatch");
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  for (const auto& v : vectors) mu += v;
  mu /= double(vectors.size());
  double residual = 0.0, total = 0.0;
  for (const auto& v : vectors) {
    const Eigen::VectorXd d = v - mu;
    const Eigen::VectorXd r = d - subspace.basis * (subspace.basis.transpose() * d);
    residual += r.squaredNorm();
    total += d.squaredNorm();
  }
  if (total <= 0.0) return 0.0;
  return residual / total;
}

/// h(Q) for Q = basis basis': row-major upper triangle with the diagonal
/// scaled by 1/sqrt(2), so Euclidean distance between descriptors equals the
/// Projection Frobenius Norm between subspaces.
inline AsrDescriptor subspace_to_point(const Subspace& s) {
  const Eigen::Index n = s.basis.rows();
  const Eigen::MatrixXd q = s.basis * s.basis.transpose();
  AsrDescriptor d;
  d.q.resize(n * (n + 1) / 2);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    d.q[idx++] = q(i, i) * inv_sqrt2;
    for (Eigen::Index j = i + 1; j < n; ++j) d.q[idx++] = q(i, j);
  }
  return d;
}

/// Euclidean distance; equals (1/sqrt 2) ||Q1 - Q2||_F and the l2 norm of the
/// principal-angle sines.
inline double descriptor_distance(const AsrDescriptor& a, const AsrDescriptor& b) {
  if (a.q.size() != b.q.size()) throw Error("descriptor_distance: length mismatch");
  return (a.q - b.q).norm();
}

// ---------------------------------------------------------------------------
// Whole-pipeline descriptor computation.

namespace detail {

inline bool keypoint_usable(const GrayImage& img, const Keypoint& kp) {
  return std::isfinite(kp.x) && std::isfinite(kp.y) && std::isfinite(kp.sigma) && kp.sigma > 0.0 &&
         kp.x >= 0.0 && kp.x <= img.width - 1.0 && kp.y >= 0.0 && kp.y <= img.height - 1.0;
}

}  // namespace detail

/// Descriptors for a keypoint list. Per keypoint: orientation (estimated when
/// unset), PCA-patch vectors through the selected path (naive re-aligns every
/// warped view; fast uses the precomputed tables), subspace fit, and the
/// subspace-to-point mapping. Out-of-bounds keypoints yield an empty slot
/// rather than failing the batch. Results are order-stable and independent of
/// the worker count.
inline std::vector<std::optional<AsrDescriptor>> describe(const GrayImage& img,
                                                          const std::vector<Keypoint>& keypoints,
                                                          const TrainedModel& m, DescMode mode,
                                                          int threads = 1) {
  std::vector<std::optional<AsrDescriptor>> out(keypoints.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const Keypoint& kp = keypoints[i];
      if (!detail::keypoint_usable(img, kp)) continue;
      const std::vector<PcaPatchVector> vectors =
          mode == DescMode::naive ? patch_vectors_naive(img, kp, m, /*realign=*/true)
                                  : patch_vectors_fast(img, kp, m);
      out[i] = subspace_to_point(subspace_fit(vectors, m.params.n_s));
    }
  };
  const size_t n = keypoints.size();
  const size_t workers = std::max<size_t>(1, std::min<size_t>(size_t(std::max(threads, 1)), n));
  if (workers <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (n + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
      const size_t begin = w * chunk, end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Descriptor file, little-endian binary: magic "ASRD", u32 version = 1,
// u32 count, u32 dim, then per record f32 x, y, sigma, orientation and dim
// f32 values. The CSV export mirrors the same fields.

inline constexpr char kDescMagic[4] = {'A', 'S', 'R', 'D'};
inline constexpr uint32_t kDescVersion = 1;

struct DescriptorRecord {
  float x = 0.f, y = 0.f, sigma = 1.f, orientation = 0.f;
  std::vector<float> values;
};

struct DescriptorFile {
  uint32_t dim = 0;
  std::vector<DescriptorRecord> records;
};

inline void write_descriptors(const DescriptorFile& f, std::ostream& os) {
  write_raw(os, kDescMagic, 4);
  write_u32(os, kDescVersion);
  write_u32(os, uint32_t(f.records.size()));
  write_u32(os, f.dim);
  for (const DescriptorRecord& r : f.records) {
    if (r.values.size() != f.dim) throw Error("descriptor record dimension mismatch");
    write_f32(os, r.x);
    write_f32(os, r.y);
    write_f32(os, r.sigma);
    write_f32(os, r.orientation);
    write_raw(os, r.values.data(), r.values.size() * 4);
  }
}

inline void write_descriptors(const DescriptorFile& f, const std::filesystem::path& path) {
  atomic_write_file(path, [&](std::ostream& os) { write_descriptors(f, os); });
}

inline DescriptorFile read_descriptors(std::istream& is) {
  char magic[4];
  read_raw(is, magic, 4, "magic");
  if (std::memcmp(magic, kDescMagic, 4) != 0)
    throw IoError(IoCode::bad_magic, "magic", "not an ASR descriptor file");
  const uint32_t version = read_u32(is, "version");
  if (version != kDescVersion)
    throw IoError(IoCode::bad_version, "version",
                  "unsupported descriptor version " + std::to_string(version));
  DescriptorFile f;
  const uint32_t count = read_u32(is, "header");
  f.dim = read_u32(is, "header");
  if (f.dim == 0) throw IoError(IoCode::dim_mismatch, "header", "descriptor dim is zero");
  f.records.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    DescriptorRecord& r = f.records[i];
    r.x = read_f32(is, "records");
    r.y = read_f32(is, "records");
    r.sigma = read_f32(is, "records");
    r.orientation = read_f32(is, "records");
    r.values.resize(f.dim);
    read_raw(is, r.values.data(), size_t(f.dim) * 4, "records");
  }
  if (is.peek() != EOF)
    throw IoError(IoCode::dim_mismatch, "end of file", "trailing bytes after descriptor data");
  return f;
}

inline DescriptorFile read_descriptors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(IoCode::io_failure, "", "cannot open " + path.string());
  return read_descriptors(is);
}

inline void write_descriptors_csv(const DescriptorFile& f, std::ostream& os) {
  os << "x,y,sigma,orientation";
  for (uint32_t i = 0; i < f.dim; ++i) os << ",d" << i;
  os << "\n";
  char buf[64];
  for (const DescriptorRecord& r : f.records) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g", r.x, r.y, r.sigma, r.orientation);
    os << buf;
    for (float v : r.values) {
      std::snprintf(buf, sizeof(buf), ",%.9g", v);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace asr
