#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "asr/common.hpp"
#include "asr/geometry.hpp"
#include "asr/patch.hpp"

namespace asr {

/// All tunables of the descriptor pipeline, defaults per the typical settings.
struct ModelParams {
  int n_d = 24;     // dimension of the PCA-patch vector
  int n_s = 8;      // subspace dimension
  int n_l = 160;    // reference-patch principal components (fast path)
  int s_l = 21;     // canonical local patch side
  int s_r = 31;     // enlarged reference patch side
  int n_p = 60;     // orientation pattern points (not persisted in model files)
  int n_t = 5;      // tilt sampling count
  double c_s = 7.5; // support radius = c_s * sigma image pixels
  double T_o = 0.8; // minimal ellipse overlap rate for longitude sampling
};

inline void validate_params(const ModelParams& p) {
  if (p.n_d < 1 || p.n_s < 1 || p.n_l < 0 || p.n_p < 3 || p.n_t < 2)
    throw Error("invalid model parameters: counts out of range");
  if (p.s_l < 3 || p.s_l % 2 == 0 || p.s_r < 3 || p.s_r % 2 == 0)
    throw Error("invalid model parameters: patch sides must be odd and >= 3");
  if (double(p.s_r - 1) + 1e-9 < std::sqrt(2.0) * (p.s_l - 1))
    throw Error("invalid model parameters: s_r too small for s_l warps");
  if (p.n_d > p.s_l * p.s_l || p.n_l > p.s_r * p.s_r)
    throw Error("invalid model parameters: projection ranks exceed patch dimension");
  if (p.n_s > p.n_d) throw Error("invalid model parameters: n_s exceeds n_d");
  if (!(p.c_s > 0.0) || !(p.T_o > 0.0 && p.T_o < 1.0))
    throw Error("invalid model parameters: c_s/T_o out of range");
}

inline Eigen::VectorXd vec_patch(const Patch& p) {
  return Eigen::Map<const Eigen::VectorXd>(p.pixels.data(), Eigen::Index(p.pixels.size()));
}

inline Patch patch_from_vec(const Eigen::VectorXd& v, int side) {
  Patch p(side);
  for (size_t i = 0; i < p.pixels.size(); ++i) p.pixels[i] = v[Eigen::Index(i)];
  return p;
}

/// P_d: rows are orthonormal principal directions of vectorized s_l patches.
/// Applied with no mean subtraction so the projection stays strictly linear.
struct PatchProjection {
  Eigen::MatrixXd basis;  // n_d x (s_l * s_l)
};

/// Mean patch and principal components of the enlarged reference patches.
struct ReferenceBasis {
  Eigen::VectorXd mean_patch;  // s_r * s_r
  Eigen::MatrixXd components;  // n_l x (s_r * s_r), rows orthonormal
};

/// Precomputed PCA-patch vectors of the warped mean patch and warped
/// reference components, one row per view.
struct ViewTables {
  Eigen::MatrixXd d_bar;                // n_views x n_d
  std::vector<Eigen::MatrixXd> d_comp;  // n_l matrices, each n_views x n_d
};

struct TrainedModel {
  ModelParams params;
  std::vector<ViewParams> views;
  PatchProjection proj;
  ReferenceBasis ref_basis;
  ViewTables tables;
};

// ---------------------------------------------------------------------------
// Covariance accumulation (64-bit, fixed order, buffered rank updates).

/// Streaming mean/covariance in 64-bit, normalization 1/N. Samples are
/// shifted by the first sample before accumulation, so degenerate inputs
/// (all samples equal) produce an exactly zero covariance instead of
/// cancellation residue.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(int dim, int chunk = 1024)
      : dim_(dim),
        chunk_(chunk),
        buf_(chunk, dim),
        sum_(Eigen::VectorXd::Zero(dim)),
        scatter_(Eigen::MatrixXd::Zero(dim, dim)) {}

  void add(const Eigen::VectorXd& x) {
    if (x.size() != dim_) throw Error("covariance accumulator: dimension mismatch");
    if (count_ == 0) anchor_ = x;
    const Eigen::VectorXd shifted = x - anchor_;
    sum_ += shifted;
    buf_.row(buffered_++) = shifted;
    if (buffered_ == chunk_) flush();
    ++count_;
  }

  long long count() const { return count_; }

  Eigen::VectorXd mean() const {
    if (count_ == 0) throw Error("covariance accumulator: no samples");
    return anchor_ + sum_ / double(count_);
  }

  Eigen::MatrixXd covariance() {
    if (count_ == 0) throw Error("covariance accumulator: no samples");
    flush();
    Eigen::MatrixXd c = scatter_.selfadjointView<Eigen::Lower>();
    c /= double(count_);
    const Eigen::VectorXd shifted_mean = sum_ / double(count_);
    c.noalias() -= shifted_mean * shifted_mean.transpose();
    return c;
  }

 private:
  void flush() {
    if (buffered_ == 0) return;
    scatter_.selfadjointView<Eigen::Lower>().rankUpdate(
        buf_.topRows(buffered_).transpose(), 1.0);
    buffered_ = 0;
  }

  int dim_;
  int chunk_;
  int buffered_ = 0;
  long long count_ = 0;
  Eigen::MatrixXd buf_;
  Eigen::VectorXd anchor_;
  Eigen::VectorXd sum_;
  Eigen::MatrixXd scatter_;
};

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition with the fixed ordering/sign conventions used
// by every training stage.

struct EigenDecomposition {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns, matching order
  int rank = 0;             // eigenvalues above the relative floor
};

namespace detail {

/// Flips the vector so its largest-magnitude entry (first index on ties) is
/// positive.
inline void apply_sign_rule(Eigen::Ref<Eigen::VectorXd> v) {
  int arg = 0;
  double best = std::abs(v[0]);
  for (int i = 1; i < v.size(); ++i) {
    const double a = std::abs(v[i]);
    if (a > best) {
      best = a;
      arg = i;
    }
  }
  if (v[arg] < 0.0) v = -v;
}

}  // namespace detail

inline EigenDecomposition sym_eigs_descending(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(c);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed to converge");
  const Eigen::Index n = c.rows();
  EigenDecomposition out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  for (Eigen::Index j = 0; j < n; ++j) detail::apply_sign_rule(out.vectors.col(j));
  const double lead = out.values.size() ? out.values[0] : 0.0;
  if (lead > 1e-24) {
    const double floor = lead * 1e-10;
    for (Eigen::Index i = 0; i < n; ++i)
      if (out.values[i] > floor) ++out.rank;
  }
  return out;
}

namespace detail {

inline void check_patch_set(const std::vector<Patch>& patches, int min_count, const char* what) {
  if (static_cast<int>(patches.size()) < min_count)
    throw Error(std::string(what) + ": needs at least " + std::to_string(min_count) +
                " sample patches, got " + std::to_string(patches.size()));
  const int side = patches.front().side;
  for (const Patch& p : patches)
    if (p.side != side) throw Error(std::string(what) + ": mixed patch sides");
}

}  // namespace detail

/// Top-n_d principal directions of the vectorized patches (rows of the
/// result). Covariance is mean-centered; the learned projection is applied
/// without centering at inference.
inline PatchProjection train_patch_pca(const std::vector<Patch>& patches, int n_d) {
  detail::check_patch_set(patches, std::max(n_d, 2), "train_patch_pca");
  CovarianceAccumulator acc(patches.front().side * patches.front().side);
  for (const Patch& p : patches) acc.add(vec_patch(p));
  const EigenDecomposition eig = sym_eigs_descending(acc.covariance());
  if (eig.rank < n_d)
    throw RankError("train_patch_pca: sample covariance rank " + std::to_string(eig.rank) +
                    " < n_d = " + std::to_string(n_d));
  return PatchProjection{eig.vectors.leftCols(n_d).transpose()};
}

/// Mean patch plus top-n_l principal components of the reference patches.
inline ReferenceBasis train_reference_pca(const std::vector<Patch>& patches, int n_l) {
  detail::check_patch_set(patches, std::max(n_l, 2), "train_reference_pca");
  CovarianceAccumulator acc(patches.front().side * patches.front().side);
  for (const Patch& p : patches) acc.add(vec_patch(p));
  const Eigen::VectorXd mean = acc.mean();
  const EigenDecomposition eig = sym_eigs_descending(acc.covariance());
  if (eig.rank < n_l)
    throw RankError("train_reference_pca: sample covariance rank " + std::to_string(eig.rank) +
                    " < n_l = " + std::to_string(n_l));
  return ReferenceBasis{mean, eig.vectors.leftCols(n_l).transpose()};
}

namespace detail {

/// Double-precision warp of a vectorized patch (same weights as warp_patch).
inline Eigen::VectorXd warp_vec(const Eigen::VectorXd& src, int src_side, const AffineMap& a,
                                int out_side) {
  Eigen::VectorXd out(out_side * out_side);
  warp_kernel(src.data(), src_side, Eigen::Matrix2d(a.m.inverse()), out_side, out.data());
  return out;
}

}  // namespace detail

/// d_bar[v] = P_d vec(warp(mean, A_v)), d_comp[i][v] = P_d vec(warp(L_i, A_v));
/// everything the fast path needs that does not depend on the query patch.
inline ViewTables precompute_view_tables(const ReferenceBasis& rb, const PatchProjection& pp,
                                         const std::vector<ViewParams>& views) {
  const int s_r = static_cast<int>(std::lround(std::sqrt(double(rb.mean_patch.size()))));
  const int s_l = static_cast<int>(std::lround(std::sqrt(double(pp.basis.cols()))));
  if (Eigen::Index(s_r) * s_r != rb.mean_patch.size() ||
      Eigen::Index(s_l) * s_l != pp.basis.cols())
    throw Error("precompute_view_tables: non-square patch dimensions");
  if (rb.components.size() > 0 && rb.components.cols() != rb.mean_patch.size())
    throw Error("precompute_view_tables: component/mean dimension mismatch");
  if (views.empty()) throw Error("precompute_view_tables: empty view list");

  const int n_views = static_cast<int>(views.size());
  const int n_d = static_cast<int>(pp.basis.rows());
  const int n_l = static_cast<int>(rb.components.rows());

  ViewTables tables;
  tables.d_bar.resize(n_views, n_d);
  for (int v = 0; v < n_views; ++v) {
    const AffineMap a = affine_from_view(views[size_t(v)]);
    tables.d_bar.row(v) = (pp.basis * detail::warp_vec(rb.mean_patch, s_r, a, s_l)).transpose();
  }
  tables.d_comp.reserve(size_t(n_l));
  for (int i = 0; i < n_l; ++i) {
    Eigen::MatrixXd t(n_views, n_d);
    const Eigen::VectorXd comp = rb.components.row(i).transpose();
    for (int v = 0; v < n_views; ++v) {
      const AffineMap a = affine_from_view(views[size_t(v)]);
      t.row(v) = (pp.basis * detail::warp_vec(comp, s_r, a, s_l)).transpose();
    }
    tables.d_comp.push_back(std::move(t));
  }
  return tables;
}

// ---------------------------------------------------------------------------
// Model file, little-endian binary:
//   magic "ASRM", u32 version = 1,
//   u32 n_d, n_s, n_l, s_l, s_r, n_views, f64 c_s, f64 T_o, u32 n_t,
//   views as n_views x (f32 t, f32 alpha),
//   P_d (n_d * s_l^2 f32), mean_patch (s_r^2 f32), P_l (n_l * s_r^2 f32),
//   d_bar (n_views * n_d f32), d_comp (n_l * n_views * n_d f32, i-major,
//   then view, then component).

inline constexpr char kModelMagic[4] = {'A', 'S', 'R', 'M'};
inline constexpr uint32_t kModelVersion = 1;

namespace detail {

inline void write_matrix_f32(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f32(os, static_cast<float>(m(r, c)));
}

inline void read_matrix_f32(std::istream& is, Eigen::MatrixXd& m, const std::string& section) {
  std::vector<float> buf(size_t(m.rows()) * size_t(m.cols()));
  read_raw(is, buf.data(), buf.size() * 4, section);
  size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = buf[i++];
}

}  // namespace detail

inline void save_model(const TrainedModel& m, std::ostream& os) {
  write_raw(os, kModelMagic, 4);
  write_u32(os, kModelVersion);
  write_u32(os, uint32_t(m.params.n_d));
  write_u32(os, uint32_t(m.params.n_s));
  write_u32(os, uint32_t(m.params.n_l));
  write_u32(os, uint32_t(m.params.s_l));
  write_u32(os, uint32_t(m.params.s_r));
  write_u32(os, uint32_t(m.views.size()));
  write_f64(os, m.params.c_s);
  write_f64(os, m.params.T_o);
  write_u32(os, uint32_t(m.params.n_t));
  for (const ViewParams& v : m.views) {
    write_f32(os, static_cast<float>(v.t));
    write_f32(os, static_cast<float>(v.alpha));
  }
  detail::write_matrix_f32(os, m.proj.basis);
  detail::write_matrix_f32(os, m.ref_basis.mean_patch);
  detail::write_matrix_f32(os, m.ref_basis.components);
  detail::write_matrix_f32(os, m.tables.d_bar);
  for (const Eigen::MatrixXd& t : m.tables.d_comp) detail::write_matrix_f32(os, t);
}

inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
  atomic_write_file(path, [&](std::ostream& os) { save_model(m, os); });
}

inline TrainedModel load_model(std::istream& is) {
  char magic[4];
  read_raw(is, magic, 4, "magic");
  if (std::memcmp(magic, kModelMagic, 4) != 0)
    throw IoError(IoCode::bad_magic, "magic", "not an ASR model file");
  const uint32_t version = read_u32(is, "version");
  if (version != kModelVersion)
    throw IoError(IoCode::bad_version, "version",
                  "unsupported model version " + std::to_string(version));

  TrainedModel m;
  m.params.n_d = static_cast<int>(read_u32(is, "header"));
  m.params.n_s = static_cast<int>(read_u32(is, "header"));
  m.params.n_l = static_cast<int>(read_u32(is, "header"));
  m.params.s_l = static_cast<int>(read_u32(is, "header"));
  m.params.s_r = static_cast<int>(read_u32(is, "header"));
  const uint32_t n_views = read_u32(is, "header");
  m.params.c_s = read_f64(is, "header");
  m.params.T_o = read_f64(is, "header");
  m.params.n_t = static_cast<int>(read_u32(is, "header"));
  if (n_views == 0) throw IoError(IoCode::dim_mismatch, "header", "model has no views");
  try {
    validate_params(m.params);
  } catch (const Error& e) {
    throw IoError(IoCode::dim_mismatch, "header", e.what());
  }

  for (uint32_t i = 0; i < n_views; ++i) {
    const double t = read_f32(is, "views");
    const double alpha = read_f32(is, "views");
    try {
      m.views.push_back(make_view(t, alpha));
    } catch (const Error& e) {
      throw IoError(IoCode::dim_mismatch, "views", e.what());
    }
  }

  const int pd = m.params.s_l * m.params.s_l;
  const int pr = m.params.s_r * m.params.s_r;
  m.proj.basis.resize(m.params.n_d, pd);
  detail::read_matrix_f32(is, m.proj.basis, "patch projection");
  m.ref_basis.mean_patch.resize(pr);
  Eigen::MatrixXd mean(pr, 1);
  detail::read_matrix_f32(is, mean, "mean patch");
  m.ref_basis.mean_patch = mean.col(0);
  m.ref_basis.components.resize(m.params.n_l, pr);
  detail::read_matrix_f32(is, m.ref_basis.components, "reference components");
  m.tables.d_bar.resize(n_views, m.params.n_d);
  detail::read_matrix_f32(is, m.tables.d_bar, "d_bar table");
  m.tables.d_comp.reserve(size_t(m.params.n_l));
  for (int i = 0; i < m.params.n_l; ++i) {
    Eigen::MatrixXd t(n_views, m.params.n_d);
    detail::read_matrix_f32(is, t, "d_comp table");
    m.tables.d_comp.push_back(std::move(t));
  }
  if (is.peek() != EOF)
    throw IoError(IoCode::dim_mismatch, "end of file", "trailing bytes after model data");
  return m;
}

inline TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(IoCode::io_failure, "", "cannot open " + path.string());
  return load_model(is);
}

}  // namespace asr
