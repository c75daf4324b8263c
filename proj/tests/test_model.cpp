#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "asr/model.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace asr;

namespace {

std::vector<Patch> random_patches(int count, int side, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Patch> out;
  for (int i = 0; i < count; ++i) {
    Patch p(side);
    for (double& v : p.pixels) v = uni(rng);
    out.push_back(std::move(p));
  }
  return out;
}

std::string serialized(const TrainedModel& m) {
  std::ostringstream os(std::ios::binary);
  save_model(m, os);
  return os.str();
}

}  // namespace

TEST_CASE("one-hot patches recover their dominant directions", "[model]") {
  // patches sigma_i * e_i with distinct magnitudes; compare the learned rows
  // against a cyclic-Jacobi oracle run on an independently accumulated
  // covariance of the same samples
  const int side = 21, dim = side * side, n_d = 12, count = 40;
  std::vector<Patch> patches;
  for (int i = 0; i < count; ++i) {
    Patch p(side, 0.0);
    p.pixels[size_t(i * 7 % dim)] = 10.0 * std::pow(0.85, i);
    patches.push_back(std::move(p));
  }
  const PatchProjection proj = train_patch_pca(patches, n_d);
  REQUIRE(proj.basis.rows() == n_d);
  REQUIRE(proj.basis.cols() == dim);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
  for (const Patch& p : patches) mu += vec_patch(p);
  mu /= double(count);
  for (const Patch& p : patches) {
    const Eigen::VectorXd d = vec_patch(p) - mu;
    cov += d * d.transpose();
  }
  cov /= double(count);
  const auto jac = oracle::jacobi_sym_eig(cov);

  for (int r = 0; r < n_d; ++r) {
    Eigen::VectorXd expected = jac.vectors.col(r);
    detail::apply_sign_rule(expected);
    CHECK((proj.basis.row(r).transpose() - expected).cwiseAbs().maxCoeff() < 1e-8);
  }

  // each row is dominated by one pixel direction by construction
  for (int r = 0; r < n_d; ++r) {
    Eigen::Index arg;
    proj.basis.row(r).cwiseAbs().maxCoeff(&arg);
    CHECK(proj.basis.row(r).cwiseAbs()[arg] > 0.9);
  }
}

TEST_CASE("eigensolver matches a constructed spectrum at reference-patch size", "[model]") {
  const auto built = oracle::constructed_sym(961, 99);
  const EigenDecomposition eig = sym_eigs_descending(built.a);
  REQUIRE(eig.values.size() == 961);
  for (int i = 0; i < 961; ++i)
    CHECK(std::abs(eig.values[i] - built.spectrum[i]) < 1e-8);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd expected = built.q.col(i);
    detail::apply_sign_rule(expected);
    CHECK((eig.vectors.col(i) - expected).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("patch pca shape and orthonormality under the default sizes", "[model]") {
  const auto patches = random_patches(60, 21, 31);
  const PatchProjection proj = train_patch_pca(patches, 24);
  CHECK(proj.basis.rows() == 24);
  CHECK(proj.basis.cols() == 441);
  const Eigen::MatrixXd gram = proj.basis * proj.basis.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(24, 24)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("duplicating the training set leaves the projection unchanged", "[model]") {
  const auto patches = random_patches(50, 9, 32);
  std::vector<Patch> doubled = patches;
  doubled.insert(doubled.end(), patches.begin(), patches.end());
  const PatchProjection a = train_patch_pca(patches, 8);
  const PatchProjection b = train_patch_pca(doubled, 8);
  CHECK((a.basis - b.basis).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("rank deficiency raises a dedicated error", "[model]") {
  // 6 samples span at most a 6-dimensional subspace
  const auto patches = random_patches(6, 9, 33);
  CHECK_THROWS_AS(train_patch_pca(patches, 10), Error);
  CHECK_THROWS_AS(train_patch_pca(patches, 6), RankError);
  CHECK_THROWS_AS(train_reference_pca(patches, 20), RankError);

  std::vector<Patch> identical(10, patches.front());
  CHECK_THROWS_AS(train_patch_pca(identical, 2), RankError);
}

TEST_CASE("reference pca mean and exact reconstruction", "[model]") {
  // identical patches: mean is the patch and the zero-coordinate
  // reconstruction is exact (no components requested)
  const Patch proto = random_patches(1, 13, 34).front();
  std::vector<Patch> identical(8, proto);
  const ReferenceBasis rb = train_reference_pca(identical, 0);
  CHECK((rb.mean_patch - vec_patch(proto)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rb.components.rows() == 0);
  CHECK_THROWS_AS(train_reference_pca(identical, 2), RankError);

  // samples from a known 10-dimensional affine subspace reconstruct to 1e-6
  const int side = 13, dim = side * side, k = 10;
  const Eigen::MatrixXd span = oracle::random_orthonormal_columns(dim, k, 55);
  std::mt19937 rng(56);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd offset(dim);
  for (int i = 0; i < dim; ++i) offset[i] = 0.5 + 0.01 * gauss(rng);
  std::vector<Patch> samples;
  for (int s = 0; s < 60; ++s) {
    Eigen::VectorXd c(k);
    for (int i = 0; i < k; ++i) c[i] = 0.2 * gauss(rng);
    samples.push_back(patch_from_vec(offset + span * c, side));
  }
  const ReferenceBasis rb10 = train_reference_pca(samples, k);
  for (const Patch& p : samples) {
    const Eigen::VectorXd centered = vec_patch(p) - rb10.mean_patch;
    const Eigen::VectorXd coords = rb10.components * centered;
    const Eigen::VectorXd recon = rb10.mean_patch + rb10.components.transpose() * coords;
    CHECK((vec_patch(p) - recon).norm() < 1e-6);
  }
}

TEST_CASE("reference reconstruction loss is non-increasing in n_l", "[model]") {
  const auto patches = random_patches(80, 13, 57);
  const ReferenceBasis full = train_reference_pca(patches, 40);
  double prev = std::numeric_limits<double>::infinity();
  for (int n_l : {5, 10, 20, 40}) {
    const Eigen::MatrixXd basis = full.components.topRows(n_l);
    double err = 0.0, tot = 0.0;
    for (const Patch& p : patches) {
      const Eigen::VectorXd centered = vec_patch(p) - full.mean_patch;
      err += (centered - basis.transpose() * (basis * centered)).squaredNorm();
      tot += centered.squaredNorm();
    }
    const double loss = err / tot;
    CHECK(loss <= prev + 1e-12);
    prev = loss;

    // truncation equals retraining at the smaller n_l
    const ReferenceBasis small = train_reference_pca(patches, n_l);
    CHECK((small.components - basis).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("view tables: identity view, zero mean, and determinism", "[model]") {
  ModelParams params;
  params.n_d = 6;
  params.n_l = 5;
  params.s_l = 9;
  params.s_r = 15;
  params.n_t = 3;
  params.T_o = 0.7;
  const auto views = sample_views(params.T_o, params.n_t);
  REQUIRE(views.front().t == 1.0);

  const auto patches = random_patches(40, params.s_r, 58);
  const ReferenceBasis rb = train_reference_pca(patches, params.n_l);
  const auto crops = [&] {
    std::vector<Patch> out;
    for (const Patch& p : patches) out.push_back(warp_patch(p, AffineMap{}, params.s_l));
    return out;
  }();
  const PatchProjection pp = train_patch_pca(crops, params.n_d);

  const ViewTables tables = precompute_view_tables(rb, pp, views);
  REQUIRE(tables.d_bar.rows() == Eigen::Index(views.size()));
  REQUIRE(tables.d_comp.size() == size_t(params.n_l));

  // identity view row equals the projection of the central crop of the mean
  const int off = (params.s_r - params.s_l) / 2;
  Eigen::VectorXd crop(params.s_l * params.s_l);
  for (int row = 0; row < params.s_l; ++row)
    for (int col = 0; col < params.s_l; ++col)
      crop[row * params.s_l + col] = rb.mean_patch[(row + off) * params.s_r + col + off];
  CHECK((tables.d_bar.row(0).transpose() - pp.basis * crop).cwiseAbs().maxCoeff() < 1e-12);

  // zero mean patch gives an all-zero d_bar
  ReferenceBasis zero_rb = rb;
  zero_rb.mean_patch.setZero();
  CHECK(precompute_view_tables(zero_rb, pp, views).d_bar.cwiseAbs().maxCoeff() == 0.0);

  // recomputation reproduces the tables bit for bit
  const ViewTables again = precompute_view_tables(rb, pp, views);
  CHECK((tables.d_bar - again.d_bar).cwiseAbs().maxCoeff() == 0.0);
  for (size_t i = 0; i < tables.d_comp.size(); ++i)
    CHECK((tables.d_comp[i] - again.d_comp[i]).cwiseAbs().maxCoeff() == 0.0);

  // independent recomputation of a few random entries (test-side bilinear warp)
  std::mt19937 rng(59);
  std::uniform_int_distribution<int> pick_i(0, params.n_l - 1),
      pick_v(0, int(views.size()) - 1);
  for (int trial = 0; trial < 6; ++trial) {
    const int i = pick_i(rng), v = pick_v(rng);
    const Eigen::Matrix2d ainv = affine_from_view(views[size_t(v)]).m.inverse();
    const int hs = (params.s_r - 1) / 2, ho = (params.s_l - 1) / 2;
    Eigen::VectorXd warped(params.s_l * params.s_l);
    for (int row = 0; row < params.s_l; ++row)
      for (int col = 0; col < params.s_l; ++col) {
        const double u = col - ho, w = row - ho;
        const double sx = ainv(0, 0) * u + ainv(0, 1) * w + hs;
        const double sy = ainv(1, 0) * u + ainv(1, 1) * w + hs;
        const int x0 = int(sx), y0 = int(sy);
        const double fx = sx - x0, fy = sy - y0;
        auto ref = [&](int x, int y) { return rb.components(i, y * params.s_r + x); };
        warped[row * params.s_l + col] = (1 - fy) * ((1 - fx) * ref(x0, y0) + fx * ref(x0 + 1, y0)) +
                                         fy * ((1 - fx) * ref(x0, y0 + 1) + fx * ref(x0 + 1, y0 + 1));
      }
    CHECK((tables.d_comp[size_t(i)].row(v).transpose() - pp.basis * warped)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("model file round-trip is byte-identical", "[model]") {
  ModelParams params;
  params.n_d = 6;
  params.n_s = 3;
  params.n_l = 5;
  params.s_l = 9;
  params.s_r = 15;
  params.n_t = 3;
  params.T_o = 0.7;
  const TrainedModel m = synth::synthetic_model(params, 11);

  const std::string bytes = serialized(m);
  std::istringstream is(bytes, std::ios::binary);
  const TrainedModel loaded = load_model(is);
  CHECK(serialized(loaded) == bytes);
  CHECK(loaded.params.n_d == params.n_d);
  CHECK(loaded.params.n_p == 60);  // not persisted; default restored
  CHECK(loaded.views.size() == m.views.size());
}

TEST_CASE("model file corruption yields distinct error codes", "[model]") {
  ModelParams params;
  params.n_d = 4;
  params.n_s = 2;
  params.n_l = 3;
  params.s_l = 9;
  params.s_r = 15;
  params.n_t = 2;
  params.T_o = 0.7;
  const std::string bytes = serialized(synth::synthetic_model(params, 12));

  auto load_str = [](std::string s) {
    std::istringstream is(s, std::ios::binary);
    return load_model(is);
  };
  auto code_of = [&](std::string s) {
    try {
      load_str(std::move(s));
    } catch (const IoError& e) {
      return e.code();
    }
    return IoCode::io_failure;
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of(bad_magic) == IoCode::bad_magic);

  std::string bad_version = bytes;
  bad_version[4] = 9;
  CHECK(code_of(bad_version) == IoCode::bad_version);

  // truncation inside every section reports the section by name
  const std::pair<size_t, const char*> cuts[] = {
      {2, "magic"}, {6, "version"}, {20, "header"}, {54, "views"}};
  for (const auto& [cut, section] : cuts) {
    try {
      load_str(bytes.substr(0, cut));
      FAIL("expected truncation");
    } catch (const IoError& e) {
      CHECK(e.code() == IoCode::truncated);
      CHECK(e.section() == section);
    }
  }
  try {
    load_str(bytes.substr(0, bytes.size() - 3));
    FAIL("expected truncation");
  } catch (const IoError& e) {
    CHECK(e.code() == IoCode::truncated);
    CHECK(e.section() == "d_comp table");
  }

  CHECK(code_of(bytes + "zz") == IoCode::dim_mismatch);

  // header with an even patch side is dimensionally inconsistent
  std::string bad_dim = bytes;
  bad_dim[20] = 8;  // s_l field
  CHECK(code_of(bad_dim) == IoCode::dim_mismatch);
}

TEST_CASE("trained bases stay orthonormal after a full training run", "[model]") {
  ModelParams params;
  params.n_d = 8;
  params.n_s = 4;
  params.n_l = 12;
  params.s_l = 9;
  params.s_r = 15;
  params.n_t = 3;
  params.T_o = 0.7;
  const TrainedModel m = synth::toy_model(params, 900, 4);
  const Eigen::MatrixXd g1 = m.proj.basis * m.proj.basis.transpose();
  CHECK((g1 - Eigen::MatrixXd::Identity(params.n_d, params.n_d)).cwiseAbs().maxCoeff() < 1e-8);
  const Eigen::MatrixXd g2 = m.ref_basis.components * m.ref_basis.components.transpose();
  CHECK((g2 - Eigen::MatrixXd::Identity(params.n_l, params.n_l)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(m.views.size() == sample_views(params.T_o, params.n_t).size());
}
