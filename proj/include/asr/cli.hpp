#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "asr/matchbench.hpp"

namespace asr {

// ---------------------------------------------------------------------------
// Offline training pipeline: detect -> extract reference patches -> three PCA
// stages -> fast-path tables.

struct TrainOptions {
  DogParams dog;
  int max_keypoints_per_image = 300;
  long long max_patches = 20000;
  bool pca_on_warped = true;  // train P_d on all warped views (else identity crops only)
};

struct TrainStats {
  long long images = 0;
  long long keypoints = 0;
  long long patches = 0;
  long long patch_pca_samples = 0;
  double patch_pca_loss = 0.0;  // energy outside the top-n_d directions
  double reference_pca_loss = 0.0;
};

/// Reference patches for training: aligned, enlarged s_r grids around the
/// strongest DoG keypoints of each image.
inline std::vector<Patch> collect_training_patches(const std::vector<GrayImage>& images,
                                                   const ModelParams& params,
                                                   const TrainOptions& opts,
                                                   TrainStats* stats = nullptr) {
  std::vector<Patch> refs;
  for (const GrayImage& img : images) {
    std::vector<Keypoint> kps = detect_dog(img, opts.dog);
    if (opts.max_keypoints_per_image > 0 &&
        static_cast<int>(kps.size()) > opts.max_keypoints_per_image)
      kps.resize(size_t(opts.max_keypoints_per_image));
    if (stats) {
      ++stats->images;
      stats->keypoints += static_cast<long long>(kps.size());
    }
    for (const Keypoint& kp : kps) {
      if (!detail::keypoint_usable(img, kp)) continue;
      if (opts.max_patches > 0 && static_cast<long long>(refs.size()) >= opts.max_patches)
        return refs;
      const double theta = estimate_orientation(img, kp, params.c_s, params.n_p);
      refs.push_back(detail::extract_reference_patch(img, kp, params, theta));
    }
  }
  return refs;
}

/// Trains the full model from an in-memory image list. Deterministic for a
/// fixed image order: covariance accumulation and reduction follow the
/// sample order, and the eigensolver is deterministic.
inline TrainedModel train_model(const std::vector<GrayImage>& images, const ModelParams& params,
                                const TrainOptions& opts = {}, TrainStats* stats = nullptr) {
  validate_params(params);
  if (images.empty()) throw Error("train_model: no input images");

  const std::vector<Patch> refs = collect_training_patches(images, params, opts, stats);
  if (stats) stats->patches = static_cast<long long>(refs.size());
  if (static_cast<int>(refs.size()) < std::max(params.n_d, 2))
    throw RankError("train_model: only " + std::to_string(refs.size()) +
                    " training patches; need at least " + std::to_string(std::max(params.n_d, 2)));

  TrainedModel m;
  m.params = params;
  m.views = sample_views(params.T_o, params.n_t);

  // P_d: covariance of s_l crops, over all simulated views or identity only.
  {
    CovarianceAccumulator acc(params.s_l * params.s_l);
    const AffineMap identity{};
    for (const Patch& ref : refs) {
      if (opts.pca_on_warped) {
        for (const ViewParams& v : m.views)
          acc.add(vec_patch(warp_patch(ref, affine_from_view(v), params.s_l)));
      } else {
        acc.add(vec_patch(warp_patch(ref, identity, params.s_l)));
      }
    }
    const EigenDecomposition eig = sym_eigs_descending(acc.covariance());
    if (eig.rank < params.n_d)
      throw RankError("train_model: patch covariance rank " + std::to_string(eig.rank) +
                      " < n_d = " + std::to_string(params.n_d));
    m.proj.basis = eig.vectors.leftCols(params.n_d).transpose();
    if (stats) {
      stats->patch_pca_samples = acc.count();
      const double trace = eig.values.sum();
      stats->patch_pca_loss = trace > 0.0 ? 1.0 - eig.values.head(params.n_d).sum() / trace : 0.0;
    }
  }

  // Reference basis on the raw s_r patches.
  {
    if (static_cast<int>(refs.size()) < std::max(params.n_l, 2))
      throw RankError("train_model: " + std::to_string(refs.size()) +
                      " patches cannot support n_l = " + std::to_string(params.n_l));
    CovarianceAccumulator acc(params.s_r * params.s_r);
    for (const Patch& ref : refs) acc.add(vec_patch(ref));
    const Eigen::VectorXd mean = acc.mean();
    const EigenDecomposition eig = sym_eigs_descending(acc.covariance());
    if (eig.rank < params.n_l)
      throw RankError("train_model: reference covariance rank " + std::to_string(eig.rank) +
                      " < n_l = " + std::to_string(params.n_l));
    m.ref_basis = ReferenceBasis{mean, eig.vectors.leftCols(params.n_l).transpose()};
    if (stats) {
      const double trace = eig.values.sum();
      stats->reference_pca_loss =
          trace > 0.0 ? 1.0 - eig.values.head(params.n_l).sum() / trace : 0.0;
    }
  }

  m.tables = precompute_view_tables(m.ref_basis, m.proj, m.views);
  return m;
}

// ---------------------------------------------------------------------------
// Command implementations. Exit codes: 0 success, 1 usage error, 2 I/O error,
// 3 numeric/rank failure.

namespace detail {

template <typename Fn>
int run_command(Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IoError(IoCode::io_failure, "", dir.string() + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".pgm") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw IoError(IoCode::io_failure, "", "no .pgm images in " + dir.string());
  return paths;
}

inline std::filesystem::path with_suffix(const std::filesystem::path& path,
                                         const std::string& tag) {
  std::filesystem::path p = path;
  const std::string ext = p.extension().string();
  p.replace_extension();
  p += "." + tag + ext;
  return p;
}

}  // namespace detail

struct TrainConfig {
  std::string image_dir;
  std::string out_model;
  ModelParams params;
  TrainOptions opts;
};

inline int cmd_train(const TrainConfig& cfg) {
  return detail::run_command([&] {
    std::vector<GrayImage> images;
    for (const auto& path : detail::list_images(cfg.image_dir)) images.push_back(read_pgm(path));
    TrainStats stats;
    const TrainedModel m = train_model(images, cfg.params, cfg.opts, &stats);
    save_model(m, cfg.out_model);
    std::printf("trained on %lld images, %lld keypoints, %lld patches\n", stats.images,
                stats.keypoints, stats.patches);
    std::printf("patch pca: %lld samples, loss rate %.4f\n", stats.patch_pca_samples,
                stats.patch_pca_loss);
    std::printf("reference pca: loss rate %.4f\n", stats.reference_pca_loss);
    std::printf("views: %zu, model written to %s\n", m.views.size(), cfg.out_model.c_str());
  });
}

struct DetectConfig {
  std::string image;
  std::string out_keypoints;
  DogParams dog;
};

inline int cmd_detect(const DetectConfig& cfg) {
  return detail::run_command([&] {
    const GrayImage img = read_pgm(cfg.image);
    const std::vector<Keypoint> kps = detect_dog(img, cfg.dog);
    write_keypoints(kps, cfg.out_keypoints);
    std::printf("%zu keypoints written to %s\n", kps.size(), cfg.out_keypoints.c_str());
  });
}

struct DescribeConfig {
  std::string image;
  std::string keypoints;
  std::string model;
  std::string out;
  DescMode mode = DescMode::naive;
  bool csv = false;
  int threads = 1;
};

inline DescriptorFile build_descriptor_file(const std::vector<Keypoint>& kps,
                                            const std::vector<std::optional<AsrDescriptor>>& descs,
                                            uint32_t dim) {
  DescriptorFile f;
  f.dim = dim;
  for (size_t i = 0; i < kps.size(); ++i) {
    if (!descs[i]) continue;
    DescriptorRecord r;
    r.x = static_cast<float>(kps[i].x);
    r.y = static_cast<float>(kps[i].y);
    r.sigma = static_cast<float>(kps[i].sigma);
    r.orientation = static_cast<float>(kps[i].orientation);
    r.values.resize(size_t(descs[i]->q.size()));
    for (Eigen::Index k = 0; k < descs[i]->q.size(); ++k)
      r.values[size_t(k)] = static_cast<float>(descs[i]->q[k]);
    f.records.push_back(std::move(r));
  }
  return f;
}

inline int cmd_describe(const DescribeConfig& cfg) {
  return detail::run_command([&] {
    const GrayImage img = read_pgm(cfg.image);
    const TrainedModel m = load_model(cfg.model);
    std::vector<Keypoint> kps = read_keypoints(cfg.keypoints);
    for (Keypoint& kp : kps)
      if (!kp.has_orientation() && detail::keypoint_usable(img, kp))
        kp.orientation = estimate_orientation(img, kp, m.params.c_s, m.params.n_p);
    const auto descs = describe(img, kps, m, cfg.mode, cfg.threads);
    const uint32_t dim = uint32_t(m.params.n_d * (m.params.n_d + 1) / 2);
    const DescriptorFile f = build_descriptor_file(kps, descs, dim);
    if (cfg.csv)
      atomic_write_file(cfg.out, [&](std::ostream& os) { write_descriptors_csv(f, os); });
    else
      write_descriptors(f, cfg.out);
    std::printf("%zu/%zu descriptors (dim %u) written to %s\n", f.records.size(), kps.size(), dim,
                cfg.out.c_str());
  });
}

struct MatchConfig {
  std::string desc_a;
  std::string desc_b;
  std::string out_csv;
  double ratio_threshold = 0.8;
};

inline int cmd_match(const MatchConfig& cfg) {
  return detail::run_command([&] {
    const DescriptorFile fa = read_descriptors(cfg.desc_a);
    const DescriptorFile fb = read_descriptors(cfg.desc_b);
    if (fa.dim != fb.dim)
      throw IoError(IoCode::dim_mismatch, "descriptors",
                    "descriptor dimensions differ between files");
    auto to_vectors = [](const DescriptorFile& f) {
      std::vector<Eigen::VectorXd> v;
      v.reserve(f.records.size());
      for (const DescriptorRecord& r : f.records)
        v.push_back(Eigen::Map<const Eigen::VectorXf>(r.values.data(),
                                                      Eigen::Index(r.values.size()))
                        .cast<double>());
      return v;
    };
    const std::vector<MatchPair> matches =
        match_nndr(to_vectors(fa), to_vectors(fb), cfg.ratio_threshold);
    atomic_write_file(cfg.out_csv, [&](std::ostream& os) {
      os << "index_a,index_b,distance,ratio\n";
      char buf[120];
      for (const MatchPair& p : matches) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g\n", p.index_a, p.index_b, p.distance,
                      p.ratio);
        os << buf;
      }
    });
    std::printf("%zu matches at ratio %.3f written to %s\n", matches.size(), cfg.ratio_threshold,
                cfg.out_csv.c_str());
  });
}

struct EvalConfig {
  std::string image_a;
  std::string image_b;
  std::string homography;
  std::string model;
  std::string out_csv;
  DescMode mode = DescMode::naive;
  bool with_baseline = false;
  int max_keypoints = 0;  // 0 = all
  double dist_thresh = 2.5;
  double scale_ratio_max = 1.8;
  int threads = 1;
};

namespace detail {

/// Keeps the keypoints whose descriptor slot is filled, preserving order, so
/// matching indices and ground-truth indices refer to the same list.
template <typename T>
inline std::pair<std::vector<Keypoint>, std::vector<Eigen::VectorXd>> compact_described(
    const std::vector<Keypoint>& kps, const std::vector<std::optional<T>>& descs) {
  std::vector<Keypoint> out_kps;
  std::vector<Eigen::VectorXd> out_descs;
  for (size_t i = 0; i < kps.size(); ++i) {
    if (!descs[i]) continue;
    out_kps.push_back(kps[i]);
    if constexpr (std::is_same_v<T, AsrDescriptor>)
      out_descs.push_back(descs[i]->q);
    else
      out_descs.push_back(*descs[i]);
  }
  return {std::move(out_kps), std::move(out_descs)};
}

}  // namespace detail

inline int cmd_eval(const EvalConfig& cfg) {
  return detail::run_command([&] {
    const GrayImage img_a = read_pgm(cfg.image_a);
    const GrayImage img_b = read_pgm(cfg.image_b);
    const Homography h = read_homography(cfg.homography);
    const TrainedModel m = load_model(cfg.model);

    std::vector<Keypoint> kps_a = detect_dog(img_a);
    std::vector<Keypoint> kps_b = detect_dog(img_b);
    if (cfg.max_keypoints > 0) {
      if (static_cast<int>(kps_a.size()) > cfg.max_keypoints) kps_a.resize(size_t(cfg.max_keypoints));
      if (static_cast<int>(kps_b.size()) > cfg.max_keypoints) kps_b.resize(size_t(cfg.max_keypoints));
    }

    auto run_curve = [&](const std::vector<Keypoint>& ka, const std::vector<Keypoint>& kb,
                         const std::vector<Eigen::VectorXd>& da,
                         const std::vector<Eigen::VectorXd>& db, const std::string& out_path) {
      const auto gt = ground_truth_correspondences(ka, kb, h, cfg.dist_thresh, cfg.scale_ratio_max);
      const auto matches = match_nndr(da, db, 1.0);
      const auto curve = recall_precision_curve(matches, gt);
      write_curve_csv(curve, out_path);
      const CurvePoint& last = curve.back();
      std::printf("%s: %zu correspondences, %d matches, recall %.3f, 1-precision %.3f\n",
                  out_path.c_str(), gt.size(), last.matches, last.recall,
                  last.one_minus_precision);
    };

    {
      const auto da = describe(img_a, kps_a, m, cfg.mode, cfg.threads);
      const auto db = describe(img_b, kps_b, m, cfg.mode, cfg.threads);
      auto [ka, va] = detail::compact_described(kps_a, da);
      auto [kb, vb] = detail::compact_described(kps_b, db);
      run_curve(ka, kb, va, vb, cfg.out_csv);
    }
    if (cfg.with_baseline) {
      const auto da = baseline_single_view(img_a, kps_a, m);
      const auto db = baseline_single_view(img_b, kps_b, m);
      auto [ka, va] = detail::compact_described(kps_a, da);
      auto [kb, vb] = detail::compact_described(kps_b, db);
      run_curve(ka, kb, va, vb, detail::with_suffix(cfg.out_csv, "baseline").string());
    }
  });
}

struct BenchConfig {
  std::string image;
  std::string keypoints;
  std::string model;
  std::string out_csv;  // optional
  int reps = 20;
};

inline int cmd_bench(const BenchConfig& cfg) {
  return detail::run_command([&] {
    const GrayImage img = read_pgm(cfg.image);
    const TrainedModel m = load_model(cfg.model);
    const std::vector<Keypoint> kps = read_keypoints(cfg.keypoints);
    std::vector<std::pair<std::string, TimingReport>> reports;
    reports.emplace_back("naive", bench_timing(img, kps, m, DescMode::naive, cfg.reps));
    reports.emplace_back("fast", bench_timing(img, kps, m, DescMode::fast, cfg.reps));
    write_timing_csv(std::cout, reports);
    if (!cfg.out_csv.empty())
      atomic_write_file(cfg.out_csv, [&](std::ostream& os) { write_timing_csv(os, reports); });
  });
}

}  // namespace asr
