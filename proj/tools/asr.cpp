// asr: train, detect, describe, match, eval and bench subcommands wiring the
// descriptor pipeline into reproducible batch jobs.

#include <CLI11.hpp>
#include <cstdlib>
#include <string>
#include <thread>

#include "asr/asr.hpp"

namespace {

int default_threads() {
  if (const char* env = std::getenv("ASR_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void add_param_flags(CLI::App* cmd, asr::ModelParams& p) {
  cmd->add_option("--n_p", p.n_p, "pattern number for dominant orientation estimation");
  cmd->add_option("--n_l", p.n_l, "number of orthogonal basis for approximating local patch");
  cmd->add_option("--s_l", p.s_l, "size of local patch");
  cmd->add_option("--s_r", p.s_r, "size of the enlarged reference patch");
  cmd->add_option("--n_d", p.n_d, "dimension of the PCA-patch vector");
  cmd->add_option("--n_s", p.n_s, "dimension of the subspace");
  cmd->add_option("--T_o", p.T_o, "minimal ellipse overlap rate for longitude sampling");
  cmd->add_option("--n_t", p.n_t, "tilt sampling count");
  cmd->add_option("--c_s", p.c_s, "support radius in units of the detection scale");
}

void add_dog_flags(CLI::App* cmd, asr::DogParams& p) {
  cmd->add_option("--octaves", p.octaves, "DoG octaves");
  cmd->add_option("--scales-per-octave", p.scales_per_octave, "DoG scales per octave");
  cmd->add_option("--contrast", p.contrast_threshold, "DoG contrast threshold");
  cmd->add_option("--edge-ratio", p.edge_ratio_threshold, "DoG edge ratio threshold");
  cmd->add_option("--base-sigma", p.base_sigma, "DoG base sigma");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affine Subspace Representation descriptor toolkit"};
  app.require_subcommand(1);

  asr::TrainConfig train_cfg;
  std::string pca_source = "warped";
  CLI::App* train = app.add_subcommand("train", "train a model from a directory of PGM images");
  train->add_option("image_dir", train_cfg.image_dir, "directory of training images")->required();
  train->add_option("out_model", train_cfg.out_model, "output model path")->required();
  add_param_flags(train, train_cfg.params);
  add_dog_flags(train, train_cfg.opts.dog);
  train->add_option("--max-kp-per-image", train_cfg.opts.max_keypoints_per_image,
                    "strongest keypoints kept per image (0 = all)");
  train->add_option("--max-patches", train_cfg.opts.max_patches,
                    "training patch budget (0 = unlimited)");
  train->add_option("--pca-source", pca_source,
                    "patch PCA training source: warped | reference")
      ->check(CLI::IsMember({"warped", "reference"}));

  asr::DetectConfig detect_cfg;
  CLI::App* detect = app.add_subcommand("detect", "detect DoG keypoints");
  detect->add_option("image", detect_cfg.image, "input PGM image")->required();
  detect->add_option("out_keypoints", detect_cfg.out_keypoints, "output keypoint file")->required();
  add_dog_flags(detect, detect_cfg.dog);

  asr::DescribeConfig describe_cfg;
  describe_cfg.threads = default_threads();
  std::string describe_mode = "naive";
  CLI::App* describe = app.add_subcommand("describe", "compute ASR descriptors");
  describe->add_option("image", describe_cfg.image, "input PGM image")->required();
  describe->add_option("keypoints", describe_cfg.keypoints, "keypoint file")->required();
  describe->add_option("model", describe_cfg.model, "trained model file")->required();
  describe->add_option("out", describe_cfg.out, "output descriptor file")->required();
  describe->add_option("--mode", describe_mode, "naive | fast")
      ->check(CLI::IsMember({"naive", "fast"}));
  describe->add_flag("--csv", describe_cfg.csv, "write CSV instead of binary");
  describe->add_option("--threads", describe_cfg.threads, "worker threads (env ASR_THREADS)");

  asr::MatchConfig match_cfg;
  CLI::App* match = app.add_subcommand("match", "NNDR matching of two descriptor files");
  match->add_option("desc_a", match_cfg.desc_a, "descriptor file A")->required();
  match->add_option("desc_b", match_cfg.desc_b, "descriptor file B")->required();
  match->add_option("out_csv", match_cfg.out_csv, "output match CSV")->required();
  match->add_option("--ratio", match_cfg.ratio_threshold, "NNDR ratio threshold");

  asr::EvalConfig eval_cfg;
  eval_cfg.threads = default_threads();
  std::string eval_mode = "naive";
  CLI::App* eval = app.add_subcommand("eval", "recall/1-precision curve for an image pair");
  eval->add_option("image_a", eval_cfg.image_a, "first PGM image")->required();
  eval->add_option("image_b", eval_cfg.image_b, "second PGM image")->required();
  eval->add_option("homography", eval_cfg.homography, "3x3 homography file (a -> b)")->required();
  eval->add_option("model", eval_cfg.model, "trained model file")->required();
  eval->add_option("out_csv", eval_cfg.out_csv, "output curve CSV")->required();
  eval->add_option("--mode", eval_mode, "naive | fast")->check(CLI::IsMember({"naive", "fast"}));
  eval->add_flag("--with-baseline", eval_cfg.with_baseline,
                 "also evaluate the single-view baseline descriptor");
  eval->add_option("--max-keypoints", eval_cfg.max_keypoints, "cap keypoints per image (0 = all)");
  eval->add_option("--dist-thresh", eval_cfg.dist_thresh, "correspondence distance threshold [px]");
  eval->add_option("--scale-ratio-max", eval_cfg.scale_ratio_max,
                   "correspondence scale consistency bound");
  eval->add_option("--threads", eval_cfg.threads, "worker threads (env ASR_THREADS)");

  asr::BenchConfig bench_cfg;
  CLI::App* bench = app.add_subcommand("bench", "per-stage descriptor timing");
  bench->add_option("image", bench_cfg.image, "input PGM image")->required();
  bench->add_option("keypoints", bench_cfg.keypoints, "keypoint file (>= 100 keypoints)")
      ->required();
  bench->add_option("model", bench_cfg.model, "trained model file")->required();
  bench->add_option("--out", bench_cfg.out_csv, "also write the timing CSV here");
  bench->add_option("--reps", bench_cfg.reps, "timed repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (train->parsed()) {
    train_cfg.opts.pca_on_warped = pca_source == "warped";
    return asr::cmd_train(train_cfg);
  }
  if (detect->parsed()) return asr::cmd_detect(detect_cfg);
  if (describe->parsed()) {
    describe_cfg.mode = describe_mode == "fast" ? asr::DescMode::fast : asr::DescMode::naive;
    return asr::cmd_describe(describe_cfg);
  }
  if (match->parsed()) return asr::cmd_match(match_cfg);
  if (eval->parsed()) {
    eval_cfg.mode = eval_mode == "fast" ? asr::DescMode::fast : asr::DescMode::naive;
    return asr::cmd_eval(eval_cfg);
  }
  if (bench->parsed()) return asr::cmd_bench(bench_cfg);
  return 1;
}
