#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "asr/patch.hpp"
#include "support/synth.hpp"

using namespace asr;

namespace {

Keypoint kp_at(double x, double y, double sigma) {
  Keypoint kp;
  kp.x = x;
  kp.y = y;
  kp.sigma = sigma;
  return kp;
}

Patch random_patch(int side, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Patch p(side);
  for (double& v : p.pixels) v = uni(rng);
  return p;
}

}  // namespace

TEST_CASE("orientation on intensity ramps", "[patch]") {
  GrayImage rx(64, 64), ry(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      rx.at(x, y) = x / 64.0;
      ry.at(x, y) = y / 64.0;
    }
  CHECK(estimate_orientation(rx, kp_at(32, 32, 2.0)) == Catch::Approx(0.0).margin(1e-9));
  CHECK(estimate_orientation(ry, kp_at(32, 32, 2.0)) == Catch::Approx(kPi / 2).margin(1e-9));

  GrayImage flat(64, 64, 0.5);
  CHECK(estimate_orientation(flat, kp_at(32, 32, 2.0)) == 0.0);
}

TEST_CASE("orientation is exactly invariant to positive linear intensity maps", "[patch]") {
  const GrayImage img = synth::texture(41, 160, 120);
  GrayImage scaled = img;
  for (double& v : scaled.pixels) v = 1.75 * v + 0.1;
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> px(30, 130), py(30, 90), ps(1.0, 3.0);
  for (int i = 0; i < 25; ++i) {
    const Keypoint kp = kp_at(px(rng), py(rng), ps(rng));
    CHECK(estimate_orientation(img, kp) ==
          Catch::Approx(estimate_orientation(scaled, kp)).margin(1e-9));
  }
}

TEST_CASE("orientation follows content rotation", "[patch]") {
  // rotate-and-compare oracle: rotating the image about the keypoint by phi
  // shifts the estimated orientation by phi, within 5 degrees. Keypoints with
  // a near-degenerate average gradient have no meaningful orientation, so the
  // fixture keeps only points where the estimator has signal.
  const GrayImage img = synth::texture(42, 256, 256);
  const double phi = 30.0 * kPi / 180.0;
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> pos(80, 176), ps(1.5, 3.0);
  int checked = 0;
  while (checked < 100) {
    const Keypoint kp = kp_at(pos(rng), pos(rng), ps(rng));
    const auto [gx, gy] =
        detail::average_gradient(img, kp.x, kp.y, 7.5 * kp.sigma, 0.5 * kp.sigma, 60);
    if (std::hypot(gx, gy) < 0.01) continue;
    const double base = estimate_orientation(img, kp);
    const GrayImage rot = synth::rotate_about(img, kp.x, kp.y, phi);
    const double turned = estimate_orientation(rot, kp);
    double delta = turned - base - phi;
    while (delta > kPi) delta -= 2 * kPi;
    while (delta < -kPi) delta += 2 * kPi;
    CHECK(std::abs(delta) < 5.0 * kPi / 180.0);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("extract_patch basics", "[patch]") {
  const GrayImage flat(64, 64, 0.37);
  const Patch p = extract_patch(flat, kp_at(20, 30, 2.0), 9, 0.4, 7.5 * 2.0);
  for (double v : p.pixels) CHECK(v == Catch::Approx(0.37));

  // support radius equal to the patch radius makes r = 1: pixel-exact crop
  const GrayImage img = synth::texture(43, 64, 64);
  const int side = 9, h = 4;
  const Patch crop = extract_patch(img, kp_at(20, 30, 1.0), side, 0.0, double(h));
  for (int row = 0; row < side; ++row)
    for (int col = 0; col < side; ++col)
      CHECK(crop.at(col, row) == img.at(20 + col - h, 30 + row - h));

  CHECK_THROWS_AS(extract_patch(img, kp_at(20, 30, 1.0), 8, 0.0, 4.0), Error);
  CHECK_THROWS_AS(extract_patch(img, kp_at(20, 30, 1.0), 9, 0.0, 0.0), Error);
}

TEST_CASE("extraction with theta matches counter-rotated image", "[patch]") {
  const GrayImage img = synth::texture(44, 200, 200);
  const double phi = 0.6;
  const Keypoint kp = kp_at(100, 100, 2.0);
  // counter-rotated image so that rotated extraction sees the original frame
  const GrayImage counter = synth::rotate_about(img, kp.x, kp.y, phi);
  const Patch a = extract_patch(counter, kp, 21, phi, 7.5 * kp.sigma);
  const Patch b = extract_patch(img, kp, 21, 0.0, 7.5 * kp.sigma);
  double max_diff = 0.0;
  for (int row = 2; row < 19; ++row)
    for (int col = 2; col < 19; ++col)
      max_diff = std::max(max_diff, std::abs(a.at(col, row) - b.at(col, row)));
  CHECK(max_diff <= 0.02);
}

TEST_CASE("warp_patch identity and constants", "[patch]") {
  const Patch ref = random_patch(31, 7);
  const Patch crop = warp_patch(ref, AffineMap{}, 21);
  for (int row = 0; row < 21; ++row)
    for (int col = 0; col < 21; ++col) CHECK(crop.at(col, row) == ref.at(col + 5, row + 5));

  Patch flat(31, 0.42);
  const Patch warped = warp_patch(flat, affine_from_view(make_view(3.0, 1.0)), 21);
  for (double v : warped.pixels) CHECK(v == Catch::Approx(0.42).margin(1e-9));
}

TEST_CASE("warp_patch is linear in the intensities", "[patch]") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> coef(-1.0, 1.0), tilt(1.0, 4.0), angle(0.0, kPi - 1e-9);
  for (int trial = 0; trial < 10; ++trial) {
    const Patch p1 = random_patch(31, 100 + unsigned(trial));
    const Patch p2 = random_patch(31, 200 + unsigned(trial));
    const double a = coef(rng), b = coef(rng);
    Patch mix(31);
    for (size_t i = 0; i < mix.pixels.size(); ++i)
      mix.pixels[i] = a * p1.pixels[i] + b * p2.pixels[i];
    const AffineMap map = affine_from_view(make_view(tilt(rng), angle(rng)));
    const Patch wm = warp_patch(mix, map, 21);
    const Patch w1 = warp_patch(p1, map, 21);
    const Patch w2 = warp_patch(p2, map, 21);
    for (size_t i = 0; i < wm.pixels.size(); ++i)
      CHECK(wm.pixels[i] ==
            Catch::Approx(a * w1.pixels[i] + b * w2.pixels[i]).margin(1e-6));
  }
}

TEST_CASE("warp_patch output range stays inside the input range", "[patch]") {
  const Patch ref = random_patch(31, 77);
  const double lo = *std::min_element(ref.pixels.begin(), ref.pixels.end());
  const double hi = *std::max_element(ref.pixels.begin(), ref.pixels.end());
  const Patch w = warp_patch(ref, affine_from_view(make_view(2.5, 2.0)), 21);
  for (double v : w.pixels) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
}

TEST_CASE("warp_patch rejects undersized references", "[patch]") {
  const Patch ref = random_patch(21, 3);
  CHECK_THROWS_AS(warp_patch(ref, AffineMap{}, 21), PatchTooSmallError);
  CHECK_NOTHROW(warp_patch(random_patch(31, 3), AffineMap{}, 21));
  Eigen::Matrix2d flip;
  flip << -1, 0, 0, 1;
  CHECK_THROWS_AS(warp_patch(random_patch(31, 3), AffineMap{flip}, 21), Error);
}

TEST_CASE("rotate_patch agrees with rotated extraction", "[patch]") {
  const GrayImage img = synth::texture(45, 200, 200);
  const Keypoint kp = kp_at(100, 100, 2.0);
  const double phi = 0.8;
  // radius chosen so the 31-grid uses the 21-grid pixel pitch
  const double radius = 7.5 * kp.sigma * 30.0 / 20.0;
  const Patch ref = extract_patch(img, kp, 31, 0.0, radius);
  const Patch via_patch = rotate_patch(ref, phi, 21);
  const Patch via_image = extract_patch(img, kp, 21, phi, 7.5 * kp.sigma);
  double max_diff = 0.0;
  for (int row = 2; row < 19; ++row)
    for (int col = 2; col < 19; ++col)
      max_diff = std::max(max_diff, std::abs(via_patch.at(col, row) - via_image.at(col, row)));
  CHECK(max_diff <= 0.02);
}
