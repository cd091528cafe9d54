#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mfd/phantom.hpp"
#include "mfd/warp.hpp"

using namespace mfd;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

double interior_warp_mae(const Tensor<double>& cine, const Tensor<double>& disp, int t, int margin = 2) {
  const int H = cine.dim(1), W = cine.dim(2);
  Tensor<double> ref({1, H, W, 1});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) ref(0, y, x, 0) = cine(0, y, x, 0);
  Tensor<double> phi({1, H, W, 2});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      phi(0, y, x, 0) = x + disp(t - 1, y, x, 0);
      phi(0, y, x, 1) = y + disp(t - 1, y, x, 1);
    }
  auto warped = warp_forward(ref, phi);
  double acc = 0;
  int n = 0;
  for (int y = margin; y < H - margin; ++y)
    for (int x = margin; x < W - margin; ++x) {
      acc += std::abs(warped(0, y, x, 0) - cine(t, y, x, 0));
      ++n;
    }
  return acc / n;
}

PhantomParams base_params() {
  PhantomParams p;
  p.height = p.width = 32;
  p.frames = 9;
  p.center_x = p.center_y = 16.0;
  p.inner_radius = 7.0;
  p.outer_radius = 10.0;
  p.amplitude = 0.2;
  p.seed = 42;
  return p;
}

}  // namespace

TEST_CASE("zero amplitude: static frames and zero displacement") {
  auto p = base_params();
  p.amplitude = 0.0;
  auto s = generate_sample(p);
  for (int t = 1; t < p.frames; ++t)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) REQUIRE(s.cine(t, y, x, 0) == s.cine(0, y, x, 0));
  REQUIRE(s.disp.max_abs() == 0.0);
}

TEST_CASE("identity contrast map and zero noise reproduce cine") {
  auto p = base_params();
  p.noise_sigma = 0.0;
  p.dense_scale = 1.0;
  p.dense_offset = 0.0;
  auto s = generate_sample(p);
  REQUIRE(max_abs_diff(s.dense, s.cine) == 0.0);
}

TEST_CASE("displacement magnitude at the outer radius at peak phase") {
  auto p = base_params();
  auto s = generate_sample(p);
  // default sin^2 profile peaks (s = 1) at the middle frame for frames = 9
  const int peak = 4;
  int checked = 0;
  for (double angle = 0.1; angle < 6.2; angle += 0.4) {
    const int x = static_cast<int>(std::lround(p.center_x + p.outer_radius * std::cos(angle)));
    const int y = static_cast<int>(std::lround(p.center_y + p.outer_radius * std::sin(angle)));
    const double dx = x - p.center_x, dy = y - p.center_y;
    const double r = std::sqrt(dx * dx + dy * dy);
    if (std::abs(r - p.outer_radius) > 0.2) continue;  // keep near-exact lattice hits
    const double ux = s.disp(peak - 1, y, x, 0);
    const double uy = s.disp(peak - 1, y, x, 1);
    REQUIRE_THAT(std::sqrt(ux * ux + uy * uy), WithinAbs(p.amplitude * p.outer_radius, 0.05));
    ++checked;
  }
  REQUIRE(checked >= 3);
}

TEST_CASE("ground-truth consistency: warped reference matches each frame") {
  auto p = base_params();
  p.noise_sigma = 0.0;
  auto s = generate_sample(p);
  for (int t = 1; t < p.frames; ++t) {
    const double mae = interior_warp_mae(s.cine, s.disp, t);
    INFO("frame " << t << " mae " << mae);
    REQUIRE(mae < 0.02);
  }
}

TEST_CASE("window offsets: relative displacement stays consistent") {
  auto p = base_params();
  auto s = generate_sample(p);
  const int ref = 2, tgt = 5;
  auto u = relative_displacement(p, ref, tgt);
  Tensor<double> refimg({1, 32, 32, 1});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) refimg(0, y, x, 0) = s.cine(ref, y, x, 0);
  Tensor<double> phi({1, 32, 32, 2});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      phi(0, y, x, 0) = x + u(0, y, x, 0);
      phi(0, y, x, 1) = y + u(0, y, x, 1);
    }
  auto warped = warp_forward(refimg, phi);
  double acc = 0;
  int n = 0;
  for (int y = 2; y < 30; ++y)
    for (int x = 2; x < 30; ++x) {
      acc += std::abs(warped(0, y, x, 0) - s.cine(tgt, y, x, 0));
      ++n;
    }
  REQUIRE(acc / n < 0.02);
}

TEST_CASE("masks trace the annulus and move with it") {
  auto p = base_params();
  auto s = generate_sample(p);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double r = std::hypot(x - p.center_x, y - p.center_y);
      const bool inside = r >= p.inner_radius && r <= p.outer_radius;
      REQUIRE(s.mask(0, y, x, 0) == (inside ? 1.0 : 0.0));
    }
  double area0 = 0, area_peak = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      area0 += s.mask(0, y, x, 0);
      area_peak += s.mask(4, y, x, 0);
    }
  REQUIRE(area_peak < area0);
}

TEST_CASE("SNR ordering between cine and dense") {
  auto p = base_params();
  auto s = generate_sample(p);
  Tensor<double> dense_clean(s.dense.shape());
  for (int64_t i = 0; i < dense_clean.numel(); ++i)
    dense_clean[i] = std::clamp(p.dense_offset + p.dense_scale * s.cine[i], 0.0, 1.0);
  const double snr_cine = snr_against_clean(s.cine, s.cine);
  const double snr_dense = snr_against_clean(s.dense, dense_clean);
  REQUIRE(snr_cine > snr_dense);
  REQUIRE(std::isfinite(snr_dense));
}

TEST_CASE("generation is deterministic in the seed") {
  auto a = generate_sample(base_params());
  auto b = generate_sample(base_params());
  REQUIRE(max_abs_diff(a.cine, b.cine) == 0.0);
  REQUIRE(max_abs_diff(a.dense, b.dense) == 0.0);
  auto p2 = base_params();
  p2.seed = 43;
  auto c = generate_sample(p2);
  REQUIRE(max_abs_diff(a.dense, c.dense) > 0.0);
}

TEST_CASE("invalid geometry is rejected") {
  auto p = base_params();
  p.inner_radius = 12.0;  // >= outer
  REQUIRE_THROWS_AS(generate_sample(p), std::invalid_argument);
  p = base_params();
  p.outer_radius = 17.0;  // >= half extent
  REQUIRE_THROWS_AS(generate_sample(p), std::invalid_argument);
  p = base_params();
  p.amplitude = 0.6;
  REQUIRE_THROWS_AS(generate_sample(p), std::invalid_argument);
}

TEST_CASE("build_dataset: reproducible manifests and hashes") {
  const auto root = fs::temp_directory_path() / "mfd_phantom_ds";
  fs::remove_all(root);
  DatasetRanges ranges;
  const auto m1 = build_dataset(3, 24, 24, 5, ranges, root / "a", 7);
  const auto m2 = build_dataset(3, 24, 24, 5, ranges, root / "b", 7);
  auto j1 = nlohmann::json::parse(detail::read_file(m1));
  auto j2 = nlohmann::json::parse(detail::read_file(m2));
  REQUIRE(j1.at("samples").size() == 3);
  REQUIRE(j1.at("samples") == j2.at("samples"));

  auto loaded = load_dataset(m1);
  REQUIRE(loaded.size() == 3);
  REQUIRE(loaded[0].cine.dim(0) == 5);

  const auto m3 = build_dataset(3, 24, 24, 5, ranges, root / "c", 8);
  auto j3 = nlohmann::json::parse(detail::read_file(m3));
  REQUIRE(j1.at("samples")[0].at("hashes") != j3.at("samples")[0].at("hashes"));
}

TEST_CASE("amplitude draws cover the configured range", "[slow]") {
  DatasetRanges ranges;
  ranges.amplitude_min = 0.1;
  ranges.amplitude_max = 0.3;
  double mean = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) mean += draw_phantom_params(32, 32, 9, ranges, 123, static_cast<uint64_t>(i)).amplitude;
  mean /= n;
  REQUIRE(mean > 0.19);
  REQUIRE(mean < 0.21);
}
