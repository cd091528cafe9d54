#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "mfd/io.hpp"
#include "mfd/rng.hpp"
#include "mfd/tensor.hpp"

using namespace mfd;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  auto d = fs::temp_directory_path() / "mfd_io_test";
  fs::create_directories(d);
  return d;
}
}  // namespace

TEST_CASE("tensor basics") {
  Tensor<double> t({2, 3});
  t(1, 2) = 5.0;
  REQUIRE(t.numel() == 6);
  REQUIRE(t[5] == 5.0);
  REQUIRE(t.rank() == 2);

  auto r = t.reshaped({3, 2});
  REQUIRE(r(2, 1) == 5.0);
  REQUIRE_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);

  Tensor<double> s = Tensor<double>::scalar(3.5);
  REQUIRE(s.rank() == 0);
  REQUIRE(s.numel() == 1);
  REQUIRE(s[0] == 3.5);
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(42, "stream", 0);
  Rng b(42, "stream", 0);
  Rng c(42, "stream", 1);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.gaussian(), vb = b.gaussian(), vc = c.gaussian();
    all_equal = all_equal && va == vb;
    any_diff = any_diff || va != vc;
  }
  REQUIRE(all_equal);
  REQUIRE(any_diff);
}

TEST_CASE("rng gaussian moments") {
  Rng r(7);
  double sum = 0, sumsq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian();
    sum += g;
    sumsq += g * g;
  }
  REQUIRE(std::abs(sum / n) < 0.01);
  REQUIRE(std::abs(sumsq / n - 1.0) < 0.02);
}

TEST_CASE("mvt1 round-trip is bitwise exact") {
  Rng rng(11);
  auto t = rng.gaussian_tensor<float>({3, 4, 5});
  const auto path = temp_dir() / "a.mvt";
  write_tensor(path, t);
  auto u = read_tensor<float>(path);
  REQUIRE(u.shape() == t.shape());
  REQUIRE(std::memcmp(u.data(), t.data(), sizeof(float) * static_cast<size_t>(t.numel())) == 0);

  auto d = rng.gaussian_tensor<double>({7});
  write_tensor(path, d);
  auto d2 = read_tensor<double>(path);
  REQUIRE(std::memcmp(d2.data(), d.data(), sizeof(double) * 7) == 0);
  REQUIRE(tensor_file_dtype(path) == "f64");
}

TEST_CASE("mvt1 scalar (empty shape) round-trips") {
  Tensor<double> s = Tensor<double>::scalar(-2.25);
  const auto path = temp_dir() / "s.mvt";
  write_tensor(path, s);
  auto u = read_tensor<double>(path);
  REQUIRE(u.rank() == 0);
  REQUIRE(u[0] == -2.25);
}

TEST_CASE("mvt1 error codes are distinct") {
  Rng rng(3);
  auto t = rng.gaussian_tensor<float>({10, 10});
  std::string buf = encode_tensor(t);

  SECTION("bad magic") {
    std::string bad = buf;
    bad[0] = 'X';
    try {
      decode_tensor<float>(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(e.status() == IoStatus::bad_magic);
    }
  }
  SECTION("truncated payload: header declares more elements than present") {
    std::string bad = buf.substr(0, buf.size() - 50 * sizeof(float));
    try {
      decode_tensor<float>(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(e.status() == IoStatus::truncated_payload);
    }
  }
  SECTION("length mismatch: payload longer than header declares") {
    std::string bad = buf + std::string(8, '\0');
    try {
      decode_tensor<float>(bad);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(e.status() == IoStatus::length_mismatch);
    }
  }
  SECTION("non-finite rejected on write") {
    t[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(write_tensor(temp_dir() / "nan.mvt", t), std::invalid_argument);
  }
}

TEST_CASE("archive round-trip preserves entries and order") {
  Rng rng(5);
  Archive ar;
  ar.add_text("manifest.json", "{\"epoch\":3}");
  ar.add_tensor("enc/w", rng.gaussian_tensor<float>({3, 3, 2, 4}));
  ar.add_tensor("stme/conv1.w", rng.gaussian_tensor<float>({1, 3, 3, 2, 8}));
  const auto path = temp_dir() / "ckpt.mvz";
  ar.save(path);

  auto back = Archive::load(path);
  REQUIRE(back.names() == std::vector<std::string>{"manifest.json", "enc/w", "stme/conv1.w"});
  REQUIRE(back.payload("manifest.json") == "{\"epoch\":3}");
  auto w = back.tensor<float>("enc/w");
  REQUIRE(max_abs_diff(w, ar.tensor<float>("enc/w")) == 0.0);
  REQUIRE_THROWS_AS(back.payload("missing"), std::out_of_range);

  // identical content twice -> identical file hash
  const auto path2 = temp_dir() / "ckpt2.mvz";
  ar.save(path2);
  REQUIRE(file_hash(path) == file_hash(path2));
}
