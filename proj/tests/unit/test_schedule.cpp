#include <catch2/catch_amalgamated.hpp>

#include "mfd/rng.hpp"
#include "mfd/schedule.hpp"

using namespace mfd;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("linear schedule matches the running-product oracle") {
  auto s = make_noise_schedule(ScheduleKind::linear, 3, {{"beta_start", 0.1}, {"beta_end", 0.3}});
  REQUIRE(s.betas == std::vector<double>{0.1, 0.2, 0.3});
  // running-product oracle, computed inline
  double prod = 1.0;
  std::vector<double> expect;
  for (double b : s.betas) {
    prod *= (1.0 - b);
    expect.push_back(prod);
  }
  REQUIRE_THAT(s.alpha_bar(1), WithinRel(expect[0], 1e-12));
  REQUIRE_THAT(s.alpha_bar(2), WithinRel(expect[1], 1e-12));
  REQUIRE_THAT(s.alpha_bar(3), WithinRel(expect[2], 1e-12));
  REQUIRE_THAT(s.alpha_bar(2), WithinAbs(0.72, 1e-15));
  REQUIRE_THAT(s.alpha_bar(3), WithinAbs(0.504, 1e-15));
}

TEST_CASE("degenerate all-zero-beta schedule never noises") {
  auto s = schedule_from_betas(ScheduleKind::linear, std::vector<double>(5, 0.0));
  for (int t = 1; t <= 5; ++t) REQUIRE(s.alpha_bar(t) == 1.0);
}

TEST_CASE("T=1000 linear alpha_bar regression constant") {
  // frozen from an extended-precision (60-digit) running-product oracle
  constexpr double kAlphaBar1000 = 4.035829765375683314817635e-5;
  auto s = make_noise_schedule(ScheduleKind::linear, 1000, {{"beta_start", 1e-4}, {"beta_end", 0.02}});
  REQUIRE_THAT(s.alpha_bar(1000), WithinRel(kAlphaBar1000, 1e-10));

  // long-double running product agrees too
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) prod *= static_cast<long double>(1.0 - s.beta(t));
  REQUIRE_THAT(s.alpha_bar(1000), WithinRel(static_cast<double>(prod), 1e-12));
}

TEST_CASE("sigmoid-beta schedule: alpha_bar profile and invariants") {
  auto s = make_noise_schedule(ScheduleKind::sigmoid_beta, 100);
  REQUIRE(s.params.at("start") == -3.0);
  REQUIRE(s.params.at("end") == 3.0);
  REQUIRE(s.params.at("tau") == 1.0);
  // monotone non-increasing, in (0,1], ends near 0
  double prev = 1.0;
  for (int t = 1; t <= 100; ++t) {
    REQUIRE(s.alpha_bar(t) <= prev + 1e-15);
    REQUIRE(s.alpha_bar(t) > 0.0);
    REQUIRE(s.beta(t) >= 0.0);
    REQUIRE(s.beta(t) < 1.0);
    prev = s.alpha_bar(t);
  }
  REQUIRE(s.alpha_bar(100) < 0.06);
  REQUIRE(s.alpha_bar(1) > 0.9);

  // betas were derived so the running product reproduces the sigmoid profile
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double norm = sig(3.0);
  for (int t : {1, 17, 50, 99}) {
    const double want = sig(-(static_cast<double>(t) / 100.0 * 6.0 - 3.0)) / norm;
    REQUIRE_THAT(s.alpha_bar(t), WithinRel(want, 1e-12));
  }
}

TEST_CASE("schedule invariants hold for generated schedules") {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const int T = 1 + static_cast<int>(rng.uniform_int(200));
    const double b0 = rng.uniform(1e-5, 0.01);
    const double b1 = rng.uniform(b0 + 1e-4, 0.5);
    auto lin = make_noise_schedule(ScheduleKind::linear, T, {{"beta_start", b0}, {"beta_end", b1}});
    auto sig = make_noise_schedule(ScheduleKind::sigmoid_beta, T,
                                   {{"start", rng.uniform(-6, -1)}, {"end", rng.uniform(1, 6)}, {"tau", rng.uniform(0.3, 3)}});
    for (const auto& s : {lin, sig}) {
      double run = 1.0;
      for (int t = 1; t <= T; ++t) {
        REQUIRE(s.alpha_bar(t) <= s.alpha_bar(t - 1));
        run *= s.alpha(t);
        REQUIRE_THAT(s.alpha_bar(t), WithinRel(run, 1e-12));
      }
    }
  }
}

TEST_CASE("schedule construction rejects invalid parameters") {
  REQUIRE_THROWS_AS(make_noise_schedule(ScheduleKind::linear, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(make_noise_schedule(ScheduleKind::linear, 10, {{"beta_start", 0.3}, {"beta_end", 0.1}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(make_noise_schedule(ScheduleKind::linear, 10, {{"beta_start", 0.0}, {"beta_end", 0.1}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(make_noise_schedule(ScheduleKind::linear, 10, {{"beta_start", 0.1}, {"beta_end", 1.0}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(make_noise_schedule(ScheduleKind::sigmoid_beta, 10, {{"tau", 0.0}}), std::invalid_argument);
}

TEST_CASE("schedule JSON round-trip is exact") {
  auto s = make_noise_schedule(ScheduleKind::sigmoid_beta, 50, {{"start", -2.5}, {"end", 2.0}, {"tau", 0.7}});
  auto j = s.to_json();
  auto s2 = NoiseSchedule::from_json(j);
  REQUIRE(s2.kind == s.kind);
  REQUIRE(s2.total_steps == s.total_steps);
  REQUIRE(s2.betas == s.betas);
  REQUIRE(s2.alpha_bars == s.alpha_bars);
}

TEST_CASE("forward marginal: identity, noise-free, and scale covariance") {
  Rng rng(31);
  auto x0 = rng.gaussian_tensor<double>({2, 4, 4, 1});
  auto eps = rng.gaussian_tensor<double>({2, 4, 4, 1});

  auto degenerate = schedule_from_betas(ScheduleKind::linear, std::vector<double>(4, 0.0));
  REQUIRE(max_abs_diff(forward_marginal_sample(x0, 3, eps, degenerate), x0) == 0.0);

  auto s = make_noise_schedule(ScheduleKind::linear, 10, {{"beta_start", 0.05}, {"beta_end", 0.3}});
  auto zero = Tensor<double>::zeros(x0.shape());
  auto noisefree = forward_marginal_sample(x0, 4, zero, s);
  const double c = std::sqrt(s.alpha_bar(4));
  for (int64_t i = 0; i < x0.numel(); ++i) REQUIRE_THAT(noisefree[i], WithinRel(c * x0[i], 1e-14));

  // scale covariance: f(c*x0, t, c*eps) = c*f(x0, t, eps)
  Tensor<double> x2(x0.shape()), e2(eps.shape());
  for (int64_t i = 0; i < x0.numel(); ++i) {
    x2[i] = -1.7 * x0[i];
    e2[i] = -1.7 * eps[i];
  }
  auto a = forward_marginal_sample(x2, 7, e2, s);
  auto b = forward_marginal_sample(x0, 7, eps, s);
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE_THAT(a[i], WithinAbs(-1.7 * b[i], 1e-12));

  REQUIRE_THROWS_AS(forward_marginal_sample(x0, 0, eps, s), std::out_of_range);
  REQUIRE_THROWS_AS(forward_marginal_sample(x0, 11, eps, s), std::out_of_range);
  REQUIRE_THROWS_AS(forward_marginal_sample(x0, 3, rng.gaussian_tensor<double>({1, 4, 4, 1}), s),
                    std::invalid_argument);
}

TEST_CASE("forward marginal variance matches Monte-Carlo oracle", "[slow]") {
  auto s = make_noise_schedule(ScheduleKind::linear, 20, {{"beta_start", 0.01}, {"beta_end", 0.2}});
  const int t = 12;
  Rng rng(41);
  auto x0 = Tensor<double>::zeros({1, 2, 2, 1});
  double sumsq = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto eps = rng.gaussian_tensor<double>({1, 2, 2, 1});
    auto xt = forward_marginal_sample(x0, t, eps, s);
    for (int64_t j = 0; j < xt.numel(); ++j) sumsq += xt[j] * xt[j];
  }
  const double var = sumsq / (4.0 * draws);
  const double want = 1.0 - s.alpha_bar(t);
  REQUIRE(var > want * 0.95);
  REQUIRE(var < want * 1.05);
}

TEST_CASE("two conditional noising steps match the closed-form marginal", "[slow]") {
  // q(x_t | x_{t-1}) applied twice from x_{t-2}, Monte-Carlo mean vs closed form
  auto s = make_noise_schedule(ScheduleKind::linear, 5, {{"beta_start", 0.05}, {"beta_end", 0.4}});
  Rng rng(43);
  const double x0 = 0.8;
  const int t = 2;
  const int draws = 10000;
  double mean = 0;
  for (int i = 0; i < draws; ++i) {
    double x = x0;
    for (int step = 1; step <= t; ++step)
      x = std::sqrt(1.0 - s.beta(step)) * x + std::sqrt(s.beta(step)) * rng.gaussian();
    mean += x;
  }
  mean /= draws;
  const double want = std::sqrt(s.alpha_bar(t)) * x0;
  const double se = std::sqrt((1.0 - s.alpha_bar(t)) / draws);
  REQUIRE(std::abs(mean - want) < 3.0 * se);
}

TEST_CASE("reverse step: one-step inversion and closed forms") {
  auto s = make_noise_schedule(ScheduleKind::linear, 8, {{"beta_start", 0.02}, {"beta_end", 0.25}});
  Rng rng(51);
  auto x0 = rng.uniform_tensor<double>({2, 4, 4, 1}, -1, 1);
  auto eps = rng.gaussian_tensor<double>({2, 4, 4, 1});
  auto zero = Tensor<double>::zeros(x0.shape());

  // exact algebraic inversion of the one-step marginal at t = 1
  auto x1 = forward_marginal_sample(x0, 1, eps, s);
  auto rec = ddpm_reverse_step(x1, 1, eps, s, zero);
  REQUIRE(max_abs_diff(rec, x0) < 1e-6);

  // eps_hat = 0, z = 0 -> x_t / sqrt(alpha_t)
  auto xt = rng.gaussian_tensor<double>({2, 4, 4, 1});
  auto out = ddpm_reverse_step(xt, 5, zero, s, zero);
  for (int64_t i = 0; i < xt.numel(); ++i)
    REQUIRE_THAT(out[i], WithinRel(xt[i] / std::sqrt(s.alpha(5)), 1e-12));

  // determinism: identical inputs -> identical outputs
  auto out2 = ddpm_reverse_step(xt, 5, zero, s, zero);
  REQUIRE(max_abs_diff(out, out2) == 0.0);

  REQUIRE_THROWS_AS(ddpm_reverse_step(xt, 0, zero, s, zero), std::out_of_range);
}

TEST_CASE("oracle-denoiser chain recovers x0 correlation", "[slow]") {
  // Denoiser that always predicts the true terminal eps of the last noising
  // draw; terminal samples should correlate with x0.
  auto s = make_noise_schedule(ScheduleKind::linear, 30, {{"beta_start", 0.01}, {"beta_end", 0.3}});
  Rng rng(61);
  int good = 0;
  double corr_sum = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    auto x0 = rng.uniform_tensor<double>({1, 8, 8, 1}, -1, 1);
    auto x = rng.gaussian_tensor<double>({1, 8, 8, 1});
    for (int t = s.total_steps; t >= 1; --t) {
      // oracle eps: the noise that would map x0 to the current x under the marginal
      Tensor<double> eps_hat(x.shape());
      const double ab = s.alpha_bar(t);
      for (int64_t i = 0; i < x.numel(); ++i)
        eps_hat[i] = (x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
      auto z = t > 1 ? rng.gaussian_tensor<double>(x.shape()) : Tensor<double>::zeros(x.shape());
      x = ddpm_reverse_step(x, t, eps_hat, s, z);
    }
    // Pearson correlation between x and x0
    double mx = x.mean(), m0 = x0.mean(), sxy = 0, sxx = 0, syy = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
      sxy += (x[i] - mx) * (x0[i] - m0);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (x0[i] - m0) * (x0[i] - m0);
    }
    const double corr = sxy / std::sqrt(sxx * syy);
    corr_sum += corr;
    if (corr > 0.5) ++good;
  }
  INFO("mean correlation " << corr_sum / trials);
  REQUIRE(corr_sum / trials > 0.5);
  REQUIRE(good > trials / 2);
}

TEST_CASE("epsilon loss: trivial values and extended-precision oracle") {
  Tensor<double> ones = Tensor<double>::full({2, 3, 3, 1}, 1.0);
  Tensor<double> zeros = Tensor<double>::zeros({2, 3, 3, 1});
  REQUIRE(epsilon_loss(ones, ones) == 0.0);
  REQUIRE_THAT(epsilon_loss(ones, zeros), WithinAbs(1.0, 1e-15));

  Rng rng(71);
  auto a = rng.gaussian_tensor<double>({4, 16, 16, 1});
  auto b = rng.gaussian_tensor<double>({4, 16, 16, 1});
  long double acc = 0.0L;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    acc += d * d;
  }
  const double oracle = static_cast<double>(acc / a.numel());
  REQUIRE_THAT(epsilon_loss(a, b), WithinRel(oracle, 1e-10));
  REQUIRE_THROWS_AS(epsilon_loss(a, rng.gaussian_tensor<double>({4, 16, 15, 1})), std::invalid_argument);
}
