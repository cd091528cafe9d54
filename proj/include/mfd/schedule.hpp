#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfd/tensor.hpp"

namespace mfd {

enum class ScheduleKind { linear, sigmoid_beta };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "sigmoid_beta"; }

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "sigmoid_beta") return ScheduleKind::sigmoid_beta;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

// beta/alpha/alpha_bar tables for T diffusion steps. Timesteps are 1-based;
// t = 0 denotes clean data and alpha_bar(0) = 1. All tables are built in
// double precision regardless of the sampling precision.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int total_steps = 0;
  std::map<std::string, double> params;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(static_cast<size_t>(t - 1)); }
  double alpha(int t) const { return alphas.at(static_cast<size_t>(t - 1)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(static_cast<size_t>(t - 1)); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["T"] = total_steps;
    j["params"] = params;
    j["betas"] = betas;
    return j;
  }

  static NoiseSchedule from_json(const nlohmann::json& j);
};

// Builds the derived tables from a beta sequence and validates the type
// invariants. Betas of exactly 0 are allowed (degenerate test schedules).
inline NoiseSchedule schedule_from_betas(ScheduleKind kind, std::vector<double> betas,
                                         std::map<std::string, double> params = {}) {
  if (betas.empty()) throw std::invalid_argument("schedule: T must be >= 1");
  NoiseSchedule s;
  s.kind = kind;
  s.total_steps = static_cast<int>(betas.size());
  s.params = std::move(params);
  s.betas = std::move(betas);
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double running = 1.0;
  for (size_t i = 0; i < s.betas.size(); ++i) {
    const double b = s.betas[i];
    if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("schedule: beta out of [0,1)");
    s.alphas[i] = 1.0 - b;
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
    if (!(running > 0.0 && running <= 1.0)) throw std::invalid_argument("schedule: alpha_bar out of (0,1]");
  }
  return s;
}

inline NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  NoiseSchedule s = schedule_from_betas(schedule_kind_from_string(j.at("kind").get<std::string>()),
                                        j.at("betas").get<std::vector<double>>(),
                                        j.at("params").get<std::map<std::string, double>>());
  if (s.total_steps != j.at("T").get<int>()) throw std::invalid_argument("schedule: T does not match betas length");
  return s;
}

inline double param_or(const std::map<std::string, double>& params, const std::string& key, double dflt) {
  auto it = params.find(key);
  return it == params.end() ? dflt : it->second;
}

// linear: beta spaced evenly from beta_start to beta_end over t = 1..T.
// sigmoid_beta: alpha_bar(t) = sig(-((t/T)*(end-start)+start)/tau) rescaled
// so alpha_bar(0) = 1, betas derived as 1 - alpha_bar(t)/alpha_bar(t-1).
inline NoiseSchedule make_noise_schedule(ScheduleKind kind, int T, std::map<std::string, double> params = {}) {
  if (T < 1) throw std::invalid_argument("make_noise_schedule: T must be >= 1");
  if (kind == ScheduleKind::linear) {
    const double b0 = param_or(params, "beta_start", 1e-4);
    const double b1 = param_or(params, "beta_end", 0.02);
    if (!(b0 > 0.0 && b0 < 1.0 && b1 > 0.0 && b1 < 1.0 && b0 < b1))
      throw std::invalid_argument("make_noise_schedule: linear bounds must satisfy 0 < beta_start < beta_end < 1");
    params["beta_start"] = b0;
    params["beta_end"] = b1;
    std::vector<double> betas(static_cast<size_t>(T));
    for (int t = 1; t <= T; ++t)
      betas[static_cast<size_t>(t - 1)] = T == 1 ? b0 : b0 + (b1 - b0) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
    return schedule_from_betas(kind, std::move(betas), std::move(params));
  }

  const double start = param_or(params, "start", -3.0);
  const double end = param_or(params, "end", 3.0);
  const double tau = param_or(params, "tau", 1.0);
  if (tau <= 0.0) throw std::invalid_argument("make_noise_schedule: tau must be > 0");
  if (!(start < end)) throw std::invalid_argument("make_noise_schedule: start must be < end");
  params["start"] = start;
  params["end"] = end;
  params["tau"] = tau;
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  auto abar = [&](int t) {
    const double u = static_cast<double>(t) / static_cast<double>(T);
    return sig(-(u * (end - start) + start) / tau);
  };
  const double norm = abar(0);
  std::vector<double> betas(static_cast<size_t>(T));
  double prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double cur = abar(t) / norm;
    betas[static_cast<size_t>(t - 1)] = 1.0 - cur / prev;
    prev = cur;
  }
  return schedule_from_betas(kind, std::move(betas), std::move(params));
}

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
template <typename T>
Tensor<T> forward_marginal_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  if (!x0.same_shape(eps)) throw std::invalid_argument("forward_marginal_sample: shape mismatch");
  if (t < 1 || t > sched.total_steps) throw std::out_of_range("forward_marginal_sample: t out of range");
  const double ab = sched.alpha_bar(t);
  const T c0 = static_cast<T>(std::sqrt(ab));
  const T c1 = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = c0 * x0[i] + c1 * eps[i];
  return out;
}

enum class ReverseVariance { beta, identity };

// One DDPM reverse step:
// x_{t-1} = (x_t - beta_t/sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z.
// sigma_t^2 = beta_t by default; the identity option follows the alternative
// fixed-variance reading and is exposed for comparison.
template <typename T>
Tensor<T> ddpm_reverse_step(const Tensor<T>& x_t, int t, const Tensor<T>& eps_hat, const NoiseSchedule& sched,
                            const Tensor<T>& z, ReverseVariance variance = ReverseVariance::beta) {
  if (!x_t.same_shape(eps_hat) || !x_t.same_shape(z)) throw std::invalid_argument("ddpm_reverse_step: shape mismatch");
  if (t < 1 || t > sched.total_steps) throw std::out_of_range("ddpm_reverse_step: t out of range");
  const double beta = sched.beta(t);
  const double ab = sched.alpha_bar(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coeff = ab < 1.0 ? beta / std::sqrt(1.0 - ab) : 0.0;
  const double sigma = variance == ReverseVariance::beta ? std::sqrt(beta) : 1.0;
  Tensor<T> out(x_t.shape());
  const T a = static_cast<T>(inv_sqrt_alpha);
  const T b = static_cast<T>(inv_sqrt_alpha * eps_coeff);
  const T s = static_cast<T>(sigma);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x_t[i] - b * eps_hat[i] + s * z[i];
  return out;
}

// Mean squared error between the drawn and predicted noise, accumulated in
// double precision.
template <typename T>
double epsilon_loss(const Tensor<T>& eps, const Tensor<T>& eps_hat) {
  if (!eps.same_shape(eps_hat)) throw std::invalid_argument("epsilon_loss: shape mismatch");
  double acc = 0;
  for (int64_t i = 0; i < eps.numel(); ++i) {
    const double d = static_cast<double>(eps[i]) - static_cast<double>(eps_hat[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(eps.numel());
}

}  // namespace mfd
