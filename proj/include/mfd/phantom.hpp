#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfd/io.hpp"
#include "mfd/rng.hpp"
#include "mfd/tensor.hpp"
#include "mfd/warp.hpp"

namespace mfd {

// Annulus phantom with a radially contracting motion whose backward map is
// analytic: a point at radius r in the frame with phase s originated at
// radius r * (1 + a * s * w(r)) in the reference frame, where w falls
// smoothly from 1 inside the outer radius to 0 at the image half-extent.
struct PhantomParams {
  int height = 32;
  int width = 32;
  int frames = 9;  // T+1 including the reference
  double center_x = 16.0;
  double center_y = 16.0;
  double inner_radius = 7.0;
  double outer_radius = 10.0;
  double amplitude = 0.2;  // fractional radial change in [0, 0.5]
  std::vector<double> phase;  // per-frame contraction phase in [0,1]; filled with sin^2 when empty
  double level_background = 0.05;
  double level_blood = 0.35;
  double level_myo = 0.85;
  double dense_scale = 0.45;  // dense = dense_offset + dense_scale * cine + noise
  double dense_offset = 0.12;
  double noise_sigma = 0.08;
  double edge_width = 1.5;
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"height", height},
            {"width", width},
            {"frames", frames},
            {"center_x", center_x},
            {"center_y", center_y},
            {"inner_radius", inner_radius},
            {"outer_radius", outer_radius},
            {"amplitude", amplitude},
            {"phase", phase},
            {"level_background", level_background},
            {"level_blood", level_blood},
            {"level_myo", level_myo},
            {"dense_scale", dense_scale},
            {"dense_offset", dense_offset},
            {"noise_sigma", noise_sigma},
            {"edge_width", edge_width},
            {"seed", seed}};
  }

  static PhantomParams from_json(const nlohmann::json& j) {
    PhantomParams p;
    p.height = j.at("height");
    p.width = j.at("width");
    p.frames = j.at("frames");
    p.center_x = j.at("center_x");
    p.center_y = j.at("center_y");
    p.inner_radius = j.at("inner_radius");
    p.outer_radius = j.at("outer_radius");
    p.amplitude = j.at("amplitude");
    p.phase = j.at("phase").get<std::vector<double>>();
    p.level_background = j.at("level_background");
    p.level_blood = j.at("level_blood");
    p.level_myo = j.at("level_myo");
    p.dense_scale = j.at("dense_scale");
    p.dense_offset = j.at("dense_offset");
    p.noise_sigma = j.at("noise_sigma");
    p.edge_width = j.at("edge_width");
    p.seed = j.at("seed");
    return p;
  }
};

struct PairedSample {
  Tensor<double> cine;  // [T+1,H,W,1], clean high-contrast render
  Tensor<double> dense; // [T+1,H,W,1], contrast-remapped + noise
  Tensor<double> disp;  // [T,H,W,2], backward displacement to frame 0
  Tensor<double> mask;  // [T+1,H,W,1], annulus membership per frame
  PhantomParams params;
};

namespace phantom_detail {

inline double smoothstep(double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  return x * x * (3 - 2 * x);
}

// Falloff weight: 1 inside the outer radius, smooth decay to 0 at the
// half-extent of the image.
inline double falloff(const PhantomParams& p, double r) {
  const double r_edge = 0.5 * std::min(p.height, p.width);
  if (r <= p.outer_radius) return 1.0;
  if (r >= r_edge) return 0.0;
  return 1.0 - smoothstep((r - p.outer_radius) / (r_edge - p.outer_radius));
}

// Backward radial map to the reference frame at phase s.
inline double radius_to_reference(const PhantomParams& p, double r, double s) {
  return r * (1.0 + p.amplitude * s * falloff(p, r));
}

// Inverse of radius_to_reference by bisection; the map is validated strictly
// increasing, so this is safe.
inline double radius_from_reference(const PhantomParams& p, double r0, double s) {
  double lo = 0.0, hi = r0 + 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (radius_to_reference(p, mid, s) < r0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Radial intensity profile of the reference frame.
inline double intensity(const PhantomParams& p, double r) {
  const double e = p.edge_width;
  const double s_in = smoothstep((r - (p.inner_radius - e / 2)) / e);
  const double s_out = smoothstep((r - (p.outer_radius - e / 2)) / e);
  return p.level_blood + (p.level_myo - p.level_blood) * s_in + (p.level_background - p.level_myo) * s_out;
}

}  // namespace phantom_detail

inline std::vector<double> default_phase_profile(int frames) {
  std::vector<double> s(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    const double x = static_cast<double>(t) / static_cast<double>(frames - 1);
    s[static_cast<size_t>(t)] = std::sin(3.14159265358979323846 * x);
    s[static_cast<size_t>(t)] *= s[static_cast<size_t>(t)];
  }
  return s;
}

inline void validate_phantom_params(const PhantomParams& p) {
  if (p.height < 8 || p.width < 8 || p.frames < 2) throw std::invalid_argument("phantom: grid or frame count too small");
  if (!(p.inner_radius > 0 && p.inner_radius < p.outer_radius && p.outer_radius < 0.5 * std::min(p.height, p.width)))
    throw std::invalid_argument("phantom: need 0 < inner_radius < outer_radius < min(H,W)/2");
  if (p.amplitude < 0 || p.amplitude > 0.5) throw std::invalid_argument("phantom: amplitude outside [0, 0.5]");
  if (p.noise_sigma < 0) throw std::invalid_argument("phantom: negative noise level");
  if (!p.phase.empty() && static_cast<int>(p.phase.size()) != p.frames)
    throw std::invalid_argument("phantom: phase profile length must equal frame count");
  // the backward radial map must stay strictly increasing at peak phase
  double peak = 1.0;
  for (double s : p.phase) peak = std::max(peak, s);
  const double r_edge = 0.5 * std::min(p.height, p.width);
  double prev = 0.0;
  for (int i = 1; i <= 400; ++i) {
    const double r = r_edge * 1.2 * i / 400.0;
    const double m = phantom_detail::radius_to_reference(p, r, peak);
    if (m <= prev) throw std::invalid_argument("phantom: invalid geometry, radial map folds at this amplitude");
    prev = m;
  }
}

// Deterministic phantom generation. The cine sequence is the exact clean
// render; dense is a contrast-remapped copy with Gaussian noise, clamped to
// [0,1]; disp holds the analytic backward displacement field per moving frame.
inline PairedSample generate_sample(PhantomParams params) {
  if (params.phase.empty()) params.phase = default_phase_profile(params.frames);
  validate_phantom_params(params);
  const int F = params.frames, H = params.height, W = params.width;
  const int moving = F - 1;

  PairedSample out;
  out.params = params;
  out.cine = Tensor<double>({F, H, W, 1});
  out.dense = Tensor<double>({F, H, W, 1});
  out.disp = Tensor<double>({moving, H, W, 2});
  out.mask = Tensor<double>({F, H, W, 1});

  Rng noise_rng(params.seed, "phantom-noise");
  for (int t = 0; t < F; ++t) {
    const double s = params.phase[static_cast<size_t>(t)];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dx = x - params.center_x;
        const double dy = y - params.center_y;
        const double r = std::sqrt(dx * dx + dy * dy);
        const double r0 = phantom_detail::radius_to_reference(params, r, s);
        const double value = phantom_detail::intensity(params, r0);
        out.cine(t, y, x, 0) = std::clamp(value, 0.0, 1.0);
        out.mask(t, y, x, 0) = (r0 >= params.inner_radius && r0 <= params.outer_radius) ? 1.0 : 0.0;
        if (t >= 1) {
          const double ratio = r > 1e-9 ? r0 / r - 1.0 : 0.0;
          out.disp(t - 1, y, x, 0) = ratio * dx;
          out.disp(t - 1, y, x, 1) = ratio * dy;
        }
        double dv = params.dense_offset + params.dense_scale * out.cine(t, y, x, 0);
        if (params.noise_sigma > 0) dv += params.noise_sigma * noise_rng.gaussian();
        out.dense(t, y, x, 0) = std::clamp(dv, 0.0, 1.0);
      }
  }
  return out;
}

// Displacement of absolute frame tgt relative to absolute frame ref
// (ref < tgt), for window offsets where the reference is not frame 0.
inline Tensor<double> relative_displacement(const PhantomParams& params_in, int ref, int tgt) {
  PhantomParams params = params_in;
  if (params.phase.empty()) params.phase = default_phase_profile(params.frames);
  const int H = params.height, W = params.width;
  const double s_ref = params.phase.at(static_cast<size_t>(ref));
  const double s_tgt = params.phase.at(static_cast<size_t>(tgt));
  Tensor<double> u({1, H, W, 2});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double dx = x - params.center_x;
      const double dy = y - params.center_y;
      const double r = std::sqrt(dx * dx + dy * dy);
      double ratio = 0.0;
      if (r > 1e-9) {
        const double r0 = phantom_detail::radius_to_reference(params, r, s_tgt);
        const double r_in_ref = s_ref == 0.0 ? r0 : phantom_detail::radius_from_reference(params, r0, s_ref);
        ratio = r_in_ref / r - 1.0;
      }
      u(0, y, x, 0) = ratio * dx;
      u(0, y, x, 1) = ratio * dy;
    }
  return u;
}

// Signal-to-noise ratio against the known clean reference; +inf for an
// exactly clean sequence.
inline double snr_against_clean(const Tensor<double>& seq, const Tensor<double>& clean) {
  const double mean_clean = clean.mean();
  double sig = 0, noise = 0;
  for (int64_t i = 0; i < seq.numel(); ++i) {
    const double c = clean[i] - mean_clean;
    const double n = seq[i] - clean[i];
    sig += c * c;
    noise += n * n;
  }
  if (noise == 0) return std::numeric_limits<double>::infinity();
  return sig / noise;
}

struct DatasetRanges {
  double amplitude_min = 0.1;
  double amplitude_max = 0.3;
  double center_jitter = 1.0;
  double radius_jitter = 0.08;  // relative
  double noise_sigma = 0.08;

  nlohmann::json to_json() const {
    return {{"amplitude_min", amplitude_min},
            {"amplitude_max", amplitude_max},
            {"center_jitter", center_jitter},
            {"radius_jitter", radius_jitter},
            {"noise_sigma", noise_sigma}};
  }
  static DatasetRanges from_json(const nlohmann::json& j) {
    DatasetRanges r;
    r.amplitude_min = j.at("amplitude_min");
    r.amplitude_max = j.at("amplitude_max");
    r.center_jitter = j.at("center_jitter");
    r.radius_jitter = j.at("radius_jitter");
    r.noise_sigma = j.at("noise_sigma");
    return r;
  }
};

inline PhantomParams draw_phantom_params(int height, int width, int frames, const DatasetRanges& ranges,
                                         uint64_t global_seed, uint64_t index) {
  Rng rng(global_seed, "dataset-params", index);
  PhantomParams p;
  p.height = height;
  p.width = width;
  p.frames = frames;
  const double half = 0.5 * std::min(height, width);
  p.center_x = 0.5 * width + rng.uniform(-ranges.center_jitter, ranges.center_jitter);
  p.center_y = 0.5 * height + rng.uniform(-ranges.center_jitter, ranges.center_jitter);
  p.inner_radius = 0.44 * half * (1.0 + rng.uniform(-ranges.radius_jitter, ranges.radius_jitter));
  p.outer_radius = 0.64 * half * (1.0 + rng.uniform(-ranges.radius_jitter, ranges.radius_jitter));
  p.amplitude = rng.uniform(ranges.amplitude_min, ranges.amplitude_max);
  p.noise_sigma = ranges.noise_sigma;
  p.seed = derive_seed(global_seed, "dataset-sample", index);
  return p;
}

// Writes n samples plus a JSON manifest; fully regenerated by the same seed.
inline std::filesystem::path build_dataset(int n_samples, int height, int width, int frames,
                                           const DatasetRanges& ranges, const std::filesystem::path& out_dir,
                                           uint64_t global_seed) {
  if (n_samples < 1) throw std::invalid_argument("build_dataset: need at least one sample");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir)) throw std::runtime_error("build_dataset: cannot create " + out_dir.string());

  nlohmann::json manifest;
  manifest["n_samples"] = n_samples;
  manifest["global_seed"] = global_seed;
  manifest["height"] = height;
  manifest["width"] = width;
  manifest["frames"] = frames;
  manifest["ranges"] = ranges.to_json();
  manifest["samples"] = nlohmann::json::array();

  for (int i = 0; i < n_samples; ++i) {
    const PhantomParams p = draw_phantom_params(height, width, frames, ranges, global_seed, static_cast<uint64_t>(i));
    const PairedSample s = generate_sample(p);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d", i);
    const auto dir = out_dir / name;
    std::filesystem::create_directories(dir);
    write_tensor(dir / "cine.mvt", s.cine.cast<float>());
    write_tensor(dir / "dense.mvt", s.dense.cast<float>());
    write_tensor(dir / "disp.mvt", s.disp.cast<float>());
    write_tensor(dir / "mask.mvt", s.mask.cast<float>());
    nlohmann::json entry;
    entry["dir"] = name;
    entry["params"] = s.params.to_json();
    entry["hashes"] = {{"cine", file_hash(dir / "cine.mvt")},
                       {"dense", file_hash(dir / "dense.mvt")},
                       {"disp", file_hash(dir / "disp.mvt")},
                       {"mask", file_hash(dir / "mask.mvt")}};
    manifest["samples"].push_back(entry);
  }
  const auto mpath = out_dir / "manifest.json";
  detail::write_file(mpath, manifest.dump(2));
  return mpath;
}

struct LoadedSample {
  Tensor<float> cine, dense, disp, mask;
  PhantomParams params;
};

inline std::vector<LoadedSample> load_dataset(const std::filesystem::path& manifest_path) {
  const auto manifest = nlohmann::json::parse(detail::read_file(manifest_path));
  const auto root = manifest_path.parent_path();
  std::vector<LoadedSample> out;
  for (const auto& entry : manifest.at("samples")) {
    LoadedSample s;
    const auto dir = root / entry.at("dir").get<std::string>();
    s.cine = read_tensor<float>(dir / "cine.mvt");
    s.dense = read_tensor<float>(dir / "dense.mvt");
    s.disp = read_tensor<float>(dir / "disp.mvt");
    s.mask = read_tensor<float>(dir / "mask.mvt");
    s.params = PhantomParams::from_json(entry.at("params"));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mfd
