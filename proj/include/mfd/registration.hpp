#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfd/autodiff.hpp"
#include "mfd/io.hpp"
#include "mfd/nn.hpp"
#include "mfd/rng.hpp"
#include "mfd/schedule.hpp"
#include "mfd/warp.hpp"

namespace mfd {

// Per-head projection matrices for attention over latent frames. The [d,d]
// matrices are the h per-head d x (d/h) blocks concatenated along columns.
template <typename T>
struct AttentionHeads {
  int h = 1;
  Tensor<T> wq, wk, wv;
};

template <typename T>
void validate_image_sequence(const Tensor<T>& frames) {
  if (frames.rank() != 4 || frames.dim(3) != 1) throw std::invalid_argument("image sequence must be [T+1,H,W,1]");
  if (frames.dim(0) < 2) throw std::invalid_argument("image sequence needs at least two frames");
  if (!frames.all_finite()) throw std::invalid_argument("image sequence has non-finite values");
  if (frames.min() < T(0) || frames.max() > T(1)) throw std::invalid_argument("image sequence values must lie in [0,1]");
}

// Frame-level attention across time in the latent space: each frame's
// flattened latent is one token. Heads are concatenated; no output
// projection. scaled=false drops the 1/sqrt(d_h) softmax factor.
template <typename T>
Tensor<T> ltma_attention(const Tensor<T>& Z, const AttentionHeads<T>& heads, bool scaled = true,
                         Tensor<T>* probs_out = nullptr) {
  const int frames = Z.dim(0);
  const int d = static_cast<int>(Z.numel() / frames);
  if (heads.wq.dim(0) != d) throw std::invalid_argument("ltma_attention: projection size mismatch");
  if (d % heads.h != 0) throw std::invalid_argument("ltma_attention: dimension not divisible by head count");

  Graph<T> g;
  const int tokens = g.input(Z.reshaped({1, frames, d}));
  const int wq = g.input(heads.wq);
  const int wk = g.input(heads.wk);
  const int wv = g.input(heads.wv);
  if (probs_out) {
    // re-run the batched attention with the probability stash exposed
    const int dh = d / heads.h;
    auto project = [&](int w) {
      const int flat = g.reshape(tokens, {frames, d});
      const int proj = g.matmul(flat, w);
      return g.reshape(g.permute(g.reshape(proj, {1, frames, heads.h, dh}), {0, 2, 1, 3}), {heads.h, frames, dh});
    };
    const int q = project(wq), k = project(wk), v = project(wv);
    const T scale = scaled ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))) : T(1);
    const int att = g.attention(q, k, v, scale, probs_out);
    const int merged = g.permute(g.reshape(att, {1, heads.h, frames, dh}), {0, 2, 1, 3});
    return g.val(g.reshape(merged, {frames, d})).reshaped(Z.shape());
  }
  const int out = multihead_attention(g, tokens, tokens, wq, wk, wv, -1, heads.h, scaled);
  return g.val(out).reshaped(Z.shape());
}

// Eq-style registration loss from precomputed pieces: sum over frames of
// lambda * MSE(I0 o phi_t, I_t) plus the per-frame smoothness of v, plus
// weight decay on the network parameters.
template <typename T>
double registration_loss(const Tensor<T>& frames, const Tensor<T>& v, const Tensor<T>& phi, double lambda,
                         double weight_decay, double theta_sum_squares) {
  if (lambda <= 0) throw std::invalid_argument("registration_loss: lambda must be > 0");
  const int moving = frames.dim(0) - 1;
  if (v.dim(0) != moving || phi.dim(0) != moving) throw std::invalid_argument("registration_loss: frame count mismatch");
  const int H = frames.dim(1), W = frames.dim(2);

  Tensor<T> ref({moving, H, W, 1});
  Tensor<T> targets({moving, H, W, 1});
  for (int t = 0; t < moving; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        ref(t, y, x, 0) = frames(0, y, x, 0);
        targets(t, y, x, 0) = frames(t + 1, y, x, 0);
      }
  const Tensor<T> warped = warp_forward(ref, phi);
  double sim = 0;
  for (int64_t i = 0; i < warped.numel(); ++i) {
    const double dd = static_cast<double>(warped[i]) - static_cast<double>(targets[i]);
    sim += dd * dd;
  }
  sim /= static_cast<double>(H) * W;  // sum over frames of per-frame MSE

  double smooth = 0;
  const double ndiff = static_cast<double>((static_cast<int64_t>(H - 1) * W + static_cast<int64_t>(H) * (W - 1)) * 2);
  for (int t = 0; t < moving; ++t) {
    double acc = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 2; ++c) {
          if (y + 1 < H) {
            const double d2 = static_cast<double>(v(t, y + 1, x, c)) - static_cast<double>(v(t, y, x, c));
            acc += d2 * d2;
          }
          if (x + 1 < W) {
            const double d2 = static_cast<double>(v(t, y, x + 1, c)) - static_cast<double>(v(t, y, x, c));
            acc += d2 * d2;
          }
        }
    smooth += acc / ndiff;
  }
  return lambda * sim + smooth + weight_decay * theta_sum_squares;
}

struct RegistrationConfig {
  int height = 64;
  int width = 64;
  std::vector<int> enc_channels = {16, 32};
  int heads = 2;
  bool use_ltma = true;
  bool scaled_attention = true;
  int num_squarings = 7;
  double lambda = 10.0;
  double weight_decay = 1e-5;

  int stages() const { return static_cast<int>(enc_channels.size()); }
  int factor() const { return 1 << stages(); }
  int latent_h() const { return height / factor(); }
  int latent_w() const { return width / factor(); }
  int latent_c() const { return enc_channels.back(); }
  int token_dim() const { return latent_h() * latent_w() * latent_c(); }

  nlohmann::json to_json() const {
    return {{"height", height},       {"width", width},
            {"enc_channels", enc_channels}, {"heads", heads},
            {"use_ltma", use_ltma},   {"scaled_attention", scaled_attention},
            {"num_squarings", num_squarings}, {"lambda", lambda},
            {"weight_decay", weight_decay}};
  }
  static RegistrationConfig from_json(const nlohmann::json& j) {
    RegistrationConfig c;
    c.height = j.at("height");
    c.width = j.at("width");
    c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
    c.heads = j.at("heads");
    c.use_ltma = j.at("use_ltma");
    c.scaled_attention = j.at("scaled_attention");
    c.num_squarings = j.at("num_squarings");
    c.lambda = j.at("lambda");
    c.weight_decay = j.at("weight_decay");
    return c;
  }
};

struct RegTrainOptions {
  int epochs = 100;
  double lr = 1e-3;
  uint64_t seed = 0;
};

// Temporal diffeomorphic registration: per-frame conv encoder over
// (reference, moving) pairs, attention across latent frames, conv decoder
// to stationary velocity fields, scaling-and-squaring to transformations.
template <typename T>
class RegistrationNet {
 public:
  explicit RegistrationNet(RegistrationConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.height % cfg_.factor() != 0 || cfg_.width % cfg_.factor() != 0)
      throw std::invalid_argument("registration: spatial size not divisible by the downsampling factor");
    if (cfg_.token_dim() % cfg_.heads != 0)
      throw std::invalid_argument("registration: latent dimension not divisible by head count");
  }

  const RegistrationConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  void init_params(uint64_t seed) {
    Rng rng(seed, "reg-init");
    int cin = 2;
    for (int i = 0; i < cfg_.stages(); ++i) {
      const int cout = cfg_.enc_channels[static_cast<size_t>(i)];
      store_.create(enc_w(i), he_normal<T>(rng, {1, 3, 3, cin, cout}, 9 * cin));
      store_.create(enc_b(i), Tensor<T>::zeros({cout}));
      cin = cout;
    }
    const int d = cfg_.token_dim();
    if (cfg_.use_ltma) {
      const double s = 1.0 / std::sqrt(static_cast<double>(d));
      store_.create("ltma.wq", rng.gaussian_tensor<T>({d, d}, s));
      store_.create("ltma.wk", rng.gaussian_tensor<T>({d, d}, s));
      store_.create("ltma.wv", rng.gaussian_tensor<T>({d, d}, s));
    }
    int c = cfg_.latent_c();
    for (int i = 0; i < cfg_.stages(); ++i) {
      const int cout = cfg_.enc_channels[static_cast<size_t>(std::max(0, cfg_.stages() - 2 - i))];
      store_.create(dec_w(i), he_normal<T>(rng, {1, 3, 3, c, cout}, 9 * c));
      store_.create(dec_b(i), Tensor<T>::zeros({cout}));
      c = cout;
    }
    store_.create("dec.out.w", Tensor<T>::zeros({1, 3, 3, c, 2}));
    store_.create("dec.out.b", Tensor<T>::zeros({2}));
  }

  AttentionHeads<T> attention_heads() const {
    return AttentionHeads<T>{cfg_.heads, store_.get("ltma.wq"), store_.get("ltma.wk"), store_.get("ltma.wv")};
  }

  // ---- graph builders -------------------------------------------------

  int build_encode(Graph<T>& g, Binder<T>& bind, int pairs) const {
    int x = pairs;
    for (int i = 0; i < cfg_.stages(); ++i) x = g.relu(g.conv3d(x, bind(enc_w(i)), bind(enc_b(i)), 2));
    return x;
  }

  int build_ltma(Graph<T>& g, Binder<T>& bind, int z) const {
    if (!cfg_.use_ltma) return z;
    const auto& zs = g.val(z).shape();
    const int frames = zs[0];
    const int d = cfg_.token_dim();
    const int tokens = g.reshape(z, {1, frames, d});
    const int out = multihead_attention(g, tokens, tokens, bind("ltma.wq"), bind("ltma.wk"), bind("ltma.wv"), -1,
                                        cfg_.heads, cfg_.scaled_attention);
    return g.reshape(out, zs);
  }

  int build_decode(Graph<T>& g, Binder<T>& bind, int zhat, bool linear_mode = false) const {
    int x = zhat;
    for (int i = 0; i < cfg_.stages(); ++i) {
      x = g.conv3d(g.upsample2x(x), bind(dec_w(i)), bind(dec_b(i)), 1);
      if (!linear_mode) x = g.relu(x);
    }
    return g.conv3d(x, bind("dec.out.w"), bind("dec.out.b"), 1);
  }

  int build_integrate(Graph<T>& g, int v) const {
    const auto& vs = g.val(v).shape();
    const int id = g.input(identity_grid<T>(vs[0], vs[1], vs[2]));
    int u = g.scale(v, static_cast<T>(1.0 / std::pow(2.0, cfg_.num_squarings)));
    for (int k = 0; k < cfg_.num_squarings; ++k) {
      const int phi = g.add(id, u);
      u = g.add(g.warp(u, phi), u);
    }
    return g.add(id, u);  // phi
  }

  struct LossNodes {
    int v = -1, phi = -1, loss = -1, similarity = -1, smoothness = -1;
  };

  LossNodes build_loss(Graph<T>& g, Binder<T>& bind, const Tensor<T>& frames) const {
    const int moving = frames.dim(0) - 1;
    const int z = build_encode(g, bind, g.input(make_pairs(frames)));
    const int zhat = build_ltma(g, bind, z);
    LossNodes nodes;
    nodes.v = build_decode(g, bind, zhat);
    nodes.phi = build_integrate(g, nodes.v);

    const int H = frames.dim(1), W = frames.dim(2);
    Tensor<T> ref({moving, H, W, 1}), targets({moving, H, W, 1});
    for (int t = 0; t < moving; ++t)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          ref(t, y, x, 0) = frames(0, y, x, 0);
          targets(t, y, x, 0) = frames(t + 1, y, x, 0);
        }
    const int warped = g.warp(g.input(std::move(ref)), nodes.phi);
    nodes.similarity = g.mse(warped, g.input(std::move(targets)));
    nodes.smoothness = g.smoothness_penalty(nodes.v);
    const int wsum = bind.sum_squares_node();
    // mean MSE over the stack times T recovers the per-frame sum
    nodes.loss = g.sum_list({nodes.similarity, nodes.smoothness, wsum},
                            {static_cast<T>(cfg_.lambda * moving), T(1), static_cast<T>(cfg_.weight_decay)});
    return nodes;
  }

  // ---- tensor-level operations ----------------------------------------

  Tensor<T> encode_sequence(const Tensor<T>& frames) const {
    validate_image_sequence(frames);
    Graph<T> g;
    Binder<T> bind(g, mutable_store(), false);
    return g.val(build_encode(g, bind, g.input(make_pairs(frames))));
  }

  Tensor<T> apply_ltma(const Tensor<T>& z) const {
    Graph<T> g;
    Binder<T> bind(g, mutable_store(), false);
    return g.val(build_ltma(g, bind, g.input(z)));
  }

  Tensor<T> decode_velocity(const Tensor<T>& zhat, bool linear_mode = false) const {
    Graph<T> g;
    Binder<T> bind(g, mutable_store(), false);
    return g.val(build_decode(g, bind, g.input(zhat), linear_mode));
  }

  // Full pipeline to the displacement field u = phi - id, [T,H,W,2].
  Tensor<T> predict_displacement(const Tensor<T>& frames) const {
    validate_image_sequence(frames);
    Graph<T> g;
    Binder<T> bind(g, mutable_store(), false);
    const int z = build_encode(g, bind, g.input(make_pairs(frames)));
    const int v = build_decode(g, bind, build_ltma(g, bind, z));
    const int phi = build_integrate(g, v);
    return displacement_from_transform(g.val(phi));
  }

  double evaluate_loss(const Tensor<T>& frames) const {
    Graph<T> g;
    Binder<T> bind(g, mutable_store(), false);
    return static_cast<double>(g.val(build_loss(g, bind, frames).loss)[0]);
  }

  // ---- training --------------------------------------------------------

  std::vector<double> train(const std::vector<Tensor<T>>& sequences, const RegTrainOptions& opt) {
    if (sequences.empty()) throw std::invalid_argument("train_registration: empty dataset");
    for (const auto& s : sequences) validate_image_sequence(s);
    std::vector<double> epoch_losses;
    typename ParamStore<T>::AdamConfig adam;
    adam.lr = opt.lr;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
      Rng order_rng(opt.seed, "reg-epoch", static_cast<uint64_t>(epoch));
      std::vector<size_t> order(sequences.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(order_rng.uniform_int(static_cast<int64_t>(i)))]);

      double total = 0;
      for (size_t idx : order) {
        Graph<T> g;
        Binder<T> bind(g, store_, true);
        const auto nodes = build_loss(g, bind, sequences[idx]);
        const double loss = static_cast<double>(g.val(nodes.loss)[0]);
        if (!std::isfinite(loss))
          throw std::runtime_error("train_registration: non-finite loss at epoch " + std::to_string(epoch));
        g.backward(nodes.loss);
        store_.adam_step(bind.grads(), adam);
        total += loss;
      }
      epoch_losses.push_back(total / static_cast<double>(sequences.size()));
    }
    return epoch_losses;
  }

  // ---- checkpointing ---------------------------------------------------

  void save_checkpoint(const std::filesystem::path& path, uint64_t seed, int epoch,
                       const std::vector<double>& loss_curve) const {
    Archive ar;
    nlohmann::json manifest;
    manifest["type"] = "registration";
    manifest["config"] = cfg_.to_json();
    manifest["seed"] = seed;
    manifest["epoch"] = epoch;
    manifest["loss_curve"] = loss_curve;
    ar.add_text("manifest.json", manifest.dump(2));
    store_.save(ar, "reg/");
    ar.save(path);
  }

  static RegistrationNet load_checkpoint(const std::filesystem::path& path) {
    const Archive ar = Archive::load(path);
    const auto manifest = nlohmann::json::parse(ar.payload("manifest.json"));
    RegistrationNet net(RegistrationConfig::from_json(manifest.at("config")));
    net.init_params(0);
    net.store_.load(ar, "reg/");
    return net;
  }

  static Tensor<T> make_pairs(const Tensor<T>& frames) {
    const int moving = frames.dim(0) - 1;
    const int H = frames.dim(1), W = frames.dim(2);
    Tensor<T> pairs({moving, H, W, 2});
    for (int t = 0; t < moving; ++t)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          pairs(t, y, x, 0) = frames(0, y, x, 0);
          pairs(t, y, x, 1) = frames(t + 1, y, x, 0);
        }
    return pairs;
  }

 private:
  static std::string enc_w(int i) { return "enc.conv" + std::to_string(i) + ".w"; }
  static std::string enc_b(int i) { return "enc.conv" + std::to_string(i) + ".b"; }
  static std::string dec_w(int i) { return "dec.conv" + std::to_string(i) + ".w"; }
  static std::string dec_b(int i) { return "dec.conv" + std::to_string(i) + ".b"; }

  ParamStore<T>& mutable_store() const { return const_cast<RegistrationNet*>(this)->store_; }

  RegistrationConfig cfg_;
  ParamStore<T> store_;
};

}  // namespace mfd
