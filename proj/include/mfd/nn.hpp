#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfd/autodiff.hpp"
#include "mfd/io.hpp"
#include "mfd/rng.hpp"
#include "mfd/tensor.hpp"

namespace mfd {

// Named parameters plus Adam moment state. Values are copied into each
// step's graph as leaves and updated here after backward.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    index_[name] = values_.size();
    order_.push_back(name);
    values_.push_back(std::move(init));
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return values_[it->second];
  }
  const Tensor<T>& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

  const std::vector<std::string>& names() const { return order_; }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  double sum_squares() const {
    double acc = 0;
    for (const auto& v : values_)
      for (int64_t i = 0; i < v.numel(); ++i) acc += static_cast<double>(v[i]) * static_cast<double>(v[i]);
    return acc;
  }

  struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  void adam_step(const std::map<std::string, Tensor<T>>& grads, const AdamConfig& cfg) {
    if (m_.empty()) {
      m_.resize(values_.size());
      v_.resize(values_.size());
      for (size_t i = 0; i < values_.size(); ++i) {
        m_[i] = Tensor<T>::zeros(values_[i].shape());
        v_[i] = Tensor<T>::zeros(values_[i].shape());
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step_);
    for (const auto& [name, g] : grads) {
      const size_t i = index_.at(name);
      Tensor<T>& w = values_[i];
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < w.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
        const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] -= static_cast<T>(cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
      }
    }
  }

  void save(Archive& ar, const std::string& prefix = "") const {
    for (const auto& name : order_) ar.add_tensor(prefix + name, values_[index_.at(name)]);
  }

  void load(const Archive& ar, const std::string& prefix = "") {
    for (const auto& name : order_) get(name) = ar.tensor<T>(prefix + name);
  }

 private:
  std::map<std::string, size_t> index_;
  std::vector<std::string> order_;
  std::vector<Tensor<T>> values_;
  std::vector<Tensor<T>> m_, v_;
  int step_ = 0;
};

// Copies parameters into a graph, remembering the leaf ids so gradients can
// be read back by name. In inference mode parameters enter as plain inputs
// and the tape records no backward work.
template <typename T>
class Binder {
 public:
  Binder(Graph<T>& g, ParamStore<T>& store, bool trainable) : g_(&g), store_(&store), trainable_(trainable) {}

  int operator()(const std::string& name) {
    const int id = trainable_ ? g_->param(store_->get(name)) : g_->input(store_->get(name));
    bound_.emplace_back(name, id);
    return id;
  }

  bool trainable() const { return trainable_; }
  ParamStore<T>& store() { return *store_; }

  // Per-name gradients after backward; repeated bindings accumulate.
  std::map<std::string, Tensor<T>> grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : bound_) {
      const Tensor<T>& g = g_->grad(id);
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, g);
      } else {
        for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
      }
    }
    return out;
  }

  // Scalar node for the weight-decay term over every bound parameter.
  int sum_squares_node() {
    std::vector<int> terms;
    std::vector<T> coeffs;
    for (const auto& [name, id] : bound_) {
      terms.push_back(g_->sum_sq(id));
      coeffs.push_back(T(1));
    }
    return g_->sum_list(terms, coeffs);
  }

 private:
  Graph<T>* g_;
  ParamStore<T>* store_;
  bool trainable_;
  std::vector<std::pair<std::string, int>> bound_;
};

template <typename T>
Tensor<T> he_normal(Rng& rng, std::vector<int> shape, int64_t fan_in) {
  return rng.gaussian_tensor<T>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

// Multi-head attention over token matrices. q_tokens: [B,n,dq],
// kv_tokens: [B,m,dk]; wq [dq,da], wk/wv [dk,da], optional wo [da,dout].
// Heads are column blocks of the projection matrices; outputs are
// concatenated head results (then projected when wo is given).
template <typename T>
int multihead_attention(Graph<T>& g, int q_tokens, int kv_tokens, int wq, int wk, int wv, int wo, int heads,
                        bool scaled) {
  const auto& qs = g.val(q_tokens).shape();
  const auto& ks = g.val(kv_tokens).shape();
  const int B = qs[0], n = qs[1], dq = qs[2];
  const int m = ks[1];
  const int da = g.val(wq).shape()[1];
  if (da % heads != 0) throw std::invalid_argument("multihead_attention: dimension not divisible by head count");
  const int dh = da / heads;

  auto project = [&](int tokens, int rows, int w, int dim_in) {
    const int flat = g.reshape(tokens, {B * rows, dim_in});
    const int proj = g.matmul(flat, w);
    const int split = g.reshape(proj, {B, rows, heads, dh});
    return g.reshape(g.permute(split, {0, 2, 1, 3}), {B * heads, rows, dh});
  };

  const int q = project(q_tokens, n, wq, dq);
  const int k = project(kv_tokens, m, wk, ks[2]);
  const int v = project(kv_tokens, m, wv, ks[2]);

  const T scale = scaled ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))) : T(1);
  const int att = g.attention(q, k, v, scale);

  const int merged = g.permute(g.reshape(att, {B, heads, n, dh}), {0, 2, 1, 3});
  const int concat = g.reshape(merged, {B * n, da});
  if (wo < 0) return g.reshape(concat, {B, n, da});
  const int dout = g.val(wo).shape()[1];
  return g.reshape(g.matmul(concat, wo), {B, n, dout});
}

}  // namespace mfd
