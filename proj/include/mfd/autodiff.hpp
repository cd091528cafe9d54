#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mfd/attention.hpp"
#include "mfd/conv.hpp"
#include "mfd/tensor.hpp"
#include "mfd/warp.hpp"

namespace mfd {

template <typename T>
Tensor<T> tensor_permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw std::invalid_argument("permute: axis count mismatch");
  std::vector<int> oshape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) oshape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  std::vector<int64_t> xstr(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) xstr[static_cast<size_t>(i)] = xstr[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  std::vector<int64_t> step(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) step[static_cast<size_t>(i)] = xstr[static_cast<size_t>(axes[static_cast<size_t>(i)])];

  Tensor<T> out(oshape);
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t xoff = 0;
  for (int64_t o = 0; o < out.numel(); ++o) {
    out[o] = x[xoff];
    for (int i = r - 1; i >= 0; --i) {
      ++idx[static_cast<size_t>(i)];
      xoff += step[static_cast<size_t>(i)];
      if (idx[static_cast<size_t>(i)] < oshape[static_cast<size_t>(i)]) break;
      xoff -= step[static_cast<size_t>(i)] * oshape[static_cast<size_t>(i)];
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  return out;
}

inline std::vector<int> inverse_axes(const std::vector<int>& axes) {
  std::vector<int> inv(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
  return inv;
}

// Reverse-mode tape. Values are computed eagerly as ops are recorded;
// backward() replays the tape in reverse. A fresh graph is built per
// training step; parameters live outside and enter via param().
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int input(Tensor<T> v) { return add_node(std::move(v), false); }
  int param(Tensor<T> v) { return add_node(std::move(v), true); }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  size_t size() const { return nodes_.size(); }

  int add(int a, int b) { return add_scaled(a, b, T(1), T(1)); }
  int sub(int a, int b) { return add_scaled(a, b, T(1), T(-1)); }

  int add_scaled(int a, int b, T ca, T cb) {
    const Tensor<T>&va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch " + Tensor<T>::shape_str(va.shape()) + " vs " + Tensor<T>::shape_str(vb.shape()));
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ca * va[i] + cb * vb[i];
    const int id = add_node(std::move(out), any_grad({a, b}));
    if (needs_grad(id))
      set_backward(id, [this, id, a, b, ca, cb] {
        const Tensor<T>& g = grad(id);
        if (needs_grad(a)) axpy(mutable_grad(a), g, ca);
        if (needs_grad(b)) axpy(mutable_grad(b), g, cb);
      });
    return id;
  }

  int mul(int a, int b) {
    const Tensor<T>&va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    const int id = add_node(std::move(out), any_grad({a, b}));
    if (needs_grad(id))
      set_backward(id, [this, id, a, b] {
        const Tensor<T>& g = grad(id);
        if (needs_grad(a)) {
          Tensor<T>& ga = mutable_grad(a);
          const Tensor<T>& vb2 = val(b);
          for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
        }
        if (needs_grad(b)) {
          Tensor<T>& gb = mutable_grad(b);
          const Tensor<T>& va2 = val(a);
          for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va2[i];
        }
      });
    return id;
  }

  int scale(int a, T c) {
    Tensor<T> out(val(a).shape());
    const Tensor<T>& va = val(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c * va[i];
    const int id = add_node(std::move(out), needs_grad(a));
    if (needs_grad(id))
      set_backward(id, [this, id, a, c] { axpy(mutable_grad(a), grad(id), c); });
    return id;
  }

  int relu(int a) {
    const Tensor<T>& va = val(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] > T(0) ? va[i] : T(0);
    const int id = add_node(std::move(out), needs_grad(a));
    if (needs_grad(id))
      set_backward(id, [this, id, a] {
        const Tensor<T>& g = grad(id);
        const Tensor<T>& va2 = val(a);
        Tensor<T>& ga = mutable_grad(a);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (va2[i] > T(0)) ga[i] += g[i];
      });
    return id;
  }

  // [m,k] x [k,n] -> [m,n]
  int matmul(int a, int b) {
    const Tensor<T>&A = val(a), &B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) throw std::invalid_argument("matmul: bad shapes");
    const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor<T> out({m, n});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      T* orow = out.data() + static_cast<int64_t>(i) * n;
      const T* arow = A.data() + static_cast<int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = B.data() + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    const int id = add_node(std::move(out), any_grad({a, b}));
    if (needs_grad(id))
      set_backward(id, [this, id, a, b, m, k, n] {
        const Tensor<T>& g = grad(id);
        if (needs_grad(a)) {
          Tensor<T>& ga = mutable_grad(a);
          const Tensor<T>& B2 = val(b);
#pragma omp parallel for schedule(static)
          for (int i = 0; i < m; ++i) {
            T* garow = ga.data() + static_cast<int64_t>(i) * k;
            const T* grow = g.data() + static_cast<int64_t>(i) * n;
            for (int p = 0; p < k; ++p) {
              const T* brow = B2.data() + static_cast<int64_t>(p) * n;
              T acc = T(0);
              for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
              garow[p] += acc;
            }
          }
        }
        if (needs_grad(b)) {
          Tensor<T>& gb = mutable_grad(b);
          const Tensor<T>& A2 = val(a);
#pragma omp parallel for schedule(static)
          for (int p = 0; p < k; ++p) {
            T* gbrow = gb.data() + static_cast<int64_t>(p) * n;
            for (int i = 0; i < m; ++i) {
              const T av = A2.data()[static_cast<int64_t>(i) * k + p];
              const T* grow = g.data() + static_cast<int64_t>(i) * n;
              for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      });
    return id;
  }

  // x [..., D] + v [D], broadcast over leading dims.
  int add_lastdim(int x, int v) {
    const Tensor<T>&vx = val(x), &vv = val(v);
    const int D = vx.dim(vx.rank() - 1);
    if (vv.rank() != 1 || vv.dim(0) != D) throw std::invalid_argument("add_lastdim: vector shape mismatch");
    Tensor<T> out(vx.shape());
    const int64_t rows = vx.numel() / D;
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < D; ++c) out[r * D + c] = vx[r * D + c] + vv[c];
    const int id = add_node(std::move(out), any_grad({x, v}));
    if (needs_grad(id))
      set_backward(id, [this, id, x, v, D, rows] {
        const Tensor<T>& g = grad(id);
        if (needs_grad(x)) axpy(mutable_grad(x), g, T(1));
        if (needs_grad(v)) {
          Tensor<T>& gv = mutable_grad(v);
          for (int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < D; ++c) gv[c] += g[r * D + c];
        }
      });
    return id;
  }

  int permute(int x, std::vector<int> axes) {
    Tensor<T> out = tensor_permute(val(x), axes);
    const int id = add_node(std::move(out), needs_grad(x));
    if (needs_grad(id))
      set_backward(id, [this, id, x, axes] {
        Tensor<T> gx = tensor_permute(grad(id), inverse_axes(axes));
        axpy(mutable_grad(x), gx, T(1));
      });
    return id;
  }

  int reshape(int x, std::vector<int> shape) {
    Tensor<T> out = val(x).reshaped(std::move(shape));
    const int id = add_node(std::move(out), needs_grad(x));
    if (needs_grad(id))
      set_backward(id, [this, id, x] {
        const Tensor<T>& g = grad(id);
        Tensor<T>& gx = mutable_grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
      });
    return id;
  }

  int slice_lastdim(int x, int from, int len) {
    const Tensor<T>& vx = val(x);
    const int D = vx.dim(vx.rank() - 1);
    if (from < 0 || from + len > D) throw std::invalid_argument("slice_lastdim: out of range");
    std::vector<int> oshape = vx.shape();
    oshape.back() = len;
    Tensor<T> out(oshape);
    const int64_t rows = vx.numel() / D;
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < len; ++c) out[r * len + c] = vx[r * D + from + c];
    const int id = add_node(std::move(out), needs_grad(x));
    if (needs_grad(id))
      set_backward(id, [this, id, x, from, len, D, rows] {
        const Tensor<T>& g = grad(id);
        Tensor<T>& gx = mutable_grad(x);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < len; ++c) gx[r * D + from + c] += g[r * len + c];
      });
    return id;
  }

  int concat_lastdim(int a, int b) {
    const Tensor<T>&va = val(a), &vb = val(b);
    if (va.rank() != vb.rank()) throw std::invalid_argument("concat_lastdim: rank mismatch");
    for (int i = 0; i + 1 < va.rank(); ++i)
      if (va.dim(i) != vb.dim(i)) throw std::invalid_argument("concat_lastdim: leading shape mismatch");
    const int Da = va.dim(va.rank() - 1), Db = vb.dim(vb.rank() - 1);
    std::vector<int> oshape = va.shape();
    oshape.back() = Da + Db;
    Tensor<T> out(oshape);
    const int64_t rows = va.numel() / Da;
    for (int64_t r = 0; r < rows; ++r) {
      for (int c = 0; c < Da; ++c) out[r * (Da + Db) + c] = va[r * Da + c];
      for (int c = 0; c < Db; ++c) out[r * (Da + Db) + Da + c] = vb[r * Db + c];
    }
    const int id = add_node(std::move(out), any_grad({a, b}));
    if (needs_grad(id))
      set_backward(id, [this, id, a, b, Da, Db, rows] {
        const Tensor<T>& g = grad(id);
        if (needs_grad(a)) {
          Tensor<T>& ga = mutable_grad(a);
          for (int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < Da; ++c) ga[r * Da + c] += g[r * (Da + Db) + c];
        }
        if (needs_grad(b)) {
          Tensor<T>& gb = mutable_grad(b);
          for (int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < Db; ++c) gb[r * Db + c] += g[r * (Da + Db) + Da + c];
        }
      });
    return id;
  }

  // x [T,H,W,Ci], w [kt,kh,kw,Ci,Co], optional bias [Co]; spatial stride 1 or 2.
  int conv3d(int x, int w, int bias, int stride) {
    const Tensor<T>* bp = bias >= 0 ? &val(bias) : nullptr;
    Tensor<T> out = conv3d_forward(val(x), val(w), bp, stride);
    const bool ng = any_grad({x, w}) || (bias >= 0 && needs_grad(bias));
    const int id = add_node(std::move(out), ng);
    if (needs_grad(id))
      set_backward(id, [this, id, x, w, bias, stride] {
        Tensor<T>* dx = needs_grad(x) ? &mutable_grad(x) : nullptr;
        Tensor<T>* dw = needs_grad(w) ? &mutable_grad(w) : nullptr;
        Tensor<T>* db = (bias >= 0 && needs_grad(bias)) ? &mutable_grad(bias) : nullptr;
        conv3d_backward(val(x), val(w), stride, grad(id), dx, dw, db);
      });
    return id;
  }

  // Nearest-neighbor 2x spatial upsampling of [T,H,W,C].
  int upsample2x(int x) {
    const Tensor<T>& vx = val(x);
    const int Tn = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
    Tensor<T> out({Tn, 2 * H, 2 * W, C});
    for (int t = 0; t < Tn; ++t)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx) {
          const T* src = vx.data() + (((static_cast<int64_t>(t) * H + y / 2) * W + xx / 2) * C);
          T* dst = out.data() + (((static_cast<int64_t>(t) * 2 * H + y) * 2 * W + xx) * C);
          for (int c = 0; c < C; ++c) dst[c] = src[c];
        }
    const int id = add_node(std::move(out), needs_grad(x));
    if (needs_grad(id))
      set_backward(id, [this, id, x, Tn, H, W, C] {
        const Tensor<T>& g = grad(id);
        Tensor<T>& gx = mutable_grad(x);
        for (int t = 0; t < Tn; ++t)
          for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx) {
              const T* grow = g.data() + (((static_cast<int64_t>(t) * 2 * H + y) * 2 * W + xx) * C);
              T* dst = gx.data() + (((static_cast<int64_t>(t) * H + y / 2) * W + xx / 2) * C);
              for (int c = 0; c < C; ++c) dst[c] += grow[c];
            }
      });
    return id;
  }

  // Bilinear warp of img [T,H,W,C] at absolute coords [T,Ho,Wo,2].
  int warp(int img, int coords) {
    Tensor<T> out = warp_forward(val(img), val(coords));
    const int id = add_node(std::move(out), any_grad({img, coords}));
    if (needs_grad(id))
      set_backward(id, [this, id, img, coords] {
        Tensor<T>* dimg = needs_grad(img) ? &mutable_grad(img) : nullptr;
        Tensor<T>* dcoords = needs_grad(coords) ? &mutable_grad(coords) : nullptr;
        warp_backward(val(img), val(coords), grad(id), dimg, dcoords);
      });
    return id;
  }

  // Batched softmax attention; q [B,n,d], k [B,m,d], v [B,m,e].
  int attention(int q, int k, int v, T scale, Tensor<T>* probs_out = nullptr) {
    auto probs = std::make_shared<Tensor<T>>();
    Tensor<T> out = attention_forward(val(q), val(k), val(v), scale, probs.get());
    if (probs_out) *probs_out = *probs;
    const int id = add_node(std::move(out), any_grad({q, k, v}));
    if (needs_grad(id))
      set_backward(id, [this, id, q, k, v, scale, probs] {
        Tensor<T>* dq = needs_grad(q) ? &mutable_grad(q) : nullptr;
        Tensor<T>* dk = needs_grad(k) ? &mutable_grad(k) : nullptr;
        Tensor<T>* dv = needs_grad(v) ? &mutable_grad(v) : nullptr;
        attention_backward(val(q), val(k), val(v), *probs, grad(id), scale, dq, dk, dv);
      });
    return id;
  }

  // Mean squared error over all elements -> scalar node.
  int mse(int a, int b) {
    const Tensor<T>&va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("mse: shape mismatch");
    double acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) {
      const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
      acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(va.numel())));
    const int id = add_node(std::move(out), any_grad({a, b}));
    if (needs_grad(id))
      set_backward(id, [this, id, a, b] {
        const T g = grad(id)[0];
        const Tensor<T>&va2 = val(a), &vb2 = val(b);
        const T c = g * T(2) / static_cast<T>(va2.numel());
        if (needs_grad(a)) {
          Tensor<T>& ga = mutable_grad(a);
          for (int64_t i = 0; i < va2.numel(); ++i) ga[i] += c * (va2[i] - vb2[i]);
        }
        if (needs_grad(b)) {
          Tensor<T>& gb = mutable_grad(b);
          for (int64_t i = 0; i < va2.numel(); ++i) gb[i] -= c * (va2[i] - vb2[i]);
        }
      });
    return id;
  }

  int sum_sq(int a) {
    const Tensor<T>& va = val(a);
    double acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) acc += static_cast<double>(va[i]) * static_cast<double>(va[i]);
    const int id = add_node(Tensor<T>::scalar(static_cast<T>(acc)), needs_grad(a));
    if (needs_grad(id))
      set_backward(id, [this, id, a] {
        const T g = grad(id)[0];
        const Tensor<T>& va2 = val(a);
        Tensor<T>& ga = mutable_grad(a);
        for (int64_t i = 0; i < va2.numel(); ++i) ga[i] += g * T(2) * va2[i];
      });
    return id;
  }

  // Sum over frames of the per-frame mean of squared forward differences
  // (both spatial directions pooled); the smoothness term for velocity fields.
  int smoothness_penalty(int v) {
    const Tensor<T>& x = val(v);
    const int Tn = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const double ndiff = static_cast<double>((static_cast<int64_t>(H - 1) * W + static_cast<int64_t>(H) * (W - 1)) * C);
    double total = 0;
    for (int t = 0; t < Tn; ++t) {
      double acc = 0;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          for (int c = 0; c < C; ++c) {
            if (y + 1 < H) {
              const double d = static_cast<double>(x(t, y + 1, xx, c)) - static_cast<double>(x(t, y, xx, c));
              acc += d * d;
            }
            if (xx + 1 < W) {
              const double d = static_cast<double>(x(t, y, xx + 1, c)) - static_cast<double>(x(t, y, xx, c));
              acc += d * d;
            }
          }
      total += acc / ndiff;
    }
    const int id = add_node(Tensor<T>::scalar(static_cast<T>(total)), needs_grad(v));
    if (needs_grad(id))
      set_backward(id, [this, id, v, Tn, H, W, C, ndiff] {
        const T g = grad(id)[0];
        const Tensor<T>& x2 = val(v);
        Tensor<T>& gv = mutable_grad(v);
        const T c2 = g * T(2) / static_cast<T>(ndiff);
        for (int t = 0; t < Tn; ++t)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
              for (int c = 0; c < C; ++c) {
                if (y + 1 < H) {
                  const T d = x2(t, y + 1, xx, c) - x2(t, y, xx, c);
                  gv(t, y + 1, xx, c) += c2 * d;
                  gv(t, y, xx, c) -= c2 * d;
                }
                if (xx + 1 < W) {
                  const T d = x2(t, y, xx + 1, c) - x2(t, y, xx, c);
                  gv(t, y, xx + 1, c) += c2 * d;
                  gv(t, y, xx, c) -= c2 * d;
                }
              }
      });
    return id;
  }

  // Affine combination of scalar nodes -> scalar node.
  int sum_list(const std::vector<int>& xs, const std::vector<T>& coeffs) {
    if (xs.size() != coeffs.size() || xs.empty()) throw std::invalid_argument("sum_list: bad arguments");
    double acc = 0;
    bool ng = false;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (val(xs[i]).numel() != 1) throw std::invalid_argument("sum_list: non-scalar term");
      acc += static_cast<double>(coeffs[i]) * static_cast<double>(val(xs[i])[0]);
      ng = ng || needs_grad(xs[i]);
    }
    const int id = add_node(Tensor<T>::scalar(static_cast<T>(acc)), ng);
    if (needs_grad(id))
      set_backward(id, [this, id, xs, coeffs] {
        const T g = grad(id)[0];
        for (size_t i = 0; i < xs.size(); ++i)
          if (needs_grad(xs[i])) mutable_grad(xs[i])[0] += g * coeffs[i];
      });
    return id;
  }

  void backward(int root) {
    if (val(root).numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Tensor<T>::zeros(n.value.shape());
    nodes_[static_cast<size_t>(root)].grad[0] = T(1);
    for (int i = root; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.backward) n.backward();
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> backward;
    bool needs_grad = false;
  };

  int add_node(Tensor<T> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), nullptr, needs_grad});
    return static_cast<int>(nodes_.size() - 1);
  }

  void set_backward(int id, std::function<void()> fn) { nodes_[static_cast<size_t>(id)].backward = std::move(fn); }

  bool any_grad(std::initializer_list<int> ids) const {
    for (int i : ids)
      if (needs_grad(i)) return true;
    return false;
  }

  Tensor<T>& mutable_grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  static void axpy(Tensor<T>& dst, const Tensor<T>& src, T c) {
    for (int64_t i = 0; i < src.numel(); ++i) dst[i] += c * src[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace mfd
