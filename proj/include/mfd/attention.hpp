#pragma once

#include <cmath>
#include <vector>

#include "mfd/tensor.hpp"

namespace mfd {

// Batched scaled dot-product attention. q: [B,n,d], k: [B,m,d], v: [B,m,e].
// Per batch: out = softmax(q k^T * scale) v. The row-softmax probabilities
// are written to *probs ([B,n,m]) when requested; the backward pass needs them.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale, Tensor<T>* probs) {
  const int B = q.dim(0), n = q.dim(1), d = q.dim(2);
  const int m = k.dim(1), e = v.dim(2);
  if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != d || v.dim(1) != m)
    throw std::invalid_argument("attention: inconsistent q/k/v shapes");
  Tensor<T> out({B, n, e});
  if (probs) *probs = Tensor<T>({B, n, m});

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      std::vector<T> row(static_cast<size_t>(m));
      const T* qi = q.data() + (static_cast<int64_t>(b) * n + i) * d;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < m; ++j) {
        const T* kj = k.data() + (static_cast<int64_t>(b) * m + j) * d;
        T s = T(0);
        for (int c = 0; c < d; ++c) s += qi[c] * kj[c];
        s *= scale;
        row[static_cast<size_t>(j)] = s;
        if (s > mx) mx = s;
      }
      T denom = T(0);
      for (int j = 0; j < m; ++j) {
        row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
        denom += row[static_cast<size_t>(j)];
      }
      for (int j = 0; j < m; ++j) row[static_cast<size_t>(j)] /= denom;
      if (probs)
        for (int j = 0; j < m; ++j) (*probs)(b, i, j) = row[static_cast<size_t>(j)];
      T* oi = out.data() + (static_cast<int64_t>(b) * n + i) * e;
      for (int c = 0; c < e; ++c) oi[c] = T(0);
      for (int j = 0; j < m; ++j) {
        const T p = row[static_cast<size_t>(j)];
        const T* vj = v.data() + (static_cast<int64_t>(b) * m + j) * e;
        for (int c = 0; c < e; ++c) oi[c] += p * vj[c];
      }
    }
  }
  return out;
}

// Gradients of attention_forward given the cached probabilities.
// dS = P .* (dP - rowsum(dP .* P)); dq = scale*dS k; dk = scale*dS^T q; dv = P^T dout.
template <typename T>
void attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& probs,
                        const Tensor<T>& dout, T scale, Tensor<T>* dq, Tensor<T>* dk, Tensor<T>* dv) {
  const int B = q.dim(0), n = q.dim(1), d = q.dim(2);
  const int m = k.dim(1), e = v.dim(2);

  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const T* doi = dout.data() + (static_cast<int64_t>(b) * n + i) * e;
      const T* pi = probs.data() + (static_cast<int64_t>(b) * n + i) * m;
      // dP_ij = dout_i . v_j, then the softmax Jacobian applied along the row.
      std::vector<T> dp(static_cast<size_t>(m));
      T inner = T(0);
      for (int j = 0; j < m; ++j) {
        const T* vj = v.data() + (static_cast<int64_t>(b) * m + j) * e;
        T s = T(0);
        for (int c = 0; c < e; ++c) s += doi[c] * vj[c];
        dp[static_cast<size_t>(j)] = s;
        inner += s * pi[j];
      }
      const T* qi = q.data() + (static_cast<int64_t>(b) * n + i) * d;
      T* dqi = dq ? dq->data() + (static_cast<int64_t>(b) * n + i) * d : nullptr;
      for (int j = 0; j < m; ++j) {
        const T ds = pi[j] * (dp[static_cast<size_t>(j)] - inner) * scale;
        const T* kj = k.data() + (static_cast<int64_t>(b) * m + j) * d;
        if (dqi)
          for (int c = 0; c < d; ++c) dqi[c] += ds * kj[c];
        if (dk) {
          T* dkj = dk->data() + (static_cast<int64_t>(b) * m + j) * d;
          for (int c = 0; c < d; ++c) dkj[c] += ds * qi[c];
        }
        if (dv) {
          T* dvj = dv->data() + (static_cast<int64_t>(b) * m + j) * e;
          const T p = pi[j];
          for (int c = 0; c < e; ++c) dvj[c] += p * doi[c];
        }
      }
    }
  }
}

}  // namespace mfd
