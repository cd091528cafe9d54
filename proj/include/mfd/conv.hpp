#pragma once

#include <vector>

#include "mfd/tensor.hpp"

namespace mfd {

// 3D convolution over (frames, height, width) with channels-last layout.
// x: [T,H,W,Ci], w: [kt,kh,kw,Ci,Co]. Temporal stride is always 1 and
// temporal padding kt/2, so the frame count is preserved; spatial stride is
// 1 or 2 with zero padding kh/2, kw/2.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride) {
  const int Tn = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int kt = w.dim(0), kh = w.dim(1), kw = w.dim(2), Co = w.dim(4);
  if (w.dim(3) != Ci) throw std::invalid_argument("conv3d: channel mismatch");
  const int pt = kt / 2, ph = kh / 2, pw = kw / 2;
  const int Ho = (H + 2 * ph - kh) / stride + 1;
  const int Wo = (W + 2 * pw - kw) / stride + 1;

  Tensor<T> out({Tn, Ho, Wo, Co});
  const T* xd = x.data();
  const T* wd = w.data();
  T* od = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int t = 0; t < Tn; ++t) {
    for (int yo = 0; yo < Ho; ++yo) {
      std::vector<T> acc(static_cast<size_t>(Co));
      for (int xo = 0; xo < Wo; ++xo) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int dt = 0; dt < kt; ++dt) {
          const int ti = t + dt - pt;
          if (ti < 0 || ti >= Tn) continue;
          for (int dy = 0; dy < kh; ++dy) {
            const int yi = yo * stride + dy - ph;
            if (yi < 0 || yi >= H) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int xi = xo * stride + dx - pw;
              if (xi < 0 || xi >= W) continue;
              const T* xrow = xd + (((static_cast<int64_t>(ti) * H + yi) * W + xi) * Ci);
              const T* wrow = wd + ((((static_cast<int64_t>(dt) * kh + dy) * kw + dx) * Ci) * Co);
              for (int ci = 0; ci < Ci; ++ci) {
                const T v = xrow[ci];
                const T* wp = wrow + static_cast<int64_t>(ci) * Co;
                for (int co = 0; co < Co; ++co) acc[static_cast<size_t>(co)] += v * wp[co];
              }
            }
          }
        }
        T* orow = od + (((static_cast<int64_t>(t) * Ho + yo) * Wo + xo) * Co);
        if (bias) {
          const T* bd = bias->data();
          for (int co = 0; co < Co; ++co) orow[co] = acc[static_cast<size_t>(co)] + bd[co];
        } else {
          for (int co = 0; co < Co; ++co) orow[co] = acc[static_cast<size_t>(co)];
        }
      }
    }
  }
  return out;
}

// Gradients of conv3d. Any of dx/dw/dbias may be null to skip. Each output
// element is owned by one thread, so results are deterministic under OpenMP.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, const Tensor<T>& dout, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* dbias) {
  const int Tn = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const int kt = w.dim(0), kh = w.dim(1), kw = w.dim(2), Co = w.dim(4);
  const int pt = kt / 2, ph = kh / 2, pw = kw / 2;
  const int Ho = dout.dim(1), Wo = dout.dim(2);
  const T* xd = x.data();
  const T* wd = w.data();
  const T* gd = dout.data();

  if (dx) {
    T* dxd = dx->data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int ti = 0; ti < Tn; ++ti) {
      for (int yi = 0; yi < H; ++yi) {
        for (int xi = 0; xi < W; ++xi) {
          T* dxrow = dxd + (((static_cast<int64_t>(ti) * H + yi) * W + xi) * Ci);
          for (int dt = 0; dt < kt; ++dt) {
            const int t = ti - dt + pt;
            if (t < 0 || t >= Tn) continue;
            for (int dy = 0; dy < kh; ++dy) {
              const int ys = yi - dy + ph;
              if (ys < 0 || ys % stride != 0) continue;
              const int yo = ys / stride;
              if (yo >= Ho) continue;
              for (int dx_ = 0; dx_ < kw; ++dx_) {
                const int xs = xi - dx_ + pw;
                if (xs < 0 || xs % stride != 0) continue;
                const int xo = xs / stride;
                if (xo >= Wo) continue;
                const T* grow = gd + (((static_cast<int64_t>(t) * Ho + yo) * Wo + xo) * Co);
                const T* wrow = wd + ((((static_cast<int64_t>(dt) * kh + dy) * kw + dx_) * Ci) * Co);
                for (int ci = 0; ci < Ci; ++ci) {
                  const T* wp = wrow + static_cast<int64_t>(ci) * Co;
                  T acc = T(0);
                  for (int co = 0; co < Co; ++co) acc += wp[co] * grow[co];
                  dxrow[ci] += acc;
                }
              }
            }
          }
        }
      }
    }
  }

  if (dw) {
    T* dwd = dw->data();
    const int64_t taps = static_cast<int64_t>(kt) * kh * kw;
#pragma omp parallel for schedule(static)
    for (int64_t tap = 0; tap < taps; ++tap) {
      const int dt = static_cast<int>(tap / (kh * kw));
      const int dy = static_cast<int>((tap / kw) % kh);
      const int dx_ = static_cast<int>(tap % kw);
      T* dwtap = dwd + tap * Ci * Co;
      for (int t = 0; t < Tn; ++t) {
        const int ti = t + dt - pt;
        if (ti < 0 || ti >= Tn) continue;
        for (int yo = 0; yo < Ho; ++yo) {
          const int yi = yo * stride + dy - ph;
          if (yi < 0 || yi >= H) continue;
          for (int xo = 0; xo < Wo; ++xo) {
            const int xi = xo * stride + dx_ - pw;
            if (xi < 0 || xi >= W) continue;
            const T* xrow = xd + (((static_cast<int64_t>(ti) * H + yi) * W + xi) * Ci);
            const T* grow = gd + (((static_cast<int64_t>(t) * Ho + yo) * Wo + xo) * Co);
            for (int ci = 0; ci < Ci; ++ci) {
              const T v = xrow[ci];
              T* dwp = dwtap + static_cast<int64_t>(ci) * Co;
              for (int co = 0; co < Co; ++co) dwp[co] += v * grow[co];
            }
          }
        }
      }
    }
  }

  if (dbias) {
    T* dbd = dbias->data();
    const int64_t sites = static_cast<int64_t>(Tn) * Ho * Wo;
    for (int64_t s = 0; s < sites; ++s) {
      const T* grow = gd + s * Co;
      for (int co = 0; co < Co; ++co) dbd[co] += grow[co];
    }
  }
}

}  // namespace mfd
