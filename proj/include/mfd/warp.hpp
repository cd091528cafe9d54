#pragma once

#include <cmath>

#include "mfd/tensor.hpp"

namespace mfd {

// Identity sampling grid in absolute pixel coordinates. Channel 0 holds the
// x (column) coordinate, channel 1 the y (row) coordinate.
template <typename T>
Tensor<T> identity_grid(int frames, int H, int W) {
  Tensor<T> g({frames, H, W, 2});
  for (int t = 0; t < frames; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        g(t, y, x, 0) = static_cast<T>(x);
        g(t, y, x, 1) = static_cast<T>(y);
      }
  return g;
}

// Bilinear sample of one frame at absolute coordinates (cx, cy), with
// coordinates clamped to the image border.
template <typename T>
T sample_bilinear(const T* frame, int H, int W, int C, T cx, T cy, int c) {
  if (cx < T(0)) cx = T(0);
  if (cx > T(W - 1)) cx = T(W - 1);
  if (cy < T(0)) cy = T(0);
  if (cy > T(H - 1)) cy = T(H - 1);
  const int x0 = static_cast<int>(std::floor(static_cast<double>(cx)));
  const int y0 = static_cast<int>(std::floor(static_cast<double>(cy)));
  const int x1 = x0 + 1 < W ? x0 + 1 : W - 1;
  const int y1 = y0 + 1 < H ? y0 + 1 : H - 1;
  const T fx = cx - static_cast<T>(x0);
  const T fy = cy - static_cast<T>(y0);
  const T i00 = frame[(static_cast<int64_t>(y0) * W + x0) * C + c];
  const T i01 = frame[(static_cast<int64_t>(y0) * W + x1) * C + c];
  const T i10 = frame[(static_cast<int64_t>(y1) * W + x0) * C + c];
  const T i11 = frame[(static_cast<int64_t>(y1) * W + x1) * C + c];
  return (T(1) - fy) * ((T(1) - fx) * i00 + fx * i01) + fy * ((T(1) - fx) * i10 + fx * i11);
}

// Warp a video by per-frame absolute sampling coordinates.
// img: [T,H,W,C], coords: [T,Ho,Wo,2] -> out [T,Ho,Wo,C].
template <typename T>
Tensor<T> warp_forward(const Tensor<T>& img, const Tensor<T>& coords) {
  const int Tn = img.dim(0), H = img.dim(1), W = img.dim(2), C = img.dim(3);
  if (coords.dim(0) != Tn || coords.dim(3) != 2) throw std::invalid_argument("warp: coords must be [T,H,W,2] with matching frame count");
  if (!coords.all_finite()) throw std::invalid_argument("warp: non-finite coordinates");
  const int Ho = coords.dim(1), Wo = coords.dim(2);
  Tensor<T> out({Tn, Ho, Wo, C});
  for (int t = 0; t < Tn; ++t) {
    const T* frame = img.data() + static_cast<int64_t>(t) * H * W * C;
    for (int y = 0; y < Ho; ++y)
      for (int x = 0; x < Wo; ++x) {
        const T cx = coords(t, y, x, 0);
        const T cy = coords(t, y, x, 1);
        for (int c = 0; c < C; ++c) out(t, y, x, c) = sample_bilinear(frame, H, W, C, cx, cy, c);
      }
  }
  return out;
}

// Gradients of warp_forward w.r.t. the image and/or the coordinates.
// Coordinate gradients vanish where the sample was clamped to the border.
template <typename T>
void warp_backward(const Tensor<T>& img, const Tensor<T>& coords, const Tensor<T>& dout, Tensor<T>* dimg,
                   Tensor<T>* dcoords) {
  const int Tn = img.dim(0), H = img.dim(1), W = img.dim(2), C = img.dim(3);
  const int Ho = coords.dim(1), Wo = coords.dim(2);
  for (int t = 0; t < Tn; ++t) {
    const T* frame = img.data() + static_cast<int64_t>(t) * H * W * C;
    T* dframe = dimg ? dimg->data() + static_cast<int64_t>(t) * H * W * C : nullptr;
    for (int y = 0; y < Ho; ++y)
      for (int x = 0; x < Wo; ++x) {
        T cx = coords(t, y, x, 0);
        T cy = coords(t, y, x, 1);
        const bool clamped_x = cx < T(0) || cx > T(W - 1);
        const bool clamped_y = cy < T(0) || cy > T(H - 1);
        if (cx < T(0)) cx = T(0);
        if (cx > T(W - 1)) cx = T(W - 1);
        if (cy < T(0)) cy = T(0);
        if (cy > T(H - 1)) cy = T(H - 1);
        const int x0 = static_cast<int>(std::floor(static_cast<double>(cx)));
        const int y0 = static_cast<int>(std::floor(static_cast<double>(cy)));
        const int x1 = x0 + 1 < W ? x0 + 1 : W - 1;
        const int y1 = y0 + 1 < H ? y0 + 1 : H - 1;
        const T fx = cx - static_cast<T>(x0);
        const T fy = cy - static_cast<T>(y0);
        T gx = T(0), gy = T(0);
        for (int c = 0; c < C; ++c) {
          const T g = dout(t, y, x, c);
          const int64_t o00 = (static_cast<int64_t>(y0) * W + x0) * C + c;
          const int64_t o01 = (static_cast<int64_t>(y0) * W + x1) * C + c;
          const int64_t o10 = (static_cast<int64_t>(y1) * W + x0) * C + c;
          const int64_t o11 = (static_cast<int64_t>(y1) * W + x1) * C + c;
          if (dframe) {
            dframe[o00] += g * (T(1) - fy) * (T(1) - fx);
            dframe[o01] += g * (T(1) - fy) * fx;
            dframe[o10] += g * fy * (T(1) - fx);
            dframe[o11] += g * fy * fx;
          }
          if (dcoords) {
            gx += g * ((T(1) - fy) * (frame[o01] - frame[o00]) + fy * (frame[o11] - frame[o10]));
            gy += g * ((T(1) - fx) * (frame[o10] - frame[o00]) + fx * (frame[o11] - frame[o01]));
          }
        }
        if (dcoords) {
          (*dcoords)(t, y, x, 0) += clamped_x ? T(0) : gx;
          (*dcoords)(t, y, x, 1) += clamped_y ? T(0) : gy;
        }
      }
  }
}

// phi = id + u for displacement u.
template <typename T>
Tensor<T> transform_from_displacement(const Tensor<T>& u) {
  const Tensor<T> id = identity_grid<T>(u.dim(0), u.dim(1), u.dim(2));
  Tensor<T> phi(u.shape());
  for (int64_t i = 0; i < u.numel(); ++i) phi[i] = id[i] + u[i];
  return phi;
}

// u = phi - id; exact pointwise subtraction of the coordinate grid.
template <typename T>
Tensor<T> displacement_from_transform(const Tensor<T>& phi) {
  const Tensor<T> id = identity_grid<T>(phi.dim(0), phi.dim(1), phi.dim(2));
  Tensor<T> u(phi.shape());
  for (int64_t i = 0; i < phi.numel(); ++i) u[i] = phi[i] - id[i];
  return u;
}

// Stationary-velocity integration by scaling and squaring, per frame:
// u <- v / 2^K, then K times u(x) <- u(x + u(x)) + u(x); phi = id + u.
// Displacement composition uses bilinear interpolation with border clamping.
template <typename T>
Tensor<T> integrate_velocity(const Tensor<T>& v, int num_squarings) {
  if (num_squarings < 0) throw std::invalid_argument("integrate_velocity: num_squarings must be >= 0");
  if (!v.all_finite()) throw std::invalid_argument("integrate_velocity: non-finite velocity");
  const T inv = static_cast<T>(1.0 / std::pow(2.0, num_squarings));
  Tensor<T> u(v.shape());
  for (int64_t i = 0; i < v.numel(); ++i) u[i] = v[i] * inv;
  for (int k = 0; k < num_squarings; ++k) {
    const Tensor<T> phi = transform_from_displacement(u);
    const Tensor<T> pulled = warp_forward(u, phi);
    for (int64_t i = 0; i < u.numel(); ++i) u[i] = pulled[i] + u[i];
  }
  return transform_from_displacement(u);
}

}  // namespace mfd
