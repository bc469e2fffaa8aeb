#pragma once

#include <algorithm>
#include <cmath>

#include "octa/tensor.hpp"

// Naive single-threaded references for the kernels in kernels.hpp. These are
// written as the most direct transcription of each operator's definition and
// exist purely as test oracles and benchmark baselines. Accumulation order
// matches the parallel kernels, so comparisons can demand bitwise equality.

namespace octa::kern_serial {

template <class T>
void conv2d_forward(const T* in, int N, int IC, int H, int W,
                    const T* w, const T* b, int OC, int K, int stride, int pad,
                    T* out, int OH, int OW) {
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = b ? b[oc] : T(0);
                    for (int ic = 0; ic < IC; ++ic)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += w[((int64_t(oc) * IC + ic) * K + ky) * K + kx] *
                                       in[((int64_t(n) * IC + ic) * H + iy) * W + ix];
                            }
                    out[((int64_t(n) * OC + oc) * OH + oy) * OW + ox] = acc;
                }
}

template <class T>
void conv2d_backward_data(const T* go, int N, int OC, int OH, int OW,
                          const T* w, int IC, int K, int stride, int pad,
                          T* gin, int H, int W) {
    for (int64_t i = 0; i < int64_t(N) * IC * H * W; ++i) gin[i] = T(0);
    for (int n = 0; n < N; ++n)
        for (int ic = 0; ic < IC; ++ic)
            for (int oc = 0; oc < OC; ++oc)
                for (int ky = 0; ky < K; ++ky)
                    for (int oy = 0; oy < OH; ++oy)
                        for (int kx = 0; kx < K; ++kx)
                            for (int ox = 0; ox < OW; ++ox) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                gin[((int64_t(n) * IC + ic) * H + iy) * W + ix] +=
                                    w[((int64_t(oc) * IC + ic) * K + ky) * K + kx] *
                                    go[((int64_t(n) * OC + oc) * OH + oy) * OW + ox];
                            }
}

// Scalar codegen pinned for the same reason as the parallel version: uniform
// fma contraction keeps the two bitwise comparable.
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC push_options
#pragma GCC optimize("no-tree-vectorize")
#endif
template <class T>
void conv2d_backward_weights(const T* go, int N, int OC, int OH, int OW,
                             const T* in, int IC, int H, int W, int K, int stride, int pad,
                             T* gw) {
    for (int oc = 0; oc < OC; ++oc)
        for (int ic = 0; ic < IC; ++ic)
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx) {
                    T acc = T(0);
                    for (int n = 0; n < N; ++n)
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += go[((int64_t(n) * OC + oc) * OH + oy) * OW + ox] *
                                       in[((int64_t(n) * IC + ic) * H + iy) * W + ix];
                            }
                    gw[((int64_t(oc) * IC + ic) * K + ky) * K + kx] = acc;
                }
}
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC pop_options
#endif

template <class T>
void conv2d_backward_bias(const T* go, int N, int OC, int OH, int OW, T* gb) {
    for (int oc = 0; oc < OC; ++oc) {
        T acc = T(0);
        for (int n = 0; n < N; ++n)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox)
                    acc += go[((int64_t(n) * OC + oc) * OH + oy) * OW + ox];
        gb[oc] = acc;
    }
}

template <class T>
void upsample_bilinear_forward(const T* in, int N, int C, int H, int W, int f, T* out) {
    const int OH = H * f, OW = W * f;
    for (int nc = 0; nc < N * C; ++nc)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                double sy = (oy + 0.5) / f - 0.5;
                double sx = (ox + 0.5) / f - 0.5;
                int y0 = int(std::floor(sy));
                int x0 = int(std::floor(sx));
                double wy = sy - y0, wx = sx - x0;
                if (y0 < 0) { y0 = 0; wy = 0.0; }
                if (x0 < 0) { x0 = 0; wx = 0.0; }
                int y1 = std::min(y0 + 1, H - 1);
                int x1 = std::min(x0 + 1, W - 1);
                if (y0 >= H - 1) { y0 = H - 1; y1 = H - 1; wy = 0.0; }
                if (x0 >= W - 1) { x0 = W - 1; x1 = W - 1; wx = 0.0; }
                const T* p = in + int64_t(nc) * H * W;
                const double top = (1.0 - wx) * double(p[int64_t(y0) * W + x0]) +
                                   wx * double(p[int64_t(y0) * W + x1]);
                const double bot = (1.0 - wx) * double(p[int64_t(y1) * W + x0]) +
                                   wx * double(p[int64_t(y1) * W + x1]);
                out[(int64_t(nc) * OH + oy) * OW + ox] = T((1.0 - wy) * top + wy * bot);
            }
}

template <class T>
void propagate_forward(const T* field, const T* src, int N, int m, int H, int W, T* out) {
    const int r = m / 2, P = m * m;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                T acc = T(0);
                for (int p = 0; p < P; ++p) {
                    const int sy = y + p / m - r;
                    const int sx = x + p % m - r;
                    if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                    acc += field[((int64_t(n) * P + p) * H + y) * W + x] *
                           src[(int64_t(n) * H + sy) * W + sx];
                }
                out[(int64_t(n) * H + y) * W + x] = acc;
            }
}

template <class T>
void softmax_channels_forward(const T* in, int N, int C, int H, int W, T* out) {
    const int64_t plane = int64_t(H) * W;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const T* ib = in + int64_t(n) * C * plane + int64_t(y) * W;
                T* ob = out + int64_t(n) * C * plane + int64_t(y) * W;
                T mx = ib[x];
                for (int c = 1; c < C; ++c) mx = std::max(mx, ib[c * plane + x]);
                T denom = T(0);
                for (int c = 0; c < C; ++c) {
                    const T e = std::exp(ib[c * plane + x] - mx);
                    ob[c * plane + x] = e;
                    denom += e;
                }
                const T inv = T(1) / denom;
                for (int c = 0; c < C; ++c) ob[c * plane + x] *= inv;
            }
}

}  // namespace octa::kern_serial
