#pragma once

#include <algorithm>
#include <cmath>

#include "octa/tensor.hpp"

// Data-parallel kernels behind the network ops. Every output element is
// written by exactly one thread and inner accumulation order is fixed, so
// results are bitwise identical for any thread count and match the naive
// loops in kernels_serial.hpp exactly.

namespace octa::kern {

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// in [N,IC,H,W], w [OC,IC,K,K], b [OC] (may be null), out [N,OC,OH,OW]
template <class T>
void conv2d_forward(const T* in, int N, int IC, int H, int W,
                    const T* w, const T* b, int OC, int K, int stride, int pad,
                    T* out, int OH, int OW) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int noc = 0; noc < N * OC; ++noc) {
        for (int oy = 0; oy < OH; ++oy) {
            const int n = noc / OC, oc = noc % OC;
            T* orow = out + ((int64_t(n) * OC + oc) * OH + oy) * OW;
            const T bias = b ? b[oc] : T(0);
            for (int ox = 0; ox < OW; ++ox) orow[ox] = bias;
            for (int ic = 0; ic < IC; ++ic) {
                const T* iplane = in + (int64_t(n) * IC + ic) * H * W;
                const T* wrow = w + ((int64_t(oc) * IC + ic) * K) * K;
                for (int ky = 0; ky < K; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* irow = iplane + int64_t(iy) * W;
                    for (int kx = 0; kx < K; ++kx) {
                        const T wv = wrow[ky * K + kx];
                        const int off = kx - pad;
                        const int lo = std::max(0, ceil_div(-off, stride));
                        const int hi = std::min(OW - 1, (W - 1 - off) / stride);
                        if (stride == 1) {
                            for (int ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox + off];
                        } else {
                            for (int ox = lo; ox <= hi; ++ox)
                                orow[ox] += wv * irow[ox * stride + off];
                        }
                    }
                }
            }
        }
    }
}

// gradient w.r.t. input: gin [N,IC,H,W] from go [N,OC,OH,OW]
template <class T>
void conv2d_backward_data(const T* go, int N, int OC, int OH, int OW,
                          const T* w, int IC, int K, int stride, int pad,
                          T* gin, int H, int W) {
#pragma omp parallel for schedule(static)
    for (int nic = 0; nic < N * IC; ++nic) {
        const int n = nic / IC, ic = nic % IC;
        T* gplane = gin + (int64_t(n) * IC + ic) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) gplane[i] = T(0);
        for (int oc = 0; oc < OC; ++oc) {
            const T* goplane = go + (int64_t(n) * OC + oc) * OH * OW;
            const T* wrow = w + ((int64_t(oc) * IC + ic) * K) * K;
            for (int ky = 0; ky < K; ++ky) {
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* grow = goplane + int64_t(oy) * OW;
                    T* gdst = gplane + int64_t(iy) * W;
                    for (int kx = 0; kx < K; ++kx) {
                        const T wv = wrow[ky * K + kx];
                        const int off = kx - pad;
                        const int lo = std::max(0, ceil_div(-off, stride));
                        const int hi = std::min(OW - 1, (W - 1 - off) / stride);
                        if (stride == 1) {
                            for (int ox = lo; ox <= hi; ++ox) gdst[ox + off] += wv * grow[ox];
                        } else {
                            for (int ox = lo; ox <= hi; ++ox)
                                gdst[ox * stride + off] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

// gradient w.r.t. weights: gw [OC,IC,K,K]
// Kept scalar: GCC's in-order vectorizer splits the fused multiply-add this
// reduction otherwise contracts to, breaking bitwise agreement with the serial
// reference. Applied to both implementations.
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC push_options
#pragma GCC optimize("no-tree-vectorize")
#endif
template <class T>
void conv2d_backward_weights(const T* go, int N, int OC, int OH, int OW,
                             const T* in, int IC, int H, int W, int K, int stride, int pad,
                             T* gw) {
#pragma omp parallel for schedule(static)
    for (int ocic = 0; ocic < OC * IC; ++ocic) {
        const int oc = ocic / IC, ic = ocic % IC;
        T* gwrow = gw + int64_t(ocic) * K * K;
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                T acc = T(0);
                const int off = kx - pad;
                const int lo = std::max(0, ceil_div(-off, stride));
                const int hi = std::min(OW - 1, (W - 1 - off) / stride);
                for (int n = 0; n < N; ++n) {
                    const T* goplane = go + (int64_t(n) * OC + oc) * OH * OW;
                    const T* iplane = in + (int64_t(n) * IC + ic) * H * W;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* grow = goplane + int64_t(oy) * OW;
                        const T* irow = iplane + int64_t(iy) * W;
                        if (stride == 1) {
                            for (int ox = lo; ox <= hi; ++ox) acc += grow[ox] * irow[ox + off];
                        } else {
                            for (int ox = lo; ox <= hi; ++ox)
                                acc += grow[ox] * irow[ox * stride + off];
                        }
                    }
                }
                gwrow[ky * K + kx] = acc;
            }
        }
    }
}
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC pop_options
#endif

template <class T>
void conv2d_backward_bias(const T* go, int N, int OC, int OH, int OW, T* gb) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < OC; ++oc) {
        T acc = T(0);
        for (int n = 0; n < N; ++n) {
            const T* goplane = go + (int64_t(n) * OC + oc) * OH * OW;
            for (int64_t i = 0; i < int64_t(OH) * OW; ++i) acc += goplane[i];
        }
        gb[oc] = acc;
    }
}

// Bilinear upsample by integer factor, half-pixel-centre sampling.
template <class T>
void upsample_bilinear_forward(const T* in, int N, int C, int H, int W, int f, T* out) {
    const int OH = H * f, OW = W * f;
#pragma omp parallel for collapse(2) schedule(static)
    for (int nc = 0; nc < N * C; ++nc) {
        for (int oy = 0; oy < OH; ++oy) {
            const T* iplane = in + int64_t(nc) * H * W;
            T* orow = out + (int64_t(nc) * OH + oy) * OW;
            double sy = (oy + 0.5) / f - 0.5;
            int y0 = int(std::floor(sy));
            double wy = sy - y0;
            if (y0 < 0) { y0 = 0; wy = 0.0; }
            int y1 = std::min(y0 + 1, H - 1);
            if (y0 >= H - 1) { y0 = H - 1; y1 = H - 1; wy = 0.0; }
            const T* r0 = iplane + int64_t(y0) * W;
            const T* r1 = iplane + int64_t(y1) * W;
            for (int ox = 0; ox < OW; ++ox) {
                double sx = (ox + 0.5) / f - 0.5;
                int x0 = int(std::floor(sx));
                double wx = sx - x0;
                if (x0 < 0) { x0 = 0; wx = 0.0; }
                int x1 = std::min(x0 + 1, W - 1);
                if (x0 >= W - 1) { x0 = W - 1; x1 = W - 1; wx = 0.0; }
                const double top = (1.0 - wx) * double(r0[x0]) + wx * double(r0[x1]);
                const double bot = (1.0 - wx) * double(r1[x0]) + wx * double(r1[x1]);
                orow[ox] = T((1.0 - wy) * top + wy * bot);
            }
        }
    }
}

template <class T>
void upsample_bilinear_backward(const T* go, int N, int C, int H, int W, int f, T* gin) {
    const int OH = H * f, OW = W * f;
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < N * C; ++nc) {
        T* gplane = gin + int64_t(nc) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) gplane[i] = T(0);
        const T* goplane = go + int64_t(nc) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            double sy = (oy + 0.5) / f - 0.5;
            int y0 = int(std::floor(sy));
            double wy = sy - y0;
            if (y0 < 0) { y0 = 0; wy = 0.0; }
            int y1 = std::min(y0 + 1, H - 1);
            if (y0 >= H - 1) { y0 = H - 1; y1 = H - 1; wy = 0.0; }
            for (int ox = 0; ox < OW; ++ox) {
                double sx = (ox + 0.5) / f - 0.5;
                int x0 = int(std::floor(sx));
                double wx = sx - x0;
                if (x0 < 0) { x0 = 0; wx = 0.0; }
                int x1 = std::min(x0 + 1, W - 1);
                if (x0 >= W - 1) { x0 = W - 1; x1 = W - 1; wx = 0.0; }
                const double g = double(goplane[int64_t(oy) * OW + ox]);
                gplane[int64_t(y0) * W + x0] += T((1.0 - wy) * (1.0 - wx) * g);
                gplane[int64_t(y0) * W + x1] += T((1.0 - wy) * wx * g);
                gplane[int64_t(y1) * W + x0] += T(wy * (1.0 - wx) * g);
                gplane[int64_t(y1) * W + x1] += T(wy * wx * g);
            }
        }
    }
}

// Local propagation: out(i) = sum_p field(p,i) * src(i + offset_p), zero
// padded outside the image. field [N,m*m,H,W], src [N,1,H,W].
template <class T>
void propagate_forward(const T* field, const T* src, int N, int m, int H, int W, T* out) {
    const int r = m / 2, P = m * m;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < H; ++y) {
            T* orow = out + (int64_t(n) * H + y) * W;
            for (int x = 0; x < W; ++x) orow[x] = T(0);
            const T* splane = src + int64_t(n) * H * W;
            for (int p = 0; p < P; ++p) {
                const int dy = p / m - r, dx = p % m - r;
                const int sy = y + dy;
                if (sy < 0 || sy >= H) continue;
                const T* frow = field + ((int64_t(n) * P + p) * H + y) * W;
                const T* srow = splane + int64_t(sy) * W;
                const int lo = std::max(0, -dx);
                const int hi = std::min(W - 1, W - 1 - dx);
                for (int x = lo; x <= hi; ++x) orow[x] += frow[x] * srow[x + dx];
            }
        }
    }
}

template <class T>
void propagate_backward_field(const T* go, const T* src, int N, int m, int H, int W, T* gfield) {
    const int r = m / 2, P = m * m;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int p = 0; p < P; ++p) {
            const int dy = p / m - r, dx = p % m - r;
            const T* goplane = go + int64_t(n) * H * W;
            const T* splane = src + int64_t(n) * H * W;
            T* gfplane = gfield + (int64_t(n) * P + p) * H * W;
            for (int y = 0; y < H; ++y) {
                T* grow = gfplane + int64_t(y) * W;
                const int sy = y + dy;
                if (sy < 0 || sy >= H) {
                    for (int x = 0; x < W; ++x) grow[x] = T(0);
                    continue;
                }
                const T* gorow = goplane + int64_t(y) * W;
                const T* srow = splane + int64_t(sy) * W;
                const int lo = std::max(0, -dx);
                const int hi = std::min(W - 1, W - 1 - dx);
                for (int x = 0; x < lo; ++x) grow[x] = T(0);
                for (int x = lo; x <= hi; ++x) grow[x] = gorow[x] * srow[x + dx];
                for (int x = hi + 1; x < W; ++x) grow[x] = T(0);
            }
        }
    }
}

template <class T>
void propagate_backward_src(const T* go, const T* field, int N, int m, int H, int W, T* gsrc) {
    const int r = m / 2, P = m * m;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < H; ++y) {
            // gather: src(y,x) is read by centre (y-dy, x-dx) for offset p
            T* grow = gsrc + (int64_t(n) * H + y) * W;
            for (int x = 0; x < W; ++x) grow[x] = T(0);
            for (int p = 0; p < P; ++p) {
                const int dy = p / m - r, dx = p % m - r;
                const int cy = y - dy;
                if (cy < 0 || cy >= H) continue;
                const T* gorow = go + (int64_t(n) * H + cy) * W;
                const T* frow = field + ((int64_t(n) * P + p) * H + cy) * W;
                const int lo = std::max(0, dx);
                const int hi = std::min(W - 1, W - 1 + dx);
                for (int x = lo; x <= hi; ++x) grow[x] += gorow[x - dx] * frow[x - dx];
            }
        }
    }
}

// Softmax over the channel dimension, numerically stabilised.
template <class T>
void softmax_channels_forward(const T* in, int N, int C, int H, int W, T* out) {
    const int64_t plane = int64_t(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < H; ++y) {
            const T* ibase = in + int64_t(n) * C * plane + int64_t(y) * W;
            T* obase = out + int64_t(n) * C * plane + int64_t(y) * W;
            for (int x = 0; x < W; ++x) {
                T mx = ibase[x];
                for (int c = 1; c < C; ++c) mx = std::max(mx, ibase[c * plane + x]);
                T denom = T(0);
                for (int c = 0; c < C; ++c) {
                    const T e = std::exp(ibase[c * plane + x] - mx);
                    obase[c * plane + x] = e;
                    denom += e;
                }
                const T inv = T(1) / denom;
                for (int c = 0; c < C; ++c) obase[c * plane + x] *= inv;
            }
        }
    }
}

template <class T>
void softmax_channels_backward(const T* go, const T* y, int N, int C, int H, int W, T* gin) {
    const int64_t plane = int64_t(H) * W;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int py = 0; py < H; ++py) {
            const T* gbase = go + int64_t(n) * C * plane + int64_t(py) * W;
            const T* ybase = y + int64_t(n) * C * plane + int64_t(py) * W;
            T* obase = gin + int64_t(n) * C * plane + int64_t(py) * W;
            for (int x = 0; x < W; ++x) {
                T dot = T(0);
                for (int c = 0; c < C; ++c) dot += gbase[c * plane + x] * ybase[c * plane + x];
                for (int c = 0; c < C; ++c)
                    obase[c * plane + x] = ybase[c * plane + x] * (gbase[c * plane + x] - dot);
            }
        }
    }
}

}  // namespace octa::kern
