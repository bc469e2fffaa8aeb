#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "octa/kernels.hpp"
#include "octa/tensor.hpp"

// Define-by-run reverse-mode autodiff. Ops take a Tape*; with a live tape
// they record a backward closure, with tape == nullptr they run inference
// only (no graph retained, intermediates free as references drop).

namespace octa::ag {

template <class T>
struct Var;
template <class T>
using VarPtr = std::shared_ptr<Var<T>>;

template <class T>
struct Var {
    Tensor<T> value;
    Tensor<T> grad;  // stays empty until some consumer writes into it
    bool requires_grad = false;
    std::string name;  // parameters only
    std::vector<VarPtr<T>> parents;
    std::function<void(Var<T>&)> backward_fn;

    Var() = default;
    explicit Var(Tensor<T> v) : value(std::move(v)) {}

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>(value.shape());
    }
    void zero_grad() {
        if (!grad.empty()) grad.zero();
    }
};

template <class T>
VarPtr<T> constant(Tensor<T> v) {
    return std::make_shared<Var<T>>(std::move(v));
}

template <class T>
VarPtr<T> parameter(Tensor<T> v, std::string name) {
    auto p = std::make_shared<Var<T>>(std::move(v));
    p->requires_grad = true;
    p->name = std::move(name);
    return p;
}

template <class T>
class Tape {
public:
    VarPtr<T> record(Tensor<T> value, std::vector<VarPtr<T>> parents,
                     std::function<void(Var<T>&)> fn) {
        auto v = std::make_shared<Var<T>>(std::move(value));
        v->requires_grad = true;
        v->parents = std::move(parents);
        v->backward_fn = std::move(fn);
        order_.push_back(v);
        return v;
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the graph in reverse creation
    // order. Nodes whose grad buffer was never touched have no path to the
    // loss and are skipped.
    void backward(const VarPtr<T>& loss) {
        if (loss->value.numel() != 1) throw ShapeError("backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Var<T>& v = **it;
            if (!v.grad.empty() && v.backward_fn) v.backward_fn(v);
        }
    }

    void clear() { order_.clear(); }
    size_t size() const { return order_.size(); }

private:
    std::vector<VarPtr<T>> order_;
};

namespace detail {

template <class T>
bool any_grad(const std::vector<VarPtr<T>>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

// Records on the tape when the result needs gradients, otherwise returns a
// free-standing constant so inference holds no graph.
template <class T>
VarPtr<T> make(Tape<T>* tape, Tensor<T> value, std::vector<VarPtr<T>> parents,
               std::function<void(Var<T>&)> fn) {
    if (tape && any_grad(parents)) return tape->record(std::move(value), std::move(parents), std::move(fn));
    return constant(std::move(value));
}

template <class T>
void axpy(Tensor<T>& dst, const Tensor<T>& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- elementwise ----

template <class T>
VarPtr<T> add(Tape<T>* tape, const VarPtr<T>& a, const VarPtr<T>& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return detail::make<T>(tape, std::move(out), {a, b}, [a, b](Var<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::axpy(a->grad, self.grad);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::axpy(b->grad, self.grad);
        }
    });
}

template <class T>
VarPtr<T> mul(Tape<T>* tape, const VarPtr<T>& a, const VarPtr<T>& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    return detail::make<T>(tape, std::move(out), {a, b}, [a, b](Var<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) b->grad[i] += self.grad[i] * a->value[i];
        }
    });
}

template <class T>
VarPtr<T> scale(Tape<T>* tape, const VarPtr<T>& a, T k) {
    Tensor<T> out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * k;
    return detail::make<T>(tape, std::move(out), {a}, [a, k](Var<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] * k;
    });
}

template <class T>
VarPtr<T> relu(Tape<T>* tape, const VarPtr<T>& x) {
    Tensor<T> out(x->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    return detail::make<T>(tape, std::move(out), {x}, [x](Var<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
            if (x->value[i] > T(0)) x->grad[i] += self.grad[i];
    });
}

template <class T>
VarPtr<T> sigmoid(Tape<T>* tape, const VarPtr<T>& x) {
    Tensor<T> out(x->value.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x->value[i]));
    Tensor<T> saved = out;
    return detail::make<T>(tape, std::move(out), {x}, [x, saved](Var<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
            x->grad[i] += self.grad[i] * saved[i] * (T(1) - saved[i]);
    });
}

// elementwise max; on exact ties the gradient goes to a
template <class T>
VarPtr<T> maximum(Tape<T>* tape, const VarPtr<T>& a, const VarPtr<T>& b) {
    check_same_shape(a->value, b->value, "maximum");
    Tensor<T> out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(a->value[i], b->value[i]);
    return detail::make<T>(tape, std::move(out), {a, b}, [a, b](Var<T>& self) {
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            if (a->value[i] >= b->value[i]) {
                if (a->requires_grad) a->grad[i] += self.grad[i];
            } else if (b->requires_grad) {
                b->grad[i] += self.grad[i];
            }
        }
    });
}

// ---- structural ----

template <class T>
VarPtr<T> concat_channels(Tape<T>* tape, const std::vector<VarPtr<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& s0 = xs[0]->value.shape();
    if (s0.size() != 4) throw ShapeError("concat_channels: rank-4 required");
    int C = 0;
    for (const auto& x : xs) {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw ShapeError("concat_channels: incompatible shapes");
        C += s[1];
    }
    const int N = s0[0], H = s0[2], W = s0[3];
    const int64_t plane = int64_t(H) * W;
    Tensor<T> out({N, C, H, W});
    for (int n = 0; n < N; ++n) {
        int c0 = 0;
        for (const auto& x : xs) {
            const int xc = x->value.shape()[1];
            const T* src = x->value.data() + int64_t(n) * xc * plane;
            T* dst = out.data() + (int64_t(n) * C + c0) * plane;
            std::copy(src, src + int64_t(xc) * plane, dst);
            c0 += xc;
        }
    }
    std::vector<VarPtr<T>> parents(xs.begin(), xs.end());
    return detail::make<T>(tape, std::move(out), parents, [xs, N, C, plane](Var<T>& self) {
        for (int n = 0; n < N; ++n) {
            int c0 = 0;
            for (const auto& x : xs) {
                const int xc = x->value.shape()[1];
                if (x->requires_grad) {
                    x->ensure_grad();
                    const T* src = self.grad.data() + (int64_t(n) * C + c0) * plane;
                    T* dst = x->grad.data() + int64_t(n) * xc * plane;
                    for (int64_t i = 0; i < int64_t(xc) * plane; ++i) dst[i] += src[i];
                }
                c0 += xc;
            }
        }
    });
}

// copy-based reshape; element count must be preserved
template <class T>
VarPtr<T> reshape(Tape<T>* tape, const VarPtr<T>& x, std::vector<int> shape) {
    Tensor<T> out(std::move(shape));
    if (out.numel() != x->value.numel()) throw ShapeError("reshape: element count mismatch");
    std::copy(x->value.data(), x->value.data() + x->value.numel(), out.data());
    return detail::make<T>(tape, std::move(out), {x}, [x](Var<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) x->grad[i] += self.grad[i];
    });
}

// slice along dimension 1 of a rank>=2 tensor (trailing dims kept whole)
template <class T>
VarPtr<T> slice_dim1(Tape<T>* tape, const VarPtr<T>& x, int c0, int c1) {
    const auto& s = x->value.shape();
    if (s.size() < 2 || c0 < 0 || c1 <= c0 || c1 > s[1]) throw ShapeError("slice_dim1: bad range");
    const int N = s[0], C = s[1], SC = c1 - c0;
    int64_t plane = 1;
    for (size_t i = 2; i < s.size(); ++i) plane *= s[i];
    std::vector<int> os = s;
    os[1] = SC;
    Tensor<T> out(os);
    for (int n = 0; n < N; ++n) {
        const T* src = x->value.data() + (int64_t(n) * C + c0) * plane;
        std::copy(src, src + int64_t(SC) * plane, out.data() + int64_t(n) * SC * plane);
    }
    return detail::make<T>(tape, std::move(out), {x}, [x, c0, N, C, SC, plane](Var<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* src = self.grad.data() + int64_t(n) * SC * plane;
            T* dst = x->grad.data() + (int64_t(n) * C + c0) * plane;
            for (int64_t i = 0; i < int64_t(SC) * plane; ++i) dst[i] += src[i];
        }
    });
}

// ---- conv / norm / linear ----

template <class T>
VarPtr<T> conv2d(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b,
                 int stride, int pad) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d: rank-4 required");
    if (xs[1] != ws[1]) throw ShapeError("conv2d: channel mismatch");
    const int N = xs[0], IC = xs[1], H = xs[2], W_ = xs[3];
    const int OC = ws[0], K = ws[2];
    if (ws[3] != K) throw ShapeError("conv2d: square kernels only");
    const int OH = kern::conv_out_extent(H, K, stride, pad);
    const int OW = kern::conv_out_extent(W_, K, stride, pad);
    if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: output would be empty");
    Tensor<T> out({N, OC, OH, OW});
    kern::conv2d_forward(x->value.data(), N, IC, H, W_, w->value.data(),
                         b ? b->value.data() : nullptr, OC, K, stride, pad,
                         out.data(), OH, OW);
    std::vector<VarPtr<T>> parents = {x, w};
    if (b) parents.push_back(b);
    return detail::make<T>(tape, std::move(out), parents,
                           [x, w, b, N, IC, H, W_, OC, K, stride, pad, OH, OW](Var<T>& self) {
        if (x->requires_grad) {
            Tensor<T> gx({N, IC, H, W_});
            kern::conv2d_backward_data(self.grad.data(), N, OC, OH, OW, w->value.data(), IC, K,
                                       stride, pad, gx.data(), H, W_);
            x->ensure_grad();
            detail::axpy(x->grad, gx);
        }
        if (w->requires_grad) {
            Tensor<T> gw({OC, IC, K, K});
            kern::conv2d_backward_weights(self.grad.data(), N, OC, OH, OW, x->value.data(), IC, H,
                                          W_, K, stride, pad, gw.data());
            w->ensure_grad();
            detail::axpy(w->grad, gw);
        }
        if (b && b->requires_grad) {
            Tensor<T> gb({OC});
            kern::conv2d_backward_bias(self.grad.data(), N, OC, OH, OW, gb.data());
            b->ensure_grad();
            detail::axpy(b->grad, gb);
        }
    });
}

// Training mode normalizes by batch statistics and updates the running
// buffers in place; inference mode uses the running buffers. Biased variance
// for normalization, as is conventional.
template <class T>
VarPtr<T> batchnorm2d(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& gamma,
                      const VarPtr<T>& beta, Tensor<T>& run_mean, Tensor<T>& run_var,
                      bool training, T momentum, T eps) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("batchnorm2d: rank-4 required");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const int64_t plane = int64_t(H) * W;
    const int64_t M = int64_t(N) * plane;
    Tensor<T> out(s);
    Tensor<T> mean({C}), invstd({C});

    if (training) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            T mu = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = x->value.data() + (int64_t(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) mu += p[i];
            }
            mu /= T(M);
            T var = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = x->value.data() + (int64_t(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T d = p[i] - mu;
                    var += d * d;
                }
            }
            var /= T(M);
            mean[c] = mu;
            invstd[c] = T(1) / std::sqrt(var + eps);
            run_mean[c] = (T(1) - momentum) * run_mean[c] + momentum * mu;
            run_var[c] = (T(1) - momentum) * run_var[c] + momentum * var;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = run_mean[c];
            invstd[c] = T(1) / std::sqrt(run_var[c] + eps);
        }
    }

    Tensor<T> xhat(s);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* p = x->value.data() + (int64_t(n) * C + c) * plane;
            T* xh = xhat.data() + (int64_t(n) * C + c) * plane;
            T* o = out.data() + (int64_t(n) * C + c) * plane;
            const T mu = mean[c], is = invstd[c], g = gamma->value[c], bb = beta->value[c];
            for (int64_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                o[i] = g * xh[i] + bb;
            }
        }
    }

    return detail::make<T>(tape, std::move(out), {x, gamma, beta},
                           [x, gamma, beta, xhat, invstd, training, N, C, plane, M](Var<T>& self) {
        Tensor<T> dg({C}), db({C});
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            T sg = T(0), sb = T(0);
            for (int n = 0; n < N; ++n) {
                const T* gy = self.grad.data() + (int64_t(n) * C + c) * plane;
                const T* xh = xhat.data() + (int64_t(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    sg += gy[i] * xh[i];
                    sb += gy[i];
                }
            }
            dg[c] = sg;
            db[c] = sb;
        }
        if (gamma->requires_grad) {
            gamma->ensure_grad();
            detail::axpy(gamma->grad, dg);
        }
        if (beta->requires_grad) {
            beta->ensure_grad();
            detail::axpy(beta->grad, db);
        }
        if (x->requires_grad) {
            x->ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    const T* gy = self.grad.data() + (int64_t(n) * C + c) * plane;
                    const T* xh = xhat.data() + (int64_t(n) * C + c) * plane;
                    T* gx = x->grad.data() + (int64_t(n) * C + c) * plane;
                    const T g = gamma->value[c], is = invstd[c];
                    if (training) {
                        const T k = g * is / T(M);
                        for (int64_t i = 0; i < plane; ++i)
                            gx[i] += k * (T(M) * gy[i] - db[c] - xh[i] * dg[c]);
                    } else {
                        const T k = g * is;
                        for (int64_t i = 0; i < plane; ++i) gx[i] += k * gy[i];
                    }
                }
            }
        }
    });
}

// x [N,K] -> [N,M]; w [M,K], b [M]
template <class T>
VarPtr<T> linear(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) throw ShapeError("linear: bad shapes");
    const int N = xs[0], K = xs[1], M = ws[0];
    Tensor<T> out({N, M});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) {
            T acc = b ? b->value[m] : T(0);
            for (int k = 0; k < K; ++k) acc += w->value.at(m, k) * x->value.at(n, k);
            out.at(n, m) = acc;
        }
    std::vector<VarPtr<T>> parents = {x, w};
    if (b) parents.push_back(b);
    return detail::make<T>(tape, std::move(out), parents, [x, w, b, N, K, M](Var<T>& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k) {
                    T acc = T(0);
                    for (int m = 0; m < M; ++m) acc += self.grad.at(n, m) * w->value.at(m, k);
                    x->grad.at(n, k) += acc;
                }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k) {
                    T acc = T(0);
                    for (int n = 0; n < N; ++n) acc += self.grad.at(n, m) * x->value.at(n, k);
                    w->grad.at(m, k) += acc;
                }
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int m = 0; m < M; ++m) {
                T acc = T(0);
                for (int n = 0; n < N; ++n) acc += self.grad.at(n, m);
                b->grad[m] += acc;
            }
        }
    });
}

// ---- pooling / resampling / attention plumbing ----

// [N,C,H,W] -> [N,C] spatial mean
template <class T>
VarPtr<T> global_avg_pool(Tape<T>* tape, const VarPtr<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("global_avg_pool: rank-4 required");
    const int N = s[0], C = s[1];
    const int64_t plane = int64_t(s[2]) * s[3];
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x->value.data() + (int64_t(n) * C + c) * plane;
            T acc = T(0);
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            out.at(n, c) = acc / T(plane);
        }
    return detail::make<T>(tape, std::move(out), {x}, [x, N, C, plane](Var<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T g = self.grad.at(n, c) / T(plane);
                T* gx = x->grad.data() + (int64_t(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) gx[i] += g;
            }
    });
}

// x [N,C,H,W] scaled per channel by s [N,C]
template <class T>
VarPtr<T> scale_channels(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& sc) {
    const auto& xs = x->value.shape();
    const auto& ss = sc->value.shape();
    if (xs.size() != 4 || ss.size() != 2 || ss[0] != xs[0] || ss[1] != xs[1])
        throw ShapeError("scale_channels: bad shapes");
    const int N = xs[0], C = xs[1];
    const int64_t plane = int64_t(xs[2]) * xs[3];
    Tensor<T> out(xs);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T k = sc->value.at(n, c);
            const T* p = x->value.data() + (int64_t(n) * C + c) * plane;
            T* o = out.data() + (int64_t(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) o[i] = k * p[i];
        }
    return detail::make<T>(tape, std::move(out), {x, sc}, [x, sc, N, C, plane](Var<T>& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T k = sc->value.at(n, c);
                    const T* gy = self.grad.data() + (int64_t(n) * C + c) * plane;
                    T* gx = x->grad.data() + (int64_t(n) * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) gx[i] += k * gy[i];
                }
        }
        if (sc->requires_grad) {
            sc->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* gy = self.grad.data() + (int64_t(n) * C + c) * plane;
                    const T* p = x->value.data() + (int64_t(n) * C + c) * plane;
                    T acc = T(0);
                    for (int64_t i = 0; i < plane; ++i) acc += gy[i] * p[i];
                    sc->grad.at(n, c) += acc;
                }
        }
    });
}

// softmax over dimension 1 of a rank-3 [N,K,C] or rank-4 [N,K,H,W] tensor
template <class T>
VarPtr<T> softmax_dim1(Tape<T>* tape, const VarPtr<T>& x) {
    const auto& s = x->value.shape();
    int N, K, H, W;
    if (s.size() == 4) {
        N = s[0]; K = s[1]; H = s[2]; W = s[3];
    } else if (s.size() == 3) {
        N = s[0]; K = s[1]; H = s[2]; W = 1;
    } else {
        throw ShapeError("softmax_dim1: rank-3 or rank-4 required");
    }
    Tensor<T> out(s);
    kern::softmax_channels_forward(x->value.data(), N, K, H, W, out.data());
    Tensor<T> saved = out;
    return detail::make<T>(tape, std::move(out), {x}, [x, saved, N, K, H, W](Var<T>& self) {
        if (!x->requires_grad) return;
        Tensor<T> gx(x->value.shape());
        kern::softmax_channels_backward(self.grad.data(), saved.data(), N, K, H, W, gx.data());
        x->ensure_grad();
        detail::axpy(x->grad, gx);
    });
}

template <class T>
VarPtr<T> upsample_bilinear(Tape<T>* tape, const VarPtr<T>& x, int factor) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("upsample_bilinear: rank-4 required");
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> out({N, C, H * factor, W * factor});
    kern::upsample_bilinear_forward(x->value.data(), N, C, H, W, factor, out.data());
    return detail::make<T>(tape, std::move(out), {x}, [x, N, C, H, W, factor](Var<T>& self) {
        if (!x->requires_grad) return;
        Tensor<T> gx({N, C, H, W});
        kern::upsample_bilinear_backward(self.grad.data(), N, C, H, W, factor, gx.data());
        x->ensure_grad();
        detail::axpy(x->grad, gx);
    });
}

// field [N,m*m,H,W] (softmax-normalized weights), src [N,1,H,W]
template <class T>
VarPtr<T> propagate(Tape<T>* tape, const VarPtr<T>& field, const VarPtr<T>& src, int m) {
    const auto& fs = field->value.shape();
    const auto& ss = src->value.shape();
    if (fs.size() != 4 || ss.size() != 4 || ss[1] != 1) throw ShapeError("propagate: bad ranks");
    if (m % 2 == 0 || fs[1] != m * m) throw ShapeError("propagate: field channels must be odd m squared");
    if (fs[0] != ss[0] || fs[2] != ss[2] || fs[3] != ss[3])
        throw ShapeError("propagate: field/source size mismatch");
    const int N = fs[0], H = fs[2], W = fs[3];
    Tensor<T> out({N, 1, H, W});
    kern::propagate_forward(field->value.data(), src->value.data(), N, m, H, W, out.data());
    return detail::make<T>(tape, std::move(out), {field, src}, [field, src, N, m, H, W](Var<T>& self) {
        if (field->requires_grad) {
            Tensor<T> gf(field->value.shape());
            kern::propagate_backward_field(self.grad.data(), src->value.data(), N, m, H, W, gf.data());
            field->ensure_grad();
            detail::axpy(field->grad, gf);
        }
        if (src->requires_grad) {
            Tensor<T> gs(src->value.shape());
            kern::propagate_backward_src(self.grad.data(), field->value.data(), N, m, H, W, gs.data());
            src->ensure_grad();
            detail::axpy(src->grad, gs);
        }
    });
}

// ---- losses ----

template <class T>
VarPtr<T> mse_loss(Tape<T>* tape, const VarPtr<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred->value, target, "mse_loss");
    const int64_t n = pred->value.numel();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T d = pred->value[i] - target[i];
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(acc / T(n));
    return detail::make<T>(tape, std::move(out), {pred}, [pred, target, n](Var<T>& self) {
        if (!pred->requires_grad) return;
        pred->ensure_grad();
        const T g = self.grad[0] * T(2) / T(n);
        for (int64_t i = 0; i < n; ++i) pred->grad[i] += g * (pred->value[i] - target[i]);
    });
}

template <class T>
VarPtr<T> dice_loss(Tape<T>* tape, const VarPtr<T>& pred, const Tensor<T>& target, T eps) {
    check_same_shape(pred->value, target, "dice_loss");
    const int64_t n = pred->value.numel();
    T inter = T(0), psq = T(0), gsq = T(0);
    for (int64_t i = 0; i < n; ++i) {
        inter += pred->value[i] * target[i];
        psq += pred->value[i] * pred->value[i];
        gsq += target[i] * target[i];
    }
    const T A = T(2) * inter + eps;
    const T B = psq + gsq + eps;
    Tensor<T> out = Tensor<T>::scalar(T(1) - A / B);
    return detail::make<T>(tape, std::move(out), {pred}, [pred, target, n, A, B](Var<T>& self) {
        if (!pred->requires_grad) return;
        pred->ensure_grad();
        const T g = self.grad[0];
        const T invB2 = T(1) / (B * B);
        for (int64_t i = 0; i < n; ++i)
            pred->grad[i] -= g * (T(2) * target[i] * B - A * T(2) * pred->value[i]) * invB2;
    });
}

}  // namespace octa::ag
