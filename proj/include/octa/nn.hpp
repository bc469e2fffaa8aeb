#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "octa/autograd.hpp"

namespace octa::nn {

using ag::Tape;
using ag::Var;
using ag::VarPtr;

// Flat registry of named parameters and buffers (running stats). Every
// parameter is initialized from a stream forked off the master seed by its
// own name, so construction order never changes the values.
template <class T>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    VarPtr<T> param(const std::string& name, std::vector<int> shape,
                    const std::function<void(Tensor<T>&, Rng&)>& init) {
        if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Tensor<T> t(std::move(shape));
        Rng r = Rng(seed_).fork(name);
        init(t, r);
        auto v = ag::parameter(std::move(t), name);
        params_.push_back(v);
        by_name_[name] = v;
        return v;
    }

    std::shared_ptr<Tensor<T>> buffer(const std::string& name, std::vector<int> shape, T fill) {
        if (buf_by_name_.count(name)) throw ConfigError("duplicate buffer name: " + name);
        auto t = std::make_shared<Tensor<T>>(std::move(shape));
        t->fill(fill);
        buffers_.emplace_back(name, t);
        buf_by_name_[name] = t;
        return t;
    }

    const std::vector<VarPtr<T>>& params() const { return params_; }
    const std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>>& buffers() const {
        return buffers_;
    }

    VarPtr<T> find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }
    std::shared_ptr<Tensor<T>> find_buffer(const std::string& name) const {
        auto it = buf_by_name_.find(name);
        return it == buf_by_name_.end() ? nullptr : it->second;
    }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }
    void set_trainable(bool on) {
        for (auto& p : params_) p->requires_grad = on;
    }
    int64_t count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::vector<VarPtr<T>> params_;
    std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>> buffers_;
    std::map<std::string, VarPtr<T>> by_name_;
    std::map<std::string, std::shared_ptr<Tensor<T>>> buf_by_name_;
};

template <class T>
auto init_zero() {
    return [](Tensor<T>& t, Rng&) { t.zero(); };
}
template <class T>
auto init_const(T v) {
    return [v](Tensor<T>& t, Rng&) { t.fill(v); };
}
// Kaiming-style fan-in scaling for ReLU stacks.
template <class T>
auto init_he(int fan_in) {
    return [fan_in](Tensor<T>& t, Rng& r) {
        const double sd = std::sqrt(2.0 / double(fan_in));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(r.normal(0.0, sd));
    };
}
template <class T>
auto init_normal(double sigma) {
    return [sigma](Tensor<T>& t, Rng& r) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(r.normal(0.0, sigma));
    };
}

enum class NormKind { batch, none };

template <class T>
struct Conv2d {
    VarPtr<T> w, b;  // b null when a norm layer follows
    int stride = 1, pad = 0;

    VarPtr<T> forward(Tape<T>* t, const VarPtr<T>& x) const {
        return ag::conv2d(t, x, w, b, stride, pad);
    }
};

template <class T>
Conv2d<T> make_conv2d(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int k,
                      int stride, int pad, bool bias) {
    Conv2d<T> c;
    c.w = ps.param(name + ".w", {out_ch, in_ch, k, k}, init_he<T>(in_ch * k * k));
    if (bias) c.b = ps.param(name + ".b", {out_ch}, init_zero<T>());
    c.stride = stride;
    c.pad = pad;
    return c;
}

template <class T>
struct Norm2d {
    bool enabled = false;
    VarPtr<T> gamma, beta;
    std::shared_ptr<Tensor<T>> run_mean, run_var;
    T momentum = T(0.1), eps = T(1e-5);

    VarPtr<T> forward(Tape<T>* t, const VarPtr<T>& x, bool training) const {
        if (!enabled) return x;
        return ag::batchnorm2d(t, x, gamma, beta, *run_mean, *run_var, training, momentum, eps);
    }
};

template <class T>
Norm2d<T> make_norm2d(ParamStore<T>& ps, const std::string& name, int ch, NormKind kind) {
    Norm2d<T> n;
    if (kind == NormKind::none) return n;
    n.enabled = true;
    n.gamma = ps.param(name + ".gamma", {ch}, init_const<T>(T(1)));
    n.beta = ps.param(name + ".beta", {ch}, init_zero<T>());
    n.run_mean = ps.buffer(name + ".run_mean", {ch}, T(0));
    n.run_var = ps.buffer(name + ".run_var", {ch}, T(1));
    return n;
}

// conv -> norm -> relu
template <class T>
struct ConvNormRelu {
    Conv2d<T> conv;
    Norm2d<T> norm;

    VarPtr<T> forward(Tape<T>* t, const VarPtr<T>& x, bool training) const {
        return ag::relu(t, norm.forward(t, conv.forward(t, x), training));
    }
};

template <class T>
ConvNormRelu<T> make_cnr(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int k,
                         int stride, int pad, NormKind kind) {
    ConvNormRelu<T> m;
    m.conv = make_conv2d(ps, name + ".conv", in_ch, out_ch, k, stride, pad, kind == NormKind::none);
    m.norm = make_norm2d(ps, name + ".norm", out_ch, kind);
    return m;
}

// Channel-wise soft attention over two parallel branches: pooled statistics
// of u1+u2 feed two FC layers, a per-channel 2-way softmax yields (a1, a2),
// and the result is a1*u1 + a2*u2.
template <class T>
struct SplitAttention {
    VarPtr<T> w1, b1, w2, b2;
    int channels = 0;

    VarPtr<T> forward(Tape<T>* t, const VarPtr<T>& u1, const VarPtr<T>& u2) const {
        const int N = u1->value.shape()[0];
        const int C = channels;
        auto s = ag::global_avg_pool(t, ag::add(t, u1, u2));
        auto z = ag::relu(t, ag::linear(t, s, w1, b1));
        auto logits = ag::linear(t, z, w2, b2);  // [N, 2C]: branch-major
        auto soft = ag::softmax_dim1(t, ag::reshape(t, logits, {N, 2, C}));
        auto a1 = ag::reshape(t, ag::slice_dim1(t, soft, 0, 1), {N, C});
        auto a2 = ag::reshape(t, ag::slice_dim1(t, soft, 1, 2), {N, C});
        return ag::add(t, ag::scale_channels(t, u1, a1), ag::scale_channels(t, u2, a2));
    }
};

template <class T>
SplitAttention<T> make_split_attention(ParamStore<T>& ps, const std::string& name, int channels,
                                       int reduction) {
    SplitAttention<T> a;
    a.channels = channels;
    const int hidden = std::max(channels / reduction, 4);
    a.w1 = ps.param(name + ".fc1.w", {hidden, channels}, init_he<T>(channels));
    a.b1 = ps.param(name + ".fc1.b", {hidden}, init_zero<T>());
    a.w2 = ps.param(name + ".fc2.w", {2 * channels, hidden}, init_he<T>(hidden));
    a.b2 = ps.param(name + ".fc2.b", {2 * channels}, init_zero<T>());
    return a;
}

struct ResNestConfig {
    int in_ch = 0;
    int out_ch = 0;
    int stride = 1;
    int reduction = 16;
    NormKind norm = NormKind::batch;
};

// Residual block: the input splits into two cardinal groups of C/2 channels;
// each group runs two branches (1x1 then strided 3x3, both conv-norm-relu,
// C/4 channels), fused by split attention; group outputs concatenate and a
// 1x1 conv forms Z; Y = Z + T(x) with no activation after the sum.
template <class T>
struct ResNestBlock {
    ResNestConfig cfg;
    struct Cardinal {
        ConvNormRelu<T> b0c1, b0c2, b1c1, b1c2;
        SplitAttention<T> attn;
    };
    Cardinal g0, g1;
    Conv2d<T> fuse;
    bool project = false;
    Conv2d<T> proj;
    Norm2d<T> proj_norm;

    VarPtr<T> forward(Tape<T>* t, const VarPtr<T>& x, bool training) const {
        const int C = cfg.in_ch;
        auto run_group = [&](const Cardinal& g, const VarPtr<T>& xi) {
            auto u1 = g.b0c2.forward(t, g.b0c1.forward(t, xi, training), training);
            auto u2 = g.b1c2.forward(t, g.b1c1.forward(t, xi, training), training);
            return g.attn.forward(t, u1, u2);
        };
        auto x0 = ag::slice_dim1(t, x, 0, C / 2);
        auto x1 = ag::slice_dim1(t, x, C / 2, C);
        auto v = ag::concat_channels<T>(t, {run_group(g0, x0), run_group(g1, x1)});
        auto z = fuse.forward(t, v);
        VarPtr<T> tx = x;
        if (project) tx = proj_norm.forward(t, proj.forward(t, x), training);
        return ag::add(t, z, tx);
    }
};

template <class T>
ResNestBlock<T> make_resnest_block(ParamStore<T>& ps, const std::string& name, ResNestConfig cfg) {
    if (cfg.in_ch % 4 != 0)
        throw ConfigError("resnest block: in_channels must be divisible by 4, got " +
                          std::to_string(cfg.in_ch));
    if (cfg.stride != 1 && cfg.stride != 2) throw ConfigError("resnest block: stride must be 1 or 2");
    ResNestBlock<T> blk;
    blk.cfg = cfg;
    const int half = cfg.in_ch / 2, quarter = cfg.in_ch / 4;
    auto make_group = [&](const std::string& gname) {
        typename ResNestBlock<T>::Cardinal g;
        g.b0c1 = make_cnr(ps, gname + ".b0.conv1", half, quarter, 1, 1, 0, cfg.norm);
        g.b0c2 = make_cnr(ps, gname + ".b0.conv2", quarter, quarter, 3, cfg.stride, 1, cfg.norm);
        g.b1c1 = make_cnr(ps, gname + ".b1.conv1", half, quarter, 1, 1, 0, cfg.norm);
        g.b1c2 = make_cnr(ps, gname + ".b1.conv2", quarter, quarter, 3, cfg.stride, 1, cfg.norm);
        g.attn = make_split_attention(ps, gname + ".attn", quarter, cfg.reduction);
        return g;
    };
    blk.g0 = make_group(name + ".g0");
    blk.g1 = make_group(name + ".g1");
    blk.fuse = make_conv2d(ps, name + ".fuse", half, cfg.out_ch, 1, 1, 0, true);
    blk.project = cfg.stride != 1 || cfg.in_ch != cfg.out_ch;
    if (blk.project) {
        blk.proj = make_conv2d(ps, name + ".proj", cfg.in_ch, cfg.out_ch, 1, cfg.stride, 0,
                               cfg.norm == NormKind::none);
        blk.proj_norm = make_norm2d(ps, name + ".proj.norm", cfg.out_ch, cfg.norm);
    }
    return blk;
}

}  // namespace octa::nn
