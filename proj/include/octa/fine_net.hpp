#pragma once

#include <string>
#include <vector>

#include "octa/nn.hpp"

namespace octa {

// Refinement stage: a mini conv net that predicts, per pixel, a softmax
//-normalized m*m coefficient vector used to re-aggregate a coarse
// confidence map over its local neighborhood.
struct SrsConfig {
    int m = 3;
    std::vector<int> hidden_channels = {32, 32, 9};  // last entry must equal m*m
    bool refine_centerline_branch = true;
    double init_sigma = 1e-4;

    void validate() const {
        if (m < 1 || m % 2 == 0) throw ConfigError("srs: m must be odd and positive");
        if (hidden_channels.size() != 3) throw ConfigError("srs: hidden_channels must have length 3");
        if (hidden_channels[0] < 1 || hidden_channels[1] < 1)
            throw ConfigError("srs: hidden widths must be positive");
        if (hidden_channels[2] != m * m)
            throw ConfigError("srs: last hidden_channels entry must equal m*m");
        if (!(init_sigma > 0.0) || init_sigma >= 1.0)
            throw ConfigError("srs: init_sigma must be in (0,1)");
    }

    static SrsConfig for_m(int m_, bool dual) {
        SrsConfig c;
        c.m = m_;
        c.hidden_channels = {32, 32, m_ * m_};
        c.refine_centerline_branch = dual;
        return c;
    }
};

// All kernels start at N(0, sigma^2) and all biases at zero, except the
// center-offset channel of each field head whose bias is 1: the initial
// coefficient vector is then softmax(1, 0, ..., 0), a fixed center-weighted
// kernel (center e/(e+m*m-1)). The field heads stay bare: normalizing the
// logits would erase exactly that bias.
template <class T>
struct SrsRefiner {
    SrsConfig cfg;
    nn::ConvNormRelu<T> l1, l2;
    nn::Conv2d<T> head_pixel;
    nn::Conv2d<T> head_centerline;  // only when refine_centerline_branch

    struct Out {
        ag::VarPtr<T> field_pixel, field_centerline;      // softmaxed coefficients
        ag::VarPtr<T> refined_pixel, refined_centerline;  // propagated maps
        ag::VarPtr<T> final_map;
    };

    // img, pixel: [N,1,H,W]; centerline null in single-branch mode (the
    // available coarse map is duplicated to keep the 3-channel interface).
    Out forward(nn::Tape<T>* t, const ag::VarPtr<T>& img, const ag::VarPtr<T>& pixel,
                const ag::VarPtr<T>& centerline, bool training) const {
        if (!pixel) throw ShapeError("srs forward: pixel map required");
        if (cfg.refine_centerline_branch && !centerline)
            throw ShapeError("srs forward: dual refiner needs a centerline map");
        auto cl_in = centerline ? centerline : pixel;
        auto x = ag::concat_channels<T>(t, {img, pixel, cl_in});
        auto h = l2.forward(t, l1.forward(t, x, training), training);
        Out out;
        out.field_pixel = ag::softmax_dim1(t, head_pixel.forward(t, h));
        out.refined_pixel = ag::propagate(t, out.field_pixel, pixel, cfg.m);
        if (cfg.refine_centerline_branch) {
            out.field_centerline = ag::softmax_dim1(t, head_centerline.forward(t, h));
            out.refined_centerline = ag::propagate(t, out.field_centerline, centerline, cfg.m);
            out.final_map = ag::maximum(t, out.refined_pixel, out.refined_centerline);
        } else {
            out.final_map = out.refined_pixel;
        }
        return out;
    }
};

template <class T>
SrsRefiner<T> build_srs(nn::ParamStore<T>& ps, const SrsConfig& cfg,
                        const std::string& prefix = "srs") {
    cfg.validate();
    SrsRefiner<T> net;
    net.cfg = cfg;
    const int h0 = cfg.hidden_channels[0], h1 = cfg.hidden_channels[1], P = cfg.m * cfg.m;
    const double sigma = cfg.init_sigma;

    auto make_layer = [&](const std::string& name, int in_ch, int out_ch) {
        nn::ConvNormRelu<T> m;
        m.conv.w = ps.param(name + ".conv.w", {out_ch, in_ch, 3, 3}, nn::init_normal<T>(sigma));
        m.conv.stride = 1;
        m.conv.pad = 1;
        m.norm = nn::make_norm2d(ps, name + ".norm", out_ch, nn::NormKind::batch);
        return m;
    };
    auto make_head = [&](const std::string& name, int in_ch) {
        nn::Conv2d<T> c;
        c.w = ps.param(name + ".w", {P, in_ch, 3, 3}, nn::init_normal<T>(sigma));
        c.b = ps.param(name + ".b", {P}, [P](Tensor<T>& tns, Rng&) {
            tns.zero();
            tns[(P - 1) / 2] = T(1);
        });
        c.stride = 1;
        c.pad = 1;
        return c;
    };

    net.l1 = make_layer(prefix + ".l1", 3, h0);
    net.l2 = make_layer(prefix + ".l2", h0, h1);
    net.head_pixel = make_head(prefix + ".head_pixel", h1);
    if (cfg.refine_centerline_branch) net.head_centerline = make_head(prefix + ".head_cl", h1);
    return net;
}

}  // namespace octa
