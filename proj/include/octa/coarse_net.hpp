#pragma once

#include <string>
#include <vector>

#include "octa/nn.hpp"

namespace octa {

// U-shaped coarse segmentation network. Five encoder stages of residual
// split-attention blocks (widths base_width*{1,2,4,8,16}, stride 2 between
// stages), a skip-connected decoder (upsample x2 then block per stage), and
// a sigmoid head per branch. The centerline branch taps the last shared
// encoder stage, runs a short block stack there, and upsamples straight to
// full resolution.
struct CoarseConfig {
    int base_width = 64;
    int depth = 5;
    bool dual_branch = true;
    int shared_stages = 3;
    int centerline_blocks = 2;
    int reduction = 16;

    void validate() const {
        if (base_width < 4 || base_width % 4 != 0)
            throw ConfigError("coarse: base_width must be a positive multiple of 4");
        if (depth != 5) throw ConfigError("coarse: depth is fixed at 5");
        if (shared_stages < 1 || shared_stages > depth)
            throw ConfigError("coarse: shared_stages must be in [1, depth]");
        if (dual_branch && centerline_blocks < 1)
            throw ConfigError("coarse: dual_branch requires centerline_blocks >= 1");
        if (reduction < 1) throw ConfigError("coarse: reduction must be positive");
    }

    static CoarseConfig tiny() {
        CoarseConfig c;
        c.base_width = 8;
        return c;
    }
};

template <class T>
struct CoarseNet {
    CoarseConfig cfg;
    nn::ConvNormRelu<T> stem;
    std::vector<nn::ResNestBlock<T>> enc;  // depth stages
    std::vector<nn::ResNestBlock<T>> dec;  // depth-1 stages, deepest first
    nn::Conv2d<T> pixel_head;
    std::vector<nn::ResNestBlock<T>> cl_blocks;
    nn::Conv2d<T> cl_head;

    struct Out {
        ag::VarPtr<T> pixel;
        ag::VarPtr<T> centerline;  // null for single-branch nets
    };

    // x: [N,1,H,W] with H, W divisible by 2^(depth-1)
    Out forward(nn::Tape<T>* t, const ag::VarPtr<T>& x, bool training) const {
        const auto& s = x->value.shape();
        if (s.size() != 4 || s[1] != 1) throw ShapeError("coarse forward: expected [N,1,H,W]");
        const int div = 1 << (cfg.depth - 1);
        if (s[2] % div != 0 || s[3] % div != 0)
            throw ShapeError("coarse forward: H and W must be divisible by " + std::to_string(div));

        std::vector<ag::VarPtr<T>> skips;
        auto h = stem.forward(t, x, training);
        for (const auto& blk : enc) {
            h = blk.forward(t, h, training);
            skips.push_back(h);
        }
        for (int i = 0; i < int(dec.size()); ++i) {
            auto up = ag::upsample_bilinear(t, h, 2);
            h = dec[size_t(i)].forward(
                t, ag::concat_channels<T>(t, {up, skips[size_t(cfg.depth - 2 - i)]}), training);
        }
        Out out;
        out.pixel = ag::sigmoid(t, pixel_head.forward(t, h));
        if (cfg.dual_branch) {
            auto c = skips[size_t(cfg.shared_stages - 1)];
            for (const auto& blk : cl_blocks) c = blk.forward(t, c, training);
            c = ag::upsample_bilinear(t, c, 1 << (cfg.shared_stages - 1));
            out.centerline = ag::sigmoid(t, cl_head.forward(t, c));
        }
        return out;
    }
};

template <class T>
CoarseNet<T> build_coarse(nn::ParamStore<T>& ps, const CoarseConfig& cfg,
                          const std::string& prefix = "coarse") {
    cfg.validate();
    CoarseNet<T> net;
    net.cfg = cfg;
    const int b = cfg.base_width;
    auto width = [&](int stage) { return b << (stage - 1); };  // stage is 1-based

    net.stem = nn::make_cnr(ps, prefix + ".stem", 1, b, 3, 1, 1, nn::NormKind::batch);
    for (int stage = 1; stage <= cfg.depth; ++stage) {
        nn::ResNestConfig rc;
        rc.in_ch = stage == 1 ? b : width(stage - 1);
        rc.out_ch = width(stage);
        rc.stride = stage == 1 ? 1 : 2;
        rc.reduction = cfg.reduction;
        net.enc.push_back(nn::make_resnest_block(ps, prefix + ".e" + std::to_string(stage), rc));
    }
    for (int stage = cfg.depth - 1; stage >= 1; --stage) {
        nn::ResNestConfig rc;
        rc.in_ch = width(stage + 1) + width(stage);  // upsampled deep path + skip
        rc.out_ch = width(stage);
        rc.stride = 1;
        rc.reduction = cfg.reduction;
        net.dec.push_back(nn::make_resnest_block(ps, prefix + ".d" + std::to_string(stage), rc));
    }
    net.pixel_head = nn::make_conv2d(ps, prefix + ".pixel_head", b, 1, 1, 1, 0, true);
    if (cfg.dual_branch) {
        const int cw = width(cfg.shared_stages);
        for (int i = 0; i < cfg.centerline_blocks; ++i) {
            nn::ResNestConfig rc;
            rc.in_ch = cw;
            rc.out_ch = cw;
            rc.stride = 1;
            rc.reduction = cfg.reduction;
            net.cl_blocks.push_back(
                nn::make_resnest_block(ps, prefix + ".cl" + std::to_string(i), rc));
        }
        net.cl_head = nn::make_conv2d(ps, prefix + ".cl_head", cw, 1, 1, 1, 0, true);
    }
    return net;
}

}  // namespace octa
