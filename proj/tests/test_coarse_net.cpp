#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "octa/coarse_net.hpp"

using namespace octa;

namespace {

CoarseConfig tiny_cfg(bool dual) {
    CoarseConfig c = CoarseConfig::tiny();
    c.dual_branch = dual;
    c.reduction = 4;
    return c;
}

ag::VarPtr<float> rand_input(uint64_t seed, int n, int h, int w) {
    Tensor<float> t({n, 1, h, w});
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform());
    return ag::constant(std::move(t));
}

}  // namespace

TEST_CASE("config validation") {
    CoarseConfig c;
    CHECK_NOTHROW(c.validate());
    c.base_width = 6;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = CoarseConfig();
    c.depth = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = CoarseConfig();
    c.shared_stages = 6;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = CoarseConfig();
    c.centerline_blocks = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(CoarseConfig::tiny().base_width == 8);
}

TEST_CASE("dual branch emits two full-resolution sigmoid maps") {
    nn::ParamStore<float> ps(21);
    auto net = build_coarse(ps, tiny_cfg(true));
    auto x = rand_input(1, 2, 32, 48);
    auto out = net.forward(nullptr, x, false);
    REQUIRE(out.pixel != nullptr);
    REQUIRE(out.centerline != nullptr);
    CHECK(out.pixel->value.shape() == std::vector<int>{2, 1, 32, 48});
    CHECK(out.centerline->value.shape() == std::vector<int>{2, 1, 32, 48});
    // eval-mode batchnorm with untrained running stats can push logits deep
    // into saturation, so float sigmoid attains the closed interval
    for (int64_t i = 0; i < out.pixel->value.numel(); ++i) {
        CHECK(out.pixel->value[i] >= 0.0f);
        CHECK(out.pixel->value[i] <= 1.0f);
        CHECK(out.centerline->value[i] >= 0.0f);
        CHECK(out.centerline->value[i] <= 1.0f);
    }
}

TEST_CASE("single branch has no centerline head") {
    nn::ParamStore<float> ps(22);
    auto net = build_coarse(ps, tiny_cfg(false));
    auto out = net.forward(nullptr, rand_input(2, 1, 16, 16), false);
    CHECK(out.pixel != nullptr);
    CHECK(out.centerline == nullptr);

    nn::ParamStore<float> ps2(22);
    auto dual = build_coarse(ps2, tiny_cfg(true));
    CHECK(ps2.count() > ps.count());
}

TEST_CASE("input contract is enforced") {
    nn::ParamStore<float> ps(23);
    auto net = build_coarse(ps, tiny_cfg(true));
    CHECK_THROWS_AS(net.forward(nullptr, rand_input(3, 1, 24, 32), false), ShapeError);
    CHECK_THROWS_AS(net.forward(nullptr, rand_input(3, 1, 32, 20), false), ShapeError);
    Tensor<float> two({1, 2, 32, 32});
    CHECK_THROWS_AS(net.forward(nullptr, ag::constant(std::move(two)), false), ShapeError);
}

TEST_CASE("forward is deterministic for a fixed seed") {
    auto run = [](uint64_t seed) {
        nn::ParamStore<float> ps(seed);
        auto net = build_coarse(ps, tiny_cfg(true));
        auto out = net.forward(nullptr, rand_input(4, 1, 32, 32), false);
        return out;
    };
    auto a = run(31);
    auto b = run(31);
    for (int64_t i = 0; i < a.pixel->value.numel(); ++i) {
        CHECK(a.pixel->value[i] == b.pixel->value[i]);
        CHECK(a.centerline->value[i] == b.centerline->value[i]);
    }
    auto c = run(32);
    bool differs = false;
    for (int64_t i = 0; i < a.pixel->value.numel(); ++i)
        differs = differs || a.pixel->value[i] != c.pixel->value[i];
    CHECK(differs);
}

TEST_CASE("encoder deepens to width 16b and decoder restores resolution") {
    nn::ParamStore<float> ps(24);
    CoarseConfig cfg = tiny_cfg(true);
    auto net = build_coarse(ps, cfg);
    // stage widths b, 2b, 4b, 8b, 16b
    CHECK(net.enc.size() == 5);
    CHECK(net.dec.size() == 4);
    CHECK(net.enc[4].cfg.out_ch == cfg.base_width * 16);
    CHECK(net.enc[0].cfg.stride == 1);
    for (int i = 1; i < 5; ++i) CHECK(net.enc[size_t(i)].cfg.stride == 2);
    // centerline branch taps the shared stage and keeps its width
    CHECK(int(net.cl_blocks.size()) == cfg.centerline_blocks);
    CHECK(net.cl_blocks[0].cfg.in_ch == cfg.base_width * 4);

    // deepest feature map is H/16
    auto x = rand_input(5, 1, 32, 32);
    ag::Tape<float> tape;
    auto out = net.forward(&tape, x, true);
    CHECK(out.pixel->value.shape() == std::vector<int>{1, 1, 32, 32});
}

TEST_CASE("training mode touches batch norm buffers, eval does not") {
    nn::ParamStore<float> ps(25);
    auto net = build_coarse(ps, tiny_cfg(false));
    auto snapshot = [&] {
        std::vector<float> all;
        for (const auto& [name, buf] : ps.buffers())
            for (int64_t i = 0; i < buf->numel(); ++i) all.push_back((*buf)[i]);
        return all;
    };
    const auto before = snapshot();
    net.forward(nullptr, rand_input(6, 1, 16, 16), false);
    CHECK(snapshot() == before);
    net.forward(nullptr, rand_input(6, 1, 16, 16), true);
    CHECK(snapshot() != before);
}
