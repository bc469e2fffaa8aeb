#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "octa/fine_net.hpp"
#include "octa/training.hpp"

using namespace octa;

namespace {

ag::VarPtr<float> rand_map(uint64_t seed, int h, int w, double lo = 0.0, double hi = 1.0) {
    Tensor<float> t({1, 1, h, w});
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform(lo, hi));
    return ag::constant(std::move(t));
}

}  // namespace

TEST_CASE("config validation") {
    SrsConfig c;
    CHECK_NOTHROW(c.validate());
    c.m = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SrsConfig::for_m(5, true);
    CHECK(c.hidden_channels[2] == 25);
    CHECK_NOTHROW(c.validate());
    c.hidden_channels[2] = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SrsConfig();
    c.init_sigma = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("initial propagation coefficients follow the bias-softmax law") {
    // with sigma = 1e-4 the conv terms are negligible and the field head
    // bias (1 at the center offset) dominates: softmax gives the center
    // e/(e+8) and each neighbor 1/(e+8)
    nn::ParamStore<float> ps(41);
    auto net = build_srs(ps, SrsConfig(), "srs");
    const int H = 12, W = 16;
    auto out = net.forward(nullptr, rand_map(1, H, W), rand_map(2, H, W), rand_map(3, H, W),
                           false);
    const double e = std::exp(1.0);
    const double center = e / (e + 8.0);
    const double side = 1.0 / (e + 8.0);
    const auto& f = out.field_pixel->value;
    REQUIRE(f.shape() == std::vector<int>{1, 9, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int p = 0; p < 9; ++p) {
                const double want = p == 4 ? center : side;
                CHECK(std::abs(double(f.at(0, p, y, x)) - want) < 5e-4);
            }
    for (int64_t i = 0; i < f.numel(); ++i) {
        CHECK(out.field_centerline->value[i] ==
              doctest::Approx(f[i]).epsilon(1e-3));
    }
}

TEST_CASE("coefficients stay normalized at init and after 50 training steps") {
    nn::ParamStore<float> ps(42);
    auto net = build_srs(ps, SrsConfig(), "srs");
    const int H = 8, W = 8;
    auto img = rand_map(4, H, W);
    auto pix = rand_map(5, H, W, 0.1, 0.9);
    auto cl = rand_map(6, H, W, 0.1, 0.9);
    Tensor<float> target({1, 1, H, W});
    Rng trng(7);
    for (int64_t i = 0; i < target.numel(); ++i) target[i] = trng.uniform() < 0.5f ? 1.0f : 0.0f;

    auto check_norm = [&](const Tensor<float>& field) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                for (int p = 0; p < 9; ++p) s += field.at(0, p, y, x);
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
    };

    check_norm(net.forward(nullptr, img, pix, cl, false).field_pixel->value);

    Adam<float> opt(ps.params(), 1e-4);
    for (int step = 0; step < 50; ++step) {
        ag::Tape<float> tape;
        auto out = net.forward(&tape, img, pix, cl, true);
        auto loss = ag::dice_loss(&tape, out.final_map, target, 1e-6f);
        ps.zero_grads();
        tape.backward(loss);
        opt.step(5e-4);
    }
    auto out = net.forward(nullptr, img, pix, cl, false);
    check_norm(out.field_pixel->value);
    check_norm(out.field_centerline->value);
}

TEST_CASE("one-hot center field is the identity propagation") {
    const int H = 6, W = 7;
    Tensor<float> field({1, 9, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) field.at(0, 4, y, x) = 1.0f;
    auto src = rand_map(8, H, W);
    auto out = ag::propagate<float>(nullptr, ag::constant(std::move(field)), src, 3);
    for (int64_t i = 0; i < src->value.numel(); ++i) CHECK(out->value[i] == src->value[i]);
}

TEST_CASE("uniform field on an all-ones source keeps interior at one") {
    const int H = 8, W = 9;
    Tensor<float> field({1, 9, H, W});
    field.fill(1.0f / 9.0f);
    Tensor<float> ones({1, 1, H, W});
    ones.fill(1.0f);
    auto out = ag::propagate<float>(nullptr, ag::constant(std::move(field)),
                             ag::constant(std::move(ones)), 3);
    for (int y = 1; y + 1 < H; ++y)
        for (int x = 1; x + 1 < W; ++x)
            CHECK(out->value.at(0, 0, y, x) == doctest::Approx(1.0).epsilon(1e-6));
    // borders lose out-of-frame mass, so they fall below one
    CHECK(out->value.at(0, 0, 0, 0) < 1.0f);
}

TEST_CASE("propagation is bounded by the neighborhood extremes") {
    const int H = 9, W = 9;
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        Tensor<float> logits({1, 9, H, W});
        for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = float(rng.uniform(-2.0, 2.0));
        auto field = ag::softmax_dim1<float>(nullptr, ag::constant(std::move(logits)));
        Tensor<float> src({1, 1, H, W});
        for (int64_t i = 0; i < src.numel(); ++i) src[i] = float(rng.uniform());
        auto srcv = ag::constant(src);
        auto out = ag::propagate<float>(nullptr, field, srcv, 3);
        for (int y = 1; y + 1 < H; ++y)
            for (int x = 1; x + 1 < W; ++x) {
                float lo = 1e30f, hi = -1e30f;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const float v = src.at(0, 0, y + dy, x + dx);
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                    }
                const float got = out->value.at(0, 0, y, x);
                CHECK(got <= hi + 1e-6f);
                CHECK(got >= lo - 1e-6f);
            }
    }
}

TEST_CASE("branch plumbing and validation") {
    nn::ParamStore<float> ps(43);
    auto dual = build_srs(ps, SrsConfig::for_m(3, true), "d");
    CHECK_THROWS_AS(dual.forward(nullptr, rand_map(9, 8, 8), rand_map(10, 8, 8), nullptr, false),
                    ShapeError);

    nn::ParamStore<float> ps2(43);
    auto single = build_srs(ps2, SrsConfig::for_m(3, false), "s");
    auto out = single.forward(nullptr, rand_map(9, 8, 8), rand_map(10, 8, 8), nullptr, false);
    CHECK(out.field_centerline == nullptr);
    CHECK(out.refined_centerline == nullptr);
    CHECK(out.final_map == out.refined_pixel);

    // the fused dual output is the elementwise max of the refined branches
    auto img = rand_map(11, 8, 8);
    auto pix = rand_map(12, 8, 8);
    auto cl = rand_map(13, 8, 8);
    auto dout = dual.forward(nullptr, img, pix, cl, false);
    for (int64_t i = 0; i < dout.final_map->value.numel(); ++i)
        CHECK(dout.final_map->value[i] == std::max(dout.refined_pixel->value[i],
                                                   dout.refined_centerline->value[i]));
}
