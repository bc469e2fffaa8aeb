#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "octa/training.hpp"

using namespace octa;
namespace fs = std::filesystem;

namespace {

std::vector<DatasetItem> synth_items(int count, int hw, uint64_t seed) {
    std::vector<DatasetItem> items;
    SynthParams p;
    p.height = hw;
    p.width = hw;
    p.tree_count = 2;
    p.branch_depth = 3;
    p.width_max = 3.0;
    p.noise = 0.05;
    for (int i = 0; i < count; ++i) {
        p.seed = seed + uint64_t(i);
        auto s = synth_generate(p);
        items.push_back({"item" + std::to_string(i), s.image, s.ann});
    }
    return items;
}

TrainConfig quick_tc(int epochs) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.rotation_deg = 5.0;
    tc.seed = 11;
    return tc;
}

CoarseConfig tiny_cc(bool dual) {
    CoarseConfig cc = CoarseConfig::tiny();
    cc.dual_branch = dual;
    return cc;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("octa_train_" + name)).string();
}

BinaryMask disk_mask(int hw, double r) {
    BinaryMask m{hw, hw, std::vector<uint8_t>(size_t(hw) * hw, 0)};
    const double c = (hw - 1) / 2.0;
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x)
            if ((y - c) * (y - c) + (x - c) * (x - c) <= r * r) m.at(y, x) = 1;
    return m;
}

double mask_dice(const BinaryMask& a, const BinaryMask& b) {
    int64_t inter = 0;
    for (size_t i = 0; i < a.v.size(); ++i) inter += a.v[i] & b.v[i];
    return 2.0 * double(inter) / double(a.count() + b.count());
}

}  // namespace

TEST_CASE("poly schedule hits the frozen reference values") {
    CHECK(poly_lr(0, 1000, 5e-4, 0.9) == 5e-4);
    CHECK(poly_lr(500, 1000, 5e-4, 0.9) == doctest::Approx(2.679433656e-4).epsilon(1e-9));
    CHECK(poly_lr(999, 1000, 5e-4, 0.9) > 0.0);
    double prev = 1.0;
    for (int i = 0; i < 100; ++i) {
        const double lr = poly_lr(i, 100, 5e-4, 0.9);
        CHECK(lr < prev);
        prev = lr;
    }
}

TEST_CASE("loss values match hand computations") {
    Tensor<float> pred({1, 1, 2, 2});
    pred[0] = 1.0f;
    pred[1] = 0.5f;
    pred[2] = 0.0f;
    pred[3] = 0.5f;
    Tensor<float> target({1, 1, 2, 2});
    target[0] = 1.0f;
    auto p = ag::parameter(pred, "p");
    // diffs 0, .5, 0, .5 -> mean of squares = 0.125
    CHECK(ag::mse_loss<float>(nullptr, p, target)->value[0] ==
          doctest::Approx(0.125).epsilon(1e-7));

    Tensor<float> ones({1, 1, 2, 2});
    ones.fill(1.0f);
    Tensor<float> half({1, 1, 2, 2});
    half[0] = 1.0f;
    half[1] = 1.0f;
    // dice = 2*2/(4+2), loss = 1/3
    CHECK(ag::dice_loss<float>(nullptr, ag::parameter(ones, "q"), half, 1e-7f)->value[0] ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("rotation by zero is the identity") {
    RasterImage img{4, 5, {}};
    img.v.resize(20);
    for (size_t i = 0; i < 20; ++i) img.v[i] = float(i) / 20.0f;
    const auto out = rotate_image(img, 0.0);
    CHECK(out.v == img.v);
    auto m = disk_mask(9, 3.0);
    CHECK(rotate_mask(m, 0.0).v == m.v);
}

TEST_CASE("rotation round trip keeps the shape") {
    auto m = disk_mask(33, 10.0);
    const auto back = rotate_mask(rotate_mask(m, 10.0), -10.0);
    for (uint8_t v : back.v) CHECK((v == 0 || v == 1));
    CHECK(mask_dice(back, m) >= 0.9);

    RasterImage img{33, 33, std::vector<float>(33 * 33)};
    Rng rng(3);
    for (auto& v : img.v) v = float(rng.uniform());
    const auto rot = rotate_image(img, 10.0);
    CHECK(rot.h == 33);
    CHECK(rot.w == 33);
    for (float v : rot.v) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("augment applies one shared draw per item") {
    auto items = synth_items(1, 64, 9);
    RasterImage img = items[0].image;
    AnnotationSet ann = items[0].ann;

    // zero range: no-op
    Rng r0(1);
    RasterImage i0 = img;
    AnnotationSet a0 = ann;
    augment(i0, a0, r0, 0.0);
    CHECK(i0.v == img.v);
    CHECK(a0.pixel->v == ann.pixel->v);

    // same stream, same result
    Rng r1(2), r2(2);
    RasterImage i1 = img, i2 = img;
    AnnotationSet a1 = ann, a2 = ann;
    augment(i1, a1, r1, 10.0);
    augment(i2, a2, r2, 10.0);
    CHECK(i1.v == i2.v);
    CHECK(a1.pixel->v == a2.pixel->v);
    CHECK(a1.centerline->v == a2.centerline->v);
    for (uint8_t v : a1.pixel->v) CHECK((v == 0 || v == 1));
}

TEST_CASE("adam converges on a quadratic and skips untouched params") {
    Tensor<float> x0 = Tensor<float>::scalar(0.0f);
    auto x = ag::parameter(x0, "x");
    auto dead = ag::parameter(Tensor<float>::scalar(5.0f), "dead");
    Adam<float> opt({x, dead}, 0.0);
    Tensor<float> target = Tensor<float>::scalar(3.0f);
    for (int i = 0; i < 300; ++i) {
        ag::Tape<float> tape;
        auto loss = ag::mse_loss(&tape, x, target);
        x->zero_grad();
        tape.backward(loss);
        opt.step(0.05);
    }
    CHECK(x->value[0] == doctest::Approx(3.0).epsilon(1e-3));
    CHECK(dead->value[0] == 5.0f);  // no grad ever written
    CHECK(opt.steps() == 300);

    // weight decay pulls the fixed point below the target
    auto y = ag::parameter(Tensor<float>::scalar(0.0f), "y");
    Adam<float> opt2({y}, 0.5);
    for (int i = 0; i < 400; ++i) {
        ag::Tape<float> tape;
        auto loss = ag::mse_loss(&tape, y, target);
        y->zero_grad();
        tape.backward(loss);
        opt2.step(0.05);
    }
    CHECK(y->value[0] < 2.9f);
    CHECK(y->value[0] > 1.0f);
}

TEST_CASE("train_coarse runs, logs and reproduces bitwise") {
    auto items = synth_items(2, 64, 21);
    const TrainConfig tc = quick_tc(2);
    const CoarseConfig cc = tiny_cc(true);

    auto r1 = train_coarse(tc, cc, items);
    CHECK(r1.ckpt.stage == "coarse");
    CHECK(r1.ckpt.epoch == 2);
    CHECK(r1.ckpt.seed == tc.seed);
    CHECK(r1.log.size() == 2);
    CHECK(r1.log[0].lr == 5e-4);
    CHECK(r1.log[1].lr < r1.log[0].lr);
    CHECK(r1.log[0].loss_total > 0.0);
    CHECK(r1.log[0].loss_centerline > 0.0);

    auto r2 = train_coarse(tc, cc, items);
    REQUIRE(r1.ckpt.blobs.size() == r2.ckpt.blobs.size());
    for (size_t i = 0; i < r1.ckpt.blobs.size(); ++i) {
        CHECK(r1.ckpt.blobs[i].first == r2.ckpt.blobs[i].first);
        CHECK(r1.ckpt.blobs[i].second == r2.ckpt.blobs[i].second);
    }

    const std::string csv = train_log_csv(r1.log);
    CHECK(csv.find("epoch,lr,loss_pixel,loss_centerline,loss_total,seconds") == 0);

    // single-branch training only needs one annotation
    auto single_items = items;
    for (auto& it : single_items) it.ann.centerline.reset();
    auto r3 = train_coarse(tc, tiny_cc(false), single_items);
    CHECK(r3.log[0].loss_centerline == 0.0);

    // dual training demands both masks
    CHECK_THROWS_AS(train_coarse(tc, cc, single_items), DataError);
    CHECK_THROWS_AS(train_coarse(tc, cc, {}), DataError);
}

TEST_CASE("coarse loss decreases while overfitting one image") {
    auto items = synth_items(1, 64, 22);
    TrainConfig tc = quick_tc(12);
    tc.rotation_deg = 0.0;
    auto res = train_coarse(tc, tiny_cc(true), items);
    CHECK(res.log.back().loss_total < res.log.front().loss_total);
}

TEST_CASE("checkpoint container round trips bitwise") {
    auto items = synth_items(1, 64, 23);
    auto res = train_coarse(quick_tc(1), tiny_cc(true), items);
    const std::string path = temp_path("roundtrip.ckpt");
    save_checkpoint(path, res.ckpt);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.version == res.ckpt.version);
    CHECK(back.stage == res.ckpt.stage);
    CHECK(back.epoch == res.ckpt.epoch);
    CHECK(back.seed == res.ckpt.seed);
    CHECK(back.adam_steps == res.ckpt.adam_steps);
    CHECK(back.coarse_source == res.ckpt.coarse_source);
    CHECK(back.config_echo == res.ckpt.config_echo);
    REQUIRE(back.blobs.size() == res.ckpt.blobs.size());
    for (size_t i = 0; i < back.blobs.size(); ++i) {
        CHECK(back.blobs[i].first == res.ckpt.blobs[i].first);
        CHECK(back.blobs[i].second == res.ckpt.blobs[i].second);
    }
    CHECK(back.find_blob("coarse.stem.conv.w") != nullptr);
    CHECK(back.find_blob("adam.m/coarse.stem.conv.w") != nullptr);
    CHECK(back.find_blob("nope") == nullptr);
    fs::remove(path);
}

TEST_CASE("checkpoint rejects corruption") {
    auto items = synth_items(1, 64, 24);
    auto res = train_coarse(quick_tc(1), tiny_cc(false), items);
    const std::string path = temp_path("corrupt.ckpt");
    save_checkpoint(path, res.ckpt);

    std::string raw = read_text_file(path);
    CHECK_THROWS_AS(load_checkpoint(path + ".missing"), DataError);

    write_text_file(path, "NOTACKPT" + raw.substr(8));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    // flip a config echo byte: the stored hash must catch it
    const size_t pos = raw.find("epochs");
    REQUIRE(pos != std::string::npos);
    std::string tampered = raw;
    tampered[pos] = 'E';
    write_text_file(path, tampered);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    fs::remove(path);
}

TEST_CASE("model config echo round trips") {
    CoarseConfig cc = tiny_cc(true);
    cc.shared_stages = 2;
    cc.centerline_blocks = 3;
    SrsConfig sc = SrsConfig::for_m(5, true);
    const std::string echo = encode_model_config(cc, &sc);
    CoarseConfig cc2;
    std::optional<SrsConfig> sc2;
    decode_model_config(echo, cc2, sc2);
    CHECK(cc2.base_width == cc.base_width);
    CHECK(cc2.dual_branch == cc.dual_branch);
    CHECK(cc2.shared_stages == 2);
    CHECK(cc2.centerline_blocks == 3);
    REQUIRE(sc2.has_value());
    CHECK(sc2->m == 5);
    CHECK(sc2->hidden_channels[2] == 25);

    std::optional<SrsConfig> none;
    CoarseConfig cc3;
    decode_model_config(encode_model_config(cc, nullptr), cc3, none);
    CHECK_FALSE(none.has_value());
    CHECK(cc3.base_width == cc.base_width);
}

TEST_CASE("fine stage freezes the coarse net unless joint") {
    auto items = synth_items(2, 64, 25);
    auto coarse = train_coarse(quick_tc(1), tiny_cc(true), items);
    const SrsConfig sc = SrsConfig::for_m(3, true);

    auto frozen = train_fine(quick_tc(2), sc, items, coarse.ckpt, "origin.ckpt");
    CHECK(frozen.ckpt.stage == "fine");
    CHECK(frozen.ckpt.coarse_source == "origin.ckpt");

    // every coarse parameter and buffer survives bitwise
    int compared = 0;
    for (const auto& [name, data] : coarse.ckpt.blobs) {
        if (name.rfind("adam.", 0) == 0) continue;
        const auto* kept = frozen.ckpt.find_blob(name);
        REQUIRE(kept != nullptr);
        CHECK(*kept == data);
        ++compared;
    }
    CHECK(compared > 10);

    // srs parameters moved away from their init
    nn::ParamStore<float> fresh(frozen.ckpt.seed);
    build_srs(fresh, sc, "srs");
    bool srs_moved = false;
    for (const auto& p : fresh.params()) {
        const auto* trained = frozen.ckpt.find_blob(p->name);
        REQUIRE(trained != nullptr);
        for (int64_t i = 0; i < p->value.numel(); ++i)
            srs_moved = srs_moved || (*trained)[size_t(i)] != p->value[i];
    }
    CHECK(srs_moved);

    // joint mode lets the coarse weights drift
    TrainConfig jtc = quick_tc(2);
    jtc.joint = true;
    auto joint = train_fine(jtc, sc, items, coarse.ckpt, "");
    bool coarse_moved = false;
    for (const auto& [name, data] : coarse.ckpt.blobs) {
        if (name.rfind("adam.", 0) == 0 || name.rfind("coarse.", 0) != 0) continue;
        const auto* now = joint.ckpt.find_blob(name);
        REQUIRE(now != nullptr);
        coarse_moved = coarse_moved || *now != data;
    }
    CHECK(coarse_moved);

    // stage validation
    CHECK_THROWS_AS(train_fine(quick_tc(1), sc, items, frozen.ckpt, ""), DataError);
}

TEST_CASE("fine stage works on centerline-only data with a single branch") {
    auto items = synth_items(1, 64, 26);
    for (auto& it : items) {
        it.ann.centerline = it.ann.pixel;  // treat the pixel mask as the only target
        it.ann.pixel.reset();
    }
    auto coarse = train_coarse(quick_tc(1), tiny_cc(false), items);
    auto fine = train_fine(quick_tc(1), SrsConfig::for_m(3, false), items, coarse.ckpt, "");
    CHECK(fine.ckpt.stage == "fine");
    CHECK(fine.log.size() == 1);

    // a dual refiner cannot ride on a single-branch coarse checkpoint
    CHECK_THROWS_AS(train_fine(quick_tc(1), SrsConfig::for_m(3, true), items, coarse.ckpt, ""),
                    DataError);
}

TEST_CASE("training config validation") {
    TrainConfig tc;
    CHECK_NOTHROW(tc.validate());
    tc.epochs = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig();
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig();
    tc.lr0 = -1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig();
    tc.poly_power = 0.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig();
    tc.rotation_deg = -5.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}
