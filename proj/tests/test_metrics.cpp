#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "octa/data_io.hpp"
#include "octa/metrics.hpp"

using namespace octa;

namespace {

BinaryMask mask_of(int h, int w, std::vector<uint8_t> v) {
    return BinaryMask{h, w, std::move(v)};
}

ConfidenceMap random_map(Rng& rng, int h, int w) {
    ConfidenceMap m{h, w, std::vector<float>(size_t(h) * w)};
    for (auto& v : m.v) v = float(rng.uniform());
    return m;
}

BinaryMask random_mask(Rng& rng, int h, int w, double p) {
    BinaryMask m{h, w, std::vector<uint8_t>(size_t(h) * w)};
    for (auto& v : m.v) v = rng.uniform() < p ? 1 : 0;
    return m;
}

// O(P*N) Mann-Whitney statistic: ties count one half
double auc_by_pairs(const ConfidenceMap& map, const BinaryMask& gt) {
    std::vector<float> pos, neg;
    for (size_t i = 0; i < map.v.size(); ++i) (gt.v[i] ? pos : neg).push_back(map.v[i]);
    double wins = 0.0;
    for (float p : pos)
        for (float n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return wins / (double(pos.size()) * double(neg.size()));
}

}  // namespace

TEST_CASE("worked example reproduces the reference metric values") {
    ConfusionCounts c;
    c.tp = 2;
    c.fp = 1;
    c.fn = 1;
    c.tn = 12;
    const MetricsRow m = basic_metrics(c);
    CHECK(std::abs(m.kappa - 0.5897) < 5e-5);
    CHECK(std::abs(m.gmean - 0.7845) < 5e-5);
    CHECK(std::abs(m.dice - 0.6667) < 5e-5);
    CHECK(m.acc == doctest::Approx(14.0 / 16.0).epsilon(1e-12));
    CHECK(m.sen == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.spe == doctest::Approx(12.0 / 13.0).epsilon(1e-12));
    CHECK(m.fdr == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("metrics equal a brute-force loop on 1000 random pairs") {
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto pred = random_mask(rng, 8, 8, rng.uniform(0.05, 0.95));
        const auto gt = random_mask(rng, 8, 8, rng.uniform(0.05, 0.95));
        const ConfusionCounts c = confusion(pred, gt);

        int64_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (int i = 0; i < 64; ++i) {
            if (pred.v[size_t(i)] && gt.v[size_t(i)]) ++tp;
            if (pred.v[size_t(i)] && !gt.v[size_t(i)]) ++fp;
            if (!pred.v[size_t(i)] && !gt.v[size_t(i)]) ++tn;
            if (!pred.v[size_t(i)] && gt.v[size_t(i)]) ++fn;
        }
        REQUIRE(c.tp == tp);
        REQUIRE(c.fp == fp);
        REQUIRE(c.tn == tn);
        REQUIRE(c.fn == fn);

        const MetricsRow m = basic_metrics(c);
        const double total = 64.0;
        const double acc = double(tp + tn) / total;
        CHECK(m.acc == acc);
        if (tp + fn > 0)
            CHECK(m.sen == double(tp) / double(tp + fn));
        else
            CHECK(std::isnan(m.sen));
        if (tn + fp > 0)
            CHECK(m.spe == double(tn) / double(tn + fp));
        else
            CHECK(std::isnan(m.spe));
        if (tp + fp > 0)
            CHECK(m.fdr == double(fp) / double(tp + fp));
        else
            CHECK(std::isnan(m.fdr));
        if (2 * tp + fp + fn > 0)
            CHECK(m.dice == 2.0 * double(tp) / double(2 * tp + fp + fn));
        else
            CHECK(std::isnan(m.dice));
        const double pe =
            (double(tp + fn) * double(tp + fp) + double(tn + fp) * double(tn + fn)) /
            (total * total);
        if (pe < 1.0)
            CHECK(m.kappa == doctest::Approx((acc - pe) / (1.0 - pe)).epsilon(1e-12));
        if (!std::isnan(m.sen) && !std::isnan(m.spe))
            CHECK(m.gmean == doctest::Approx(std::sqrt(m.sen * m.spe)).epsilon(1e-12));
        else
            CHECK(std::isnan(m.gmean));
    }
}

TEST_CASE("trapezoidal auc equals pair counting on 100 random instances") {
    Rng rng(102);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = 5 + int(rng.uniform_int(0, 3));
        const int w = 5 + int(rng.uniform_int(0, 3));
        auto map = random_map(rng, h, w);
        // quantize some trials to force ties
        if (trial % 3 == 0)
            for (auto& v : map.v) v = std::round(v * 4.0f) / 4.0f;
        BinaryMask gt = random_mask(rng, h, w, 0.4);
        if (gt.count() == 0) gt.v[0] = 1;
        if (gt.count() == int64_t(gt.v.size())) gt.v[0] = 0;
        const RocCurve roc = roc_auc(map, gt);
        CHECK(std::abs(roc.auc - auc_by_pairs(map, gt)) < 1e-12);
        CHECK(roc.points.front().first == 0.0);
        CHECK(roc.points.front().second == 0.0);
        CHECK(roc.points.back().first == 1.0);
        CHECK(roc.points.back().second == 1.0);
    }
}

TEST_CASE("auc edge cases") {
    Rng rng(103);
    // constant map: one threshold step, exactly one half
    ConfidenceMap flat{4, 4, std::vector<float>(16, 0.7f)};
    auto gt = random_mask(rng, 4, 4, 0.5);
    if (gt.count() == 0) gt.v[3] = 1;
    if (gt.count() == 16) gt.v[3] = 0;
    CHECK(roc_auc(flat, gt).auc == 0.5);

    // perfect separation and its inversion
    ConfidenceMap m{2, 2, {0.9f, 0.8f, 0.2f, 0.1f}};
    BinaryMask g{2, 2, {1, 1, 0, 0}};
    CHECK(roc_auc(m, g).auc == 1.0);
    BinaryMask ginv{2, 2, {0, 0, 1, 1}};
    CHECK(roc_auc(m, ginv).auc == 0.0);

    // monotone transforms leave the sweep invariant
    const auto map = random_map(rng, 8, 8);
    auto gt2 = random_mask(rng, 8, 8, 0.3);
    if (gt2.count() == 0) gt2.v[5] = 1;
    ConfidenceMap warped = map;
    for (auto& v : warped.v) v = 0.1f + 0.8f * v * v * v;
    CHECK(std::abs(roc_auc(map, gt2).auc - roc_auc(warped, gt2).auc) < 1e-12);

    // single-class input is refused
    BinaryMask allpos{2, 2, {1, 1, 1, 1}};
    CHECK_THROWS_AS(roc_auc(m, allpos), DataError);

    // region restriction equals evaluating the cropped instance
    ConfidenceMap big = random_map(rng, 6, 6);
    BinaryMask lab = random_mask(rng, 6, 6, 0.5);
    lab.at(0, 0) = 1;
    lab.at(1, 0) = 0;
    BinaryMask region{6, 6, std::vector<uint8_t>(36, 0)};
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 3; ++x) region.at(y, x) = 1;
    ConfidenceMap crop{6, 3, {}};
    BinaryMask labc{6, 3, {}};
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 3; ++x) {
            crop.v.push_back(big.at(y, x));
            labc.v.push_back(lab.at(y, x));
        }
    CHECK(roc_auc(big, lab, &region).auc == doctest::Approx(roc_auc(crop, labc).auc).epsilon(1e-12));
}

TEST_CASE("kappa of independent prediction is near zero") {
    Rng rng(104);
    const auto pred = random_mask(rng, 200, 200, 0.3);
    const auto gt = random_mask(rng, 200, 200, 0.2);
    const MetricsRow m = basic_metrics(confusion(pred, gt));
    CHECK(std::abs(m.kappa) < 0.02);
}

TEST_CASE("tolerance protocol on constructed cases") {
    // lone centerline pixel at the middle of a 17x17 frame
    BinaryMask gt{17, 17, std::vector<uint8_t>(17 * 17, 0)};
    gt.at(8, 8) = 1;

    // prediction two pixels away: inside the radius-3 band, and it covers
    // the centerline pixel in return
    BinaryMask near{17, 17, std::vector<uint8_t>(17 * 17, 0)};
    near.at(8, 10) = 1;
    bool warned = true;
    ConfusionCounts c1 = tolerance_confusion(near, gt, 3, &warned);
    CHECK_FALSE(warned);
    CHECK(c1.tp == 1);
    CHECK(c1.fp == 0);
    CHECK(c1.fn == 0);

    // prediction four pixels away: outside the band and the centerline
    // pixel stays uncovered
    BinaryMask far{17, 17, std::vector<uint8_t>(17 * 17, 0)};
    far.at(8, 12) = 1;
    ConfusionCounts c2 = tolerance_confusion(far, gt, 3);
    CHECK(c2.tp == 0);
    CHECK(c2.fp == 1);
    CHECK(c2.fn == 1);

    // tn excludes the tolerance band
    const int64_t band = widen_centerline(gt, 7).count();
    CHECK(c2.tn == 17 * 17 - band - 1);

    // radius zero degenerates to the exact protocol
    ConfusionCounts c3 = tolerance_confusion(near, gt, 0);
    CHECK(c3.tp == 0);
    CHECK(c3.fp == 1);
    CHECK(c3.fn == 1);
    ConfusionCounts c4 = tolerance_confusion(gt, gt, 0);
    CHECK(c4.tp == 1);
    CHECK(c4.fp == 0);
    CHECK(c4.fn == 0);
}

TEST_CASE("skeleton versus its own dilation has no errors") {
    // a drawn curve as centerline, predicted as the full 7-wide vessel
    BinaryMask gt{32, 32, std::vector<uint8_t>(32 * 32, 0)};
    for (int x = 4; x < 28; ++x) gt.at(10 + (x % 5), x) = 1;
    const BinaryMask pred = widen_centerline(gt, 7);
    const ConfusionCounts c = tolerance_confusion(pred, gt, 3);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.tp == pred.count());

    // non-thin ground truth trips the warning
    BinaryMask block{8, 8, std::vector<uint8_t>(64, 0)};
    block.at(3, 3) = block.at(3, 4) = block.at(4, 3) = block.at(4, 4) = 1;
    bool warned = false;
    tolerance_confusion(block, block, 3, &warned);
    CHECK(warned);
}

TEST_CASE("paired t-test matches the frozen reference") {
    const std::vector<double> a = {0.912, 0.874, 0.930, 0.898};
    const std::vector<double> b = {0.905, 0.870, 0.921, 0.901};
    const TTestResult r = paired_ttest(a, b);
    CHECK(r.df == 3);
    CHECK(r.t == doctest::Approx(1.618436080737).epsilon(1e-9));
    CHECK(r.p == doctest::Approx(0.204000764733).epsilon(1e-9));
    CHECK_FALSE(r.tie);

    // identical samples: the documented zero-variance convention
    const TTestResult same = paired_ttest(a, a);
    CHECK(same.tie);
    CHECK(same.t == 0.0);
    CHECK(same.p == 1.0);

    // constant nonzero shift: degenerate exact separation
    std::vector<double> shifted = a;
    for (auto& v : shifted) v += 0.01;
    const TTestResult deg = paired_ttest(shifted, a);
    CHECK(std::isinf(deg.t));
    CHECK(deg.t > 0.0);
    CHECK(deg.p == 0.0);

    CHECK_THROWS_AS(paired_ttest({1.0}, {2.0}), DataError);
    CHECK_THROWS_AS(paired_ttest({1.0, 2.0}, {2.0}), DataError);
}

TEST_CASE("two-sample t-test matches the frozen reference") {
    const std::vector<double> a = {2.1, 2.3, 1.9, 2.2, 2.0};
    const std::vector<double> b = {2.8, 2.9, 2.7, 3.0, 2.6};
    const TTestResult r = two_sample_ttest(a, b);
    CHECK(r.df == 8);
    CHECK(r.t == doctest::Approx(-7.0).epsilon(1e-10));
    CHECK(r.p == doctest::Approx(1.126385491269e-4).epsilon(1e-8));

    const std::vector<double> g1 = [] {
        std::vector<double> v;
        for (int i = 0; i < 30; ++i) v.push_back(1.0 + 0.01 * i);
        return v;
    }();
    std::vector<double> g2 = g1;
    for (auto& v : g2) v += 1.0;
    const TTestResult sep = two_sample_ttest(g1, g2);
    CHECK(sep.df == 58);
    CHECK(sep.t == doctest::Approx(-43.994134506).epsilon(1e-8));
    CHECK(sep.p == doctest::Approx(2.986701987e-46).epsilon(1e-5));
}

TEST_CASE("rank-sum test matches the frozen reference") {
    const std::vector<double> a = {1.0, 1.2, 1.2, 1.5, 1.7, 2.0};
    const std::vector<double> b = {1.1, 1.2, 1.6, 1.9, 2.2, 2.5};
    const TTestResult r = rank_sum_test(a, b);
    CHECK(r.t == doctest::Approx(12.0).epsilon(1e-12));  // the U statistic
    CHECK(r.p == doctest::Approx(0.333264715036).epsilon(1e-9));

    // swapping the groups mirrors U about its mean and keeps p
    const TTestResult s = rank_sum_test(b, a);
    CHECK(r.t + s.t == doctest::Approx(36.0).epsilon(1e-12));  // na*nb
    CHECK(s.p == doctest::Approx(r.p).epsilon(1e-12));

    const std::vector<double> g1 = [] {
        std::vector<double> v;
        for (int i = 0; i < 30; ++i) v.push_back(1.0 + 0.01 * i);
        return v;
    }();
    std::vector<double> g2 = g1;
    for (auto& v : g2) v += 1.0;
    const TTestResult sep = rank_sum_test(g1, g2);
    CHECK(sep.t == 0.0);
    CHECK(sep.p == doctest::Approx(2.871949066e-11).epsilon(1e-6));

    const TTestResult same = rank_sum_test(a, a);
    CHECK(same.p == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("macro aggregate skips undefined entries") {
    MetricsRow r1;
    r1.acc = 0.9;
    r1.sen = 0.8;
    r1.auc = 0.95;
    MetricsRow r2;
    r2.acc = 0.7;
    // sen, auc undefined for r2
    const MetricsRow agg = aggregate_macro({r1, r2});
    CHECK(agg.acc == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(agg.sen == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(agg.auc == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(std::isnan(aggregate_macro({}).acc));
}

TEST_CASE("micro aggregate pools counts") {
    MetricsRow r1;
    r1.counts = {8, 2, 85, 5};  // tp fp tn fn
    r1.auc = 0.9;
    MetricsRow r2;
    r2.counts = {2, 6, 90, 2};
    r2.auc = 0.8;
    const MetricsRow micro = aggregate_micro({r1, r2});
    ConfusionCounts pooled{10, 8, 175, 7};
    const MetricsRow direct = basic_metrics(pooled);
    CHECK(micro.acc == direct.acc);
    CHECK(micro.sen == direct.sen);
    CHECK(micro.kappa == direct.kappa);
    CHECK(micro.auc == doctest::Approx(0.85).epsilon(1e-12));
}

TEST_CASE("csv rendering uses n/a sentinels") {
    MetricsRow r;
    r.name = "img1";
    r.acc = 0.5;
    r.counts = {0, 0, 32, 0};
    const std::string csv = metrics_csv({r});
    CHECK(csv.find("name,auc,acc,sen,spe,kappa,fdr,gmean,dice") == 0);
    CHECK(csv.find("img1") != std::string::npos);
    CHECK(csv.find("n/a") != std::string::npos);

    RocCurve roc;
    roc.points = {{0.0, 0.0}, {0.25, 0.75}, {1.0, 1.0}};
    roc.auc = 0.75;
    const std::string rcsv = roc_csv(roc);
    CHECK(rcsv.find("fpr,tpr") == 0);
    CHECK(rcsv.find("0.25") != std::string::npos);
    const std::string svg = roc_svg({{"model", roc}});
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("model") != std::string::npos);
}
