#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "octa/common.hpp"

using namespace octa;

TEST_CASE("splitmix64 matches the reference stream") {
    // first outputs of the reference generator for states 0 and 1
    CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
    CHECK(splitmix64(1) == 0x910A2DEC89025CC1ULL);
}

TEST_CASE("fnv1a64 matches published vectors") {
    CHECK(fnv1a64("") == 0xCBF29CE484222325ULL);
    CHECK(fnv1a64("a") == 0xAF63DC4C8601EC8CULL);
    CHECK(fnv1a64("octa") == 0x7A54DFB4ACE15C18ULL);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(43);
    CHECK(Rng(42).next_u64() != c.next_u64());
}

TEST_CASE("fork derives stable independent streams") {
    const uint64_t x = Rng(7).fork("augment/3").next_u64();
    CHECK(x == Rng(7).fork("augment/3").next_u64());
    CHECK(x != Rng(7).fork("augment/4").next_u64());
    CHECK(x != Rng(8).fork("augment/3").next_u64());
    CHECK(x != Rng(7).next_u64());
}

TEST_CASE("uniform stays in range") {
    Rng r(1);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.05);
    CHECK(hi > 0.95);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        CHECK(u >= -2.0);
        CHECK(u < 3.0);
    }
}

TEST_CASE("uniform_int covers inclusive bounds") {
    Rng r(2);
    std::set<int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const int64_t v = r.uniform_int(-2, 5);
        CHECK(v >= -2);
        CHECK(v <= 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 8);
    for (int i = 0; i < 20; ++i) CHECK(r.uniform_int(3, 3) == 3);
}

TEST_CASE("normal moments are sane") {
    Rng r(3);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
    double shifted = 0.0;
    for (int i = 0; i < n; ++i) shifted += r.normal(5.0, 0.1);
    CHECK(std::abs(shifted / n - 5.0) < 0.01);
}

TEST_CASE("shuffle permutes deterministically") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;
    Rng(9).shuffle(v.begin(), v.end());
    CHECK(v != w);  // 50 elements staying put has negligible probability
    std::vector<int> v2 = w;
    Rng(9).shuffle(v2.begin(), v2.end());
    CHECK(v == v2);
    std::sort(v.begin(), v.end());
    CHECK(v == w);
}

TEST_CASE("integer helpers") {
    CHECK(ceil_div(7, 2) == 4);
    CHECK(ceil_div(8, 2) == 4);
    CHECK(ceil_div(1, 16) == 1);
    CHECK(round_up(1, 16) == 16);
    CHECK(round_up(16, 16) == 16);
    CHECK(round_up(17, 16) == 32);
}
