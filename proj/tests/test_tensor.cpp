#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "octa/tensor.hpp"

using namespace octa;

TEST_CASE("construction and layout") {
    Tensor<float> t({2, 3, 4, 5});
    CHECK(t.rank() == 4);
    CHECK(t.numel() == 120);
    CHECK(t.dim(1) == 3);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);

    // NCHW accessor agrees with row-major flat indexing
    t.at(1, 2, 3, 4) = 7.0f;
    CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 7.0f);
    t.at(0, 0, 0, 1) = 3.0f;
    CHECK(t[1] == 3.0f);
}

TEST_CASE("invalid shapes throw") {
    CHECK_THROWS_AS(Tensor<float>({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({-1}), ShapeError);
}

TEST_CASE("scalar fill and cast") {
    auto s = Tensor<double>::scalar(2.5);
    CHECK(s.numel() == 1);
    CHECK(s[0] == 2.5);

    Tensor<float> t({3});
    t.fill(1.5f);
    CHECK(t[2] == 1.5f);
    auto d = t.cast<double>();
    CHECK(d[1] == 1.5);
    t.zero();
    CHECK(t[0] == 0.0f);
}

TEST_CASE("shape comparison helpers") {
    Tensor<float> a({2, 2}), b({2, 2}), c({4});
    CHECK(a.same_shape(b));
    CHECK_FALSE(a.same_shape(c));
    CHECK_NOTHROW(check_same_shape(a, b, "t"));
    CHECK_THROWS_AS(check_same_shape(a, c, "t"), ShapeError);
    CHECK(a.shape_str() == "[2x2]");
}

TEST_CASE("all_finite flags bad values") {
    Tensor<float> t({4});
    CHECK(t.all_finite());
    t[2] = std::numeric_limits<float>::infinity();
    CHECK_FALSE(t.all_finite());
    t[2] = 0.0f;
    t[3] = std::nanf("");
    CHECK_FALSE(t.all_finite());
}
