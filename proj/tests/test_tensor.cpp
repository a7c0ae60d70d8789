#include <catch2/catch_amalgamated.hpp>

#include <bidpm/tensor.hpp>

#include "testutil.hpp"

using namespace bidpm;

TEST_CASE("tensor construction and invariants") {
    Tensor t(Shape{2, 3}, 1.5);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    REQUIRE(t.size() == 6);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == 1.5);

    REQUIRE_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1.0}), Error);
    REQUIRE(Tensor::scalar(4.0).item() == 4.0);
    REQUIRE_THROWS_AS(Tensor(Shape{2, 2}).item(), Error);

    Tensor empty_rows(Shape{0, 2});
    REQUIRE(empty_rows.rows() == 0);
    REQUIRE(empty_rows.size() == 0);
}

TEST_CASE("elementwise primitives match hand values") {
    const Tensor a = Tensor::row({1.0, 2.0});
    const Tensor b = Tensor::row({3.0, 4.0});

    const Tensor s = add(a, b);
    REQUIRE(s[0] == 4.0);
    REQUIRE(s[1] == 6.0);

    const Tensor d = sub(b, a);
    REQUIRE(d[0] == 2.0);
    REQUIRE(d[1] == 2.0);

    const Tensor p = mul(a, b);
    REQUIRE(p[0] == 3.0);
    REQUIRE(p[1] == 8.0);

    REQUIRE(scale(a, -2.0)[1] == -4.0);
    REQUIRE(sum(a).item() == 3.0);
    REQUIRE(mean_square(a).item() == Catch::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("matmul against identity and hand-computed product") {
    const Tensor m = Tensor::matrix(2, 2, {5.0, 6.0, 7.0, 8.0});
    const Tensor im = matmul(Tensor::identity(2), m);
    REQUIRE(testutil::bitwise_equal(im, m));

    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    const Tensor l = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
    const Tensor r = matmul(l, m);
    REQUIRE(r(0, 0) == 19.0);
    REQUIRE(r(0, 1) == 22.0);
    REQUIRE(r(1, 0) == 43.0);
    REQUIRE(r(1, 1) == 50.0);

    REQUIRE_THROWS_AS(matmul(l, Tensor(Shape{3, 2})), Error);
}

TEST_CASE("silu values") {
    const Tensor x = Tensor::row({0.0, 1.0, -1.0});
    const Tensor y = silu(x);
    REQUIRE(y[0] == 0.0);
    REQUIRE(y[1] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
    REQUIRE(y[2] == Catch::Approx(-1.0 + 1.0 / (1.0 + std::exp(-1.0))).margin(1e-15));
}

TEST_CASE("shape mismatches name the operation") {
    const Tensor a(Shape{2, 2});
    const Tensor b(Shape{2, 3});
    try {
        add(a, b);
        FAIL("expected error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("add") != std::string::npos);
        REQUIRE(std::string(e.what()).find("[2,2]") != std::string::npos);
        REQUIRE(std::string(e.what()).find("[2,3]") != std::string::npos);
    }
    REQUIRE_THROWS_AS(row_add(a, Tensor(Shape{1, 3})), Error);
    REQUIRE_THROWS_AS(row_add(a, Tensor(Shape{2, 2})), Error);
    REQUIRE_THROWS_AS(concat_cols(a, Tensor(Shape{3, 2})), Error);
    REQUIRE_THROWS_AS(concat_rows(a, b), Error);
}

TEST_CASE("non-finite outputs are rejected at the producing primitive") {
    REQUIRE_THROWS_AS(exp(Tensor::row({1000.0})), Error);
    const Tensor big = Tensor::row({1e308});
    REQUIRE_THROWS_AS(add(big, big), Error);
    REQUIRE_THROWS_AS(scale(big, 1e10), Error);
    REQUIRE_THROWS_AS(scale(big, std::numeric_limits<double>::quiet_NaN()), Error);
}

TEST_CASE("row, concat and slice layout") {
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor v = Tensor::row({10, 20});
    const Tensor r = row_add(a, v);
    REQUIRE(r(0, 0) == 11.0);
    REQUIRE(r(1, 1) == 24.0);

    const Tensor cc = concat_cols(a, r);
    REQUIRE(cc.cols() == 4);
    REQUIRE(cc(1, 2) == 13.0);

    const Tensor cr = concat_rows(a, r);
    REQUIRE(cr.rows() == 4);
    REQUIRE(cr(2, 0) == 11.0);

    const Tensor sl = slice_rows(cr, 1, 3);
    REQUIRE(sl.rows() == 2);
    REQUIRE(sl(0, 0) == 3.0);
    REQUIRE(sl(1, 1) == 22.0);
    REQUIRE_THROWS_AS(slice_rows(cr, 3, 3), Error);
    REQUIRE_THROWS_AS(slice_rows(cr, 2, 5), Error);
}

TEST_CASE("pairwise squared distances match a brute-force loop") {
    bidpm::CounterRng rng(7);
    const Tensor a = testutil::random_tensor(Shape{5, 3}, rng);
    const Tensor b = testutil::random_tensor(Shape{4, 3}, rng);
    const Tensor d = pairwise_sqdist(a, b);
    REQUIRE(d.rows() == 5);
    REQUIRE(d.cols() == 4);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 3; ++k) acc += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
            REQUIRE(d(i, j) == Catch::Approx(acc).margin(1e-14));
        }
    REQUIRE_THROWS_AS(pairwise_sqdist(a, Tensor(Shape{4, 2})), Error);
}

TEST_CASE("transpose round trip") {
    bidpm::CounterRng rng(9);
    const Tensor a = testutil::random_tensor(Shape{3, 5}, rng);
    REQUIRE(testutil::bitwise_equal(transpose(transpose(a)), a));
}
