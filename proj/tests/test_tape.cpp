#include <catch2/catch_amalgamated.hpp>

#include <bidpm/rng.hpp>
#include <bidpm/tape.hpp>

#include "testutil.hpp"

using namespace bidpm;
using testutil::check_gradients;
using testutil::random_tensor;

TEST_CASE("frozen example: d/dw sum(w*w) = 2w") {
    Tape tape;
    const Var w = tape.leaf(Tensor::row({1.0, 2.0}));
    const Var loss = tape.sum(tape.mul(w, w));
    REQUIRE(loss.value().item() == 5.0);
    const GradientMap g = tape.backward(loss, {w});
    REQUIRE(g.at(w.id())[0] == 2.0);
    REQUIRE(g.at(w.id())[1] == 4.0);
}

TEST_CASE("gradient at a stationary point is zero") {
    Tape tape;
    const Tensor c = Tensor::row({0.3, -0.7, 1.1});
    const Var w = tape.leaf(c);
    const Var loss = tape.mean_square(tape.sub(w, tape.leaf(c)));
    REQUIRE(loss.value().item() == 0.0);
    const GradientMap g = tape.backward(loss, {w});
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(g.at(w.id())[i] == 0.0);
}

TEST_CASE("untouched parameter receives zeros of its own shape") {
    Tape tape;
    const Var w = tape.leaf(Tensor::row({1.0, 2.0}));
    const Var unused = tape.leaf(Tensor(Shape{3, 2}, 5.0));
    const Var loss = tape.sum(w);
    const GradientMap g = tape.backward(loss, {w, unused});
    REQUIRE(g.at(unused.id()).same_shape(Tensor(Shape{3, 2})));
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(g.at(unused.id())[i] == 0.0);
}

TEST_CASE("backward is linear in the loss") {
    CounterRng rng(11);
    const Tensor xv = random_tensor(Shape{3, 3}, rng);
    const Tensor yv = random_tensor(Shape{3, 3}, rng);

    // Gradients of a*L1 + b*L2 must equal a*grad(L1) + b*grad(L2).
    const double a = 1.7, b = -0.4;
    const auto grads_of = [&](double ca, double cb) {
        Tape tape;
        const Var x = tape.leaf(xv);
        const Var y = tape.leaf(yv);
        const Var l1 = tape.sum(tape.mul(x, y));
        const Var l2 = tape.mean_square(tape.matmul(x, y));
        const Var mix = tape.add(tape.scale(l1, ca), tape.scale(l2, cb));
        GradientMap g = tape.backward(mix, {x, y});
        return std::pair{g.at(x.id()), g.at(y.id())};
    };

    const auto [gx_mix, gy_mix] = grads_of(a, b);
    const auto [gx1, gy1] = grads_of(1.0, 0.0);
    const auto [gx2, gy2] = grads_of(0.0, 1.0);
    for (std::size_t i = 0; i < gx_mix.size(); ++i) {
        REQUIRE(gx_mix[i] == Catch::Approx(a * gx1[i] + b * gx2[i]).margin(1e-12));
        REQUIRE(gy_mix[i] == Catch::Approx(a * gy1[i] + b * gy2[i]).margin(1e-12));
    }
}

TEST_CASE("repeated taped evaluation is bit-identical") {
    CounterRng rng(13);
    const Tensor xv = random_tensor(Shape{4, 3}, rng);
    const Tensor wv = random_tensor(Shape{3, 2}, rng);

    const auto run = [&]() {
        Tape tape;
        const Var x = tape.leaf(xv);
        const Var w = tape.leaf(wv);
        const Var loss = tape.mean_square(tape.silu(tape.matmul(x, w)));
        GradientMap g = tape.backward(loss, {w});
        return std::pair{loss.value().item(), g.at(w.id())};
    };
    const auto [l1, g1] = run();
    const auto [l2, g2] = run();
    REQUIRE(l1 == l2);
    REQUIRE(testutil::bitwise_equal(g1, g2));
}

TEST_CASE("backward argument validation") {
    Tape tape;
    const Var x = tape.leaf(Tensor::row({1.0, 2.0}));
    const Var y = tape.mul(x, x);
    REQUIRE_THROWS_AS(tape.backward(y, {x}), Error);  // loss not scalar

    Tape other;
    const Var w = other.leaf(Tensor::row({1.0}));
    const Var loss = tape.sum(y);
    REQUIRE_THROWS_AS(tape.backward(loss, {w}), Error);  // foreign parameter
    REQUIRE_THROWS_AS(tape.backward(loss, {y}), Error);  // parameter is not a leaf

    REQUIRE_THROWS_AS(tape.leaf(Tensor::row({std::numeric_limits<double>::infinity()})), Error);
}

namespace {

// Scalarizes any tensor output against fixed random coefficients so every
// output entry influences the loss.
double project(const Tensor& t, const Tensor& coeff) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * coeff[i];
    return acc;
}

template <class Build>  // Build: (Tape&, const std::vector<Var>&) -> Var (any shape)
void fd_property(const char* name, std::vector<Tensor> inputs, Build&& build, std::uint64_t seed) {
    CounterRng rng(seed);

    // Shape of the output determines the projection coefficients.
    Tensor coeff;
    {
        Tape probe;
        std::vector<Var> vs;
        for (const Tensor& t : inputs) vs.push_back(probe.leaf(t));
        coeff = random_tensor(build(probe, vs).value().shape(), rng, -1.0, 1.0);
    }

    const auto loss_of = [&](const std::vector<Tensor>& ins) {
        Tape tape;
        std::vector<Var> vs;
        for (const Tensor& t : ins) vs.push_back(tape.leaf(t));
        return project(build(tape, vs).value(), coeff);
    };

    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vs;
        for (const Tensor& t : inputs) vs.push_back(tape.leaf(t));
        const Var out = build(tape, vs);
        // loss = sum(out * coeff)
        const Var loss = tape.sum(tape.mul(out, tape.leaf(coeff)));
        GradientMap g = tape.backward(loss, vs);
        for (const Var& v : vs) analytic.push_back(g.at(v.id()));
    }

    const auto rep = check_gradients(loss_of, inputs, analytic);
    INFO(name << ": max rel " << rep.max_rel << ", max abs " << rep.max_abs);
    CHECK(rep.ok);
}

}  // namespace

TEST_CASE("finite differences confirm every primitive's gradient") {
    CounterRng rng(101);
    const Tensor a34 = random_tensor(Shape{3, 4}, rng);
    const Tensor b34 = random_tensor(Shape{3, 4}, rng);
    const Tensor b42 = random_tensor(Shape{4, 2}, rng);
    const Tensor v14 = random_tensor(Shape{1, 4}, rng);
    const Tensor c54 = random_tensor(Shape{5, 4}, rng);

    fd_property("add", {a34, b34},
                [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }, 1);
    fd_property("sub", {a34, b34},
                [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); }, 2);
    fd_property("mul", {a34, b34},
                [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, 3);
    fd_property("matmul", {a34, b42},
                [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }, 4);
    fd_property("scale", {a34},
                [](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.37); }, 5);
    fd_property("silu", {a34}, [](Tape&, const std::vector<Var>& v) { return silu(v[0]); }, 6);
    fd_property("exp", {a34}, [](Tape&, const std::vector<Var>& v) { return exp(v[0]); }, 7);
    fd_property("sum", {a34}, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }, 8);
    fd_property("mean_square", {a34},
                [](Tape&, const std::vector<Var>& v) { return mean_square(v[0]); }, 9);
    fd_property("row_add", {a34, v14},
                [](Tape&, const std::vector<Var>& v) { return row_add(v[0], v[1]); }, 10);
    fd_property("concat_cols", {a34, b34},
                [](Tape&, const std::vector<Var>& v) { return concat_cols(v[0], v[1]); }, 11);
    fd_property("concat_rows", {a34, c54},
                [](Tape&, const std::vector<Var>& v) { return concat_rows(v[0], v[1]); }, 12);
    fd_property("slice_rows", {c54},
                [](Tape&, const std::vector<Var>& v) { return slice_rows(v[0], 1, 4); }, 13);
    fd_property("pairwise_sqdist", {a34, c54},
                [](Tape&, const std::vector<Var>& v) { return pairwise_sqdist(v[0], v[1]); }, 14);
}

TEST_CASE("finite differences confirm a composite graph with fan-out") {
    CounterRng rng(202);
    const Tensor x = random_tensor(Shape{4, 3}, rng);
    const Tensor w = random_tensor(Shape{3, 3}, rng, -0.8, 0.8);

    // x feeds two branches that are recombined, exercising adjoint
    // accumulation at shared nodes.
    fd_property(
        "fanout", {x, w},
        [](Tape& tape, const std::vector<Var>& v) {
            const Var h = silu(matmul(v[0], v[1]));
            const Var d = sub(h, v[0]);
            return add(mean_square(d), scale(sum(exp(scale(pairwise_sqdist(h, v[0]), -0.5))), 0.01));
        },
        15);
}
