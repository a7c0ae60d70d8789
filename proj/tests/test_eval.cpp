#include <catch2/catch_amalgamated.hpp>

#include <bidpm/eval.hpp>

#include "testutil.hpp"

using namespace bidpm;

TEST_CASE("transport error vanishes when the field carries pairs exactly") {
    const VelocityField f = testutil::constant_field({0.7, -0.2});
    CounterRng rng(21);
    const Tensor x = rng.normal_tensor(Shape{12, 2});
    Tensor z = x;
    for (std::size_t i = 0; i < 12; ++i) {
        z(i, 0) += 0.7;
        z(i, 1) += -0.2;
    }

    SECTION("single step is exact") {
        const TransportError te = transport_error(f, x, z, uniform_grid(1), Direction::forward);
        REQUIRE(te.mean == 0.0);
        REQUIRE(te.stddev == 0.0);
        REQUIRE(te.count == 12);
    }
    SECTION("many steps accumulate only rounding") {
        const TransportError fwd = transport_error(f, x, z, uniform_grid(4), Direction::forward);
        const TransportError bwd = transport_error(f, z, x, uniform_grid(4), Direction::backward);
        REQUIRE(fwd.mean < 1e-12);
        REQUIRE(bwd.mean < 1e-12);
    }
}

TEST_CASE("transport error measures a known displacement") {
    const VelocityField f = testutil::constant_field({1.0, 0.0});
    CounterRng rng(22);
    const Tensor x = rng.normal_tensor(Shape{8, 2});
    Tensor z = x;
    for (std::size_t i = 0; i < 8; ++i) {
        z(i, 0) += 1.0 + 0.3;  // field covers the 1.0; 0.3/-0.4 remain
        z(i, 1) += -0.4;
    }
    const TransportError te = transport_error(f, x, z, uniform_grid(1), Direction::forward);
    REQUIRE(te.mean == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(te.stddev == Catch::Approx(0.0).margin(1e-12));

    REQUIRE_THROWS_AS(transport_error(f, x, Tensor(Shape{7, 2}), uniform_grid(1), Direction::forward),
                      Error);
    REQUIRE_THROWS_AS(
        transport_error(f, Tensor(Shape{0, 2}), Tensor(Shape{0, 2}), uniform_grid(1), Direction::forward),
        Error);
}

TEST_CASE("straight-line diagnostics are zero exactly for a constant field") {
    const VelocityField f = testutil::constant_field({0.4, 0.9});
    CounterRng rng(23);
    const Tensor x = rng.normal_tensor(Shape{10, 2});
    Tensor z = x;
    for (std::size_t i = 0; i < 10; ++i) {
        z(i, 0) += 0.4;
        z(i, 1) += 0.9;
    }
    const TheoremDiagnostics d = check_theorem1(f, x, z, uniform_grid(4));
    REQUIRE(d.max_deviation < 1e-12);
    REQUIRE(d.endpoint_gap < 1e-12);
    REQUIRE(d.residual_loss < 1e-24);
}

TEST_CASE("straight-line diagnostics are positive for a generic field") {
    const VelocityField f = init_field(2, 16, 4, FieldInit{9, 1.0});  // un-scaled final layer
    CounterRng rng(24);
    const Tensor x = rng.normal_tensor(Shape{6, 2});
    const Tensor z = rng.normal_tensor(Shape{6, 2});
    const TheoremDiagnostics d = check_theorem1(f, x, z, uniform_grid(2));
    REQUIRE(d.max_deviation > 0.0);
    REQUIRE(d.endpoint_gap > 0.0);
    REQUIRE(d.residual_loss > 0.0);
}

TEST_CASE("straight-line diagnostics refuse grids outside their hypotheses") {
    const VelocityField f = testutil::constant_field({0.0, 0.0});
    const Tensor x = Tensor::matrix(1, 2, {0.0, 0.0});
    const Tensor z = Tensor::matrix(1, 2, {1.0, 1.0});

    const TimeGrid uneven({0.0, 0.3, 1.0}, {1.0, 0.5, 1.0});
    REQUIRE_THROWS_AS(check_theorem1(f, x, z, uneven), Error);

    TimeGrid zero_weight = uniform_grid(2);
    zero_weight.weights[1] = 0.0;
    REQUIRE_THROWS_AS(check_theorem1(f, x, z, zero_weight), Error);
}

TEST_CASE("refinement gaps reduce to the residual displacement") {
    const VelocityField f = testutil::constant_field({0.3, 0.0});
    CounterRng rng(25);
    const Tensor x = rng.normal_tensor(Shape{9, 2});
    Tensor z = x;
    for (std::size_t i = 0; i < 9; ++i) {
        z(i, 0) += 0.3;
        z(i, 1) += 0.05;  // the field never covers this; every level keeps the gap
    }
    const std::vector<std::pair<const VelocityField*, TimeGrid>> levels = {
        {&f, uniform_grid(1)}, {&f, uniform_grid(2)}, {&f, uniform_grid(4)}};
    const std::vector<double> gaps = check_proposition1(levels, x, z);
    REQUIRE(gaps.size() == 3);
    for (double g : gaps) REQUIRE(g == Catch::Approx(0.05).margin(1e-12));
}

TEST_CASE("centroid audit compares component centroids against mapped means") {
    const Tensor synth = Tensor::matrix(3, 2, {1.0, 0.0, 3.0, 0.0, 5.0, 5.0});
    const std::vector<std::size_t> labels = {0, 0, 1};
    const Tensor means = Tensor::matrix(2, 2, {5.0, 4.0, 2.0, 1.0});
    const ComponentMap map = ComponentMap::rotation(2, 1);  // 0 -> 1, 1 -> 0

    const std::vector<double> d = centroid_audit(synth, labels, means, map);
    REQUIRE(d.size() == 2);
    REQUIRE(d[0] == Catch::Approx(1.0).margin(1e-12));  // centroid (2,0) vs (2,1)
    REQUIRE(d[1] == Catch::Approx(1.0).margin(1e-12));  // (5,5) vs (5,4)

    SECTION("row order does not matter") {
        const Tensor shuffled = Tensor::matrix(3, 2, {5.0, 5.0, 3.0, 0.0, 1.0, 0.0});
        const std::vector<std::size_t> l2 = {1, 0, 0};
        const std::vector<double> d2 = centroid_audit(shuffled, l2, means, map);
        REQUIRE(d2[0] == d[0]);
        REQUIRE(d2[1] == d[1]);
    }
    SECTION("bad labels are rejected") {
        REQUIRE_THROWS_AS(centroid_audit(synth, {0, 0, 2}, means, map), Error);
        REQUIRE_THROWS_AS(centroid_audit(synth, {0, 0}, means, map), Error);
        REQUIRE_THROWS_AS(centroid_audit(synth, {0, 0, 0}, means, map), Error);  // comp 1 empty
    }
}

TEST_CASE("full evaluation is deterministic and structurally complete") {
    GaussianRingSpec spec;
    spec.seed = 61;
    const ToyDataset ds = make_toy_dataset(spec, ComponentMap::rotation(8, 1), 1.0, 4);
    const VelocityField f = init_field(2, 8, 4, FieldInit{13});

    const EvalReport a = evaluate(f, ds, 2);
    const EvalReport b = evaluate(f, ds, 2);
    REQUIRE(a.sample_steps == 2);
    REQUIRE(a.forward.count == ds.paired_count());
    REQUIRE(a.centroid_distances.size() == 8);
    REQUIRE(a.mmd2 >= 0.0);
    REQUIRE(a.centroid_max >= a.centroid_distances[0]);
    REQUIRE(a.forward.mean == b.forward.mean);
    REQUIRE(a.backward.mean == b.backward.mean);
    REQUIRE(a.mmd2 == b.mmd2);
    REQUIRE(a.theorem.max_deviation == b.theorem.max_deviation);

    const ToyDataset unpaired = make_toy_dataset(spec, ComponentMap::rotation(8, 1), 0.0, 4);
    REQUIRE_THROWS_AS(evaluate(f, unpaired, 2), Error);
}
