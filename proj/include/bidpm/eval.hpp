#pragma once

#include <cmath>
#include <vector>

#include "dataset.hpp"
#include "flow.hpp"
#include "losses.hpp"
#include "velocity_field.hpp"

namespace bidpm {

struct TransportError {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation over rows
    std::size_t count = 0;
};

/// Transport a batch across the grid and measure per-row Euclidean distance
/// to the known partner rows. Pure function of its arguments.
inline TransportError transport_error(const VelocityField& f, const Tensor& inputs,
                                      const Tensor& partners, const TimeGrid& grid, Direction dir) {
    detail::require_rank2(inputs, "transport_error");
    detail::require_same_shape(inputs, partners, "transport_error");
    if (inputs.rows() == 0) throw Error("transport_error: empty batch");

    const Tensor out = synthesize(f, inputs, grid, dir);
    TransportError te;
    te.count = inputs.rows();
    std::vector<double> dist(te.count);
    for (std::size_t i = 0; i < te.count; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < inputs.cols(); ++j) {
            const double d = out(i, j) - partners(i, j);
            acc += d * d;
        }
        dist[i] = std::sqrt(acc);
        te.mean += dist[i];
    }
    te.mean /= static_cast<double>(te.count);
    double var = 0.0;
    for (double d : dist) var += (d - te.mean) * (d - te.mean);
    te.stddev = std::sqrt(var / static_cast<double>(te.count));
    return te;
}

struct TheoremDiagnostics {
    /// max over grid nodes and rows of |u(X_n, t_n) - (X_N - X_0)|, with X_n
    /// the forward states. Zero exactly when the field realizes the constant
    /// straight-line solution on this batch.
    double max_deviation = 0.0;
    /// mean over rows of |X_N - z|, the forward endpoint mismatch.
    double endpoint_gap = 0.0;
    /// the paired matching loss of the field on (x, z) over this grid.
    double residual_loss = 0.0;
};

/// Zero-loss fields on an evenly spaced grid carry every node with the same
/// velocity X_N - X_0; this measures how far a field is from that structure.
/// Refuses grids with uneven spacing or non-positive weights, where the
/// characterization does not hold.
inline TheoremDiagnostics check_theorem1(const VelocityField& f, const Tensor& x, const Tensor& z,
                                         const TimeGrid& grid) {
    detail::check_paired_batch(f, x, z, "check_theorem1");
    const std::size_t n_steps = grid.steps();
    for (std::size_t n = 0; n <= n_steps; ++n) {
        const double expected = static_cast<double>(n) / static_cast<double>(n_steps);
        if (std::abs(grid.points[n] - expected) > 1e-12)
            throw Error("check_theorem1: grid must be evenly spaced");
        if (!(grid.weights[n] > 0.0))
            throw Error("check_theorem1: grid weights must be strictly positive");
    }

    const std::vector<Tensor> fwd = forward_rollout(f, x, grid);
    const Tensor direction = sub(fwd.back(), fwd.front());

    TheoremDiagnostics d;
    for (std::size_t n = 0; n <= n_steps; ++n) {
        const Tensor u = eval_field(f, fwd[n], grid.points[n]);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) {
                const double diff = u(i, j) - direction(i, j);
                acc += diff * diff;
            }
            d.max_deviation = std::max(d.max_deviation, std::sqrt(acc));
        }
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double diff = fwd.back()(i, j) - z(i, j);
            acc += diff * diff;
        }
        d.endpoint_gap += std::sqrt(acc);
    }
    d.endpoint_gap /= static_cast<double>(x.rows());

    Tape tape;
    TapedField tf = put_on_tape(tape, f);
    d.residual_loss = paired_match_loss(tape, tf, x, z, grid).total.value().item();
    return d;
}

/// Endpoint gap of one field per refinement level: for each (field, grid)
/// entry, 0.5 * (mean |F(x) - z| + mean |B(z) - x|) with F/B the full
/// forward/backward transports. The caller supplies fields trained at the
/// matching resolutions; the sequence diagnoses how the discretization gap
/// behaves as the grid refines.
inline std::vector<double> check_proposition1(
    const std::vector<std::pair<const VelocityField*, TimeGrid>>& levels, const Tensor& x,
    const Tensor& z) {
    std::vector<double> gaps;
    gaps.reserve(levels.size());
    for (const auto& [field, grid] : levels) {
        const TransportError fwd = transport_error(*field, x, z, grid, Direction::forward);
        const TransportError bwd = transport_error(*field, z, x, grid, Direction::backward);
        gaps.push_back(0.5 * (fwd.mean + bwd.mean));
    }
    return gaps;
}

/// Distance from each source component's synthesized centroid to the mean of
/// its mapped target component. Entry k covers the rows labeled k.
inline std::vector<double> centroid_audit(const Tensor& synthesized,
                                          const std::vector<std::size_t>& labels,
                                          const Tensor& target_means, const ComponentMap& map) {
    detail::require_rank2(synthesized, "centroid_audit");
    if (labels.size() != synthesized.rows())
        throw Error("centroid_audit: one label per synthesized row required");
    map.validate();
    const std::size_t k_comp = map.components();
    if (target_means.rows() != k_comp) throw Error("centroid_audit: means/map size mismatch");

    const std::size_t d = synthesized.cols();
    std::vector<std::vector<double>> centroid(k_comp, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(k_comp, 0);
    for (std::size_t i = 0; i < synthesized.rows(); ++i) {
        const std::size_t k = labels[i];
        if (k >= k_comp) throw Error("centroid_audit: label out of range");
        for (std::size_t j = 0; j < d; ++j) centroid[k][j] += synthesized(i, j);
        ++count[k];
    }
    std::vector<double> out(k_comp, 0.0);
    for (std::size_t k = 0; k < k_comp; ++k) {
        if (count[k] == 0) throw Error("centroid_audit: component " + std::to_string(k) + " is empty");
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = centroid[k][j] / static_cast<double>(count[k]);
            const double diff = c - target_means(map(k), j);
            acc += diff * diff;
        }
        out[k] = std::sqrt(acc);
    }
    return out;
}

struct EvalReport {
    TransportError forward;
    TransportError backward;
    double mmd2 = 0.0;  // synthesized target cloud vs true target cloud
    std::vector<double> centroid_distances;
    double centroid_max = 0.0;
    TheoremDiagnostics theorem;
    std::size_t sample_steps = 0;
};

/// Full evaluation of a field against a test set with known pairs: paired
/// transport error in both directions, marginal MMD^2 of the pushed-forward
/// source cloud, per-component centroid audit, and the straight-line theorem
/// diagnostics on the paired rows. Deterministic.
inline EvalReport evaluate(const VelocityField& f, const ToyDataset& test, std::size_t sample_steps,
                           const KernelSpec& kernel = {}) {
    if (test.paired_count() == 0)
        throw Error("evaluate: test set has no paired rows; generate it with rho = 1");
    const TimeGrid grid = uniform_grid(sample_steps);

    EvalReport r;
    r.sample_steps = sample_steps;
    const Tensor px = test.paired_source();
    const Tensor pz = test.paired_target();
    r.forward = transport_error(f, px, pz, grid, Direction::forward);
    r.backward = transport_error(f, pz, px, grid, Direction::backward);

    const Tensor synth = synthesize(f, test.source, grid, Direction::forward);
    r.mmd2 = mmd_squared(synth, test.target, kernel);
    r.centroid_distances = centroid_audit(synth, test.source_labels, test.target_means, test.map);
    for (double c : r.centroid_distances) r.centroid_max = std::max(r.centroid_max, c);
    r.theorem = check_theorem1(f, px, pz, grid);
    return r;
}

}  // namespace bidpm
