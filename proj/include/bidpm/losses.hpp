#pragma once

#include <span>
#include <vector>

#include "assignment.hpp"
#include "flow.hpp"
#include "tape.hpp"
#include "tensor.hpp"
#include "velocity_field.hpp"

namespace bidpm {

enum class MetricKind : std::uint8_t { squared_l2_mean };

/// Pointwise discrepancy between two batches paired row-by-row. The only
/// implemented kind is the batch mean of squared Euclidean distances.
struct PairwiseMetric {
    MetricKind kind = MetricKind::squared_l2_mean;
};

/// RBF kernel mixture for maximum mean discrepancy: k(x,y) = sum over
/// bandwidths s of exp(-|x-y|^2 / (2 s^2)).
struct KernelSpec {
    std::vector<double> bandwidths{0.25, 0.5, 1.0, 2.0};

    void validate() const {
        if (bandwidths.empty()) throw Error("KernelSpec: at least one bandwidth required");
        for (double s : bandwidths)
            if (!(s > 0.0) || !std::isfinite(s)) throw Error("KernelSpec: bandwidths must be positive");
    }
};

namespace detail {

inline std::size_t rows_of(const Tensor& t) { return t.rows(); }
inline std::size_t rows_of(const Var& v) { return v.value().rows(); }

inline void check_mmd_batch(const Tensor& a, const Tensor& b) {
    require_rank2(a, "mmd_squared");
    require_rank2(b, "mmd_squared");
    if (a.rows() == 0 || b.rows() == 0) throw Error("mmd_squared: empty batch");
    if (a.cols() != b.cols())
        throw Error("mmd_squared: dimension mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

// Biased V-statistic estimate of MMD^2 summed over kernel bandwidths:
//   (1/m^2) sum k(a,a') + (1/n^2) sum k(b,b') - (2/mn) sum k(a,b).
// T is Tensor or Var; the pairwise distance matrices are shared across
// bandwidths.
template <class T>
T mmd_squared_impl(const T& a, const T& b, const KernelSpec& kernel) {
    const double m = static_cast<double>(rows_of(a));
    const double n = static_cast<double>(rows_of(b));
    const T daa = pairwise_sqdist(a, a);
    const T dbb = pairwise_sqdist(b, b);
    const T dab = pairwise_sqdist(a, b);
    T total;
    for (std::size_t i = 0; i < kernel.bandwidths.size(); ++i) {
        const double s = kernel.bandwidths[i];
        const double gamma = -0.5 / (s * s);
        T term = add(add(scale(sum(exp(scale(daa, gamma))), 1.0 / (m * m)),
                         scale(sum(exp(scale(dbb, gamma))), 1.0 / (n * n))),
                     scale(sum(exp(scale(dab, gamma))), -2.0 / (m * n)));
        total = (i == 0) ? term : add(total, term);
    }
    return total;
}

}  // namespace detail

/// Batch mean of squared Euclidean row distances, as a scalar node.
inline Var batch_metric(Tape& tape, Var a, Var b, const PairwiseMetric& = {}) {
    const Tensor& av = a.value();
    detail::require_rank2(av, "batch_metric");
    detail::require_same_shape(av, b.value(), "batch_metric");
    if (av.rows() == 0) throw Error("batch_metric: empty batch");
    const Var d = sub(a, b);
    return tape.scale(tape.sum(tape.mul(d, d)), 1.0 / static_cast<double>(av.rows()));
}

inline double batch_metric(const Tensor& a, const Tensor& b, const PairwiseMetric& = {}) {
    detail::require_rank2(a, "batch_metric");
    detail::require_same_shape(a, b, "batch_metric");
    if (a.rows() == 0) throw Error("batch_metric: empty batch");
    const Tensor d = sub(a, b);
    return sum(mul(d, d)).item() / static_cast<double>(a.rows());
}

inline Var mmd_squared(Tape& tape, Var a, Var b, const KernelSpec& kernel) {
    (void)tape;
    kernel.validate();
    detail::check_mmd_batch(a.value(), b.value());
    return detail::mmd_squared_impl<Var>(a, b, kernel);
}

inline double mmd_squared(const Tensor& a, const Tensor& b, const KernelSpec& kernel) {
    kernel.validate();
    detail::check_mmd_batch(a, b);
    return detail::mmd_squared_impl<Tensor>(a, b, kernel).item();
}

/// A weighted sum over grid nodes plus its per-node contributions (already
/// weight-multiplied, read off the tape as plain numbers).
struct TimepointLoss {
    Var total;
    std::vector<double> per_timepoint;
};

namespace detail {

inline void check_paired_batch(const VelocityField& f, const Tensor& x, const Tensor& z,
                               const char* op) {
    require_rank2(x, op);
    require_rank2(z, op);
    if (x.rows() == 0) throw Error(std::string(op) + ": empty batch");
    if (!x.same_shape(z))
        throw Error(std::string(op) + ": source/target shape mismatch " + shape_str(x.shape()) +
                    " vs " + shape_str(z.shape()));
    if (x.cols() != f.dim) throw Error(std::string(op) + ": point dimension does not match field");
}

// Weighted sum of per-node terms; terms[n] is a scalar Var.
inline TimepointLoss weighted_node_sum(Tape& tape, const std::vector<Var>& terms,
                                       const std::vector<double>& weights) {
    TimepointLoss out;
    bool started = false;
    for (std::size_t n = 0; n < terms.size(); ++n) {
        const Var wterm = tape.scale(terms[n], weights[n]);
        out.per_timepoint.push_back(wterm.value().item());
        out.total = started ? tape.add(out.total, wterm) : wterm;
        started = true;
    }
    return out;
}

}  // namespace detail

/// Paired discrete-process matching loss: roll the paired sources forward and
/// the paired targets backward over the same grid, then sum the node-weighted
/// batch metric between the two state sequences,
///   L_p = sum_n w_n * d(Xf_n, Xb_n).
inline TimepointLoss paired_match_loss(Tape& tape, const TapedField& tf, const Tensor& x,
                                       const Tensor& z, const TimeGrid& grid,
                                       const PairwiseMetric& metric = {}) {
    detail::check_paired_batch(*tf.meta, x, z, "paired_match_loss");
    const std::vector<Var> fwd = forward_rollout(tape, tf, tape.leaf(x), grid);
    const std::vector<Var> bwd = backward_rollout(tape, tf, tape.leaf(z), grid);
    std::vector<Var> terms;
    terms.reserve(fwd.size());
    for (std::size_t n = 0; n < fwd.size(); ++n)
        terms.push_back(batch_metric(tape, fwd[n], bwd[n], metric));
    return detail::weighted_node_sum(tape, terms, grid.weights);
}

/// Unpaired (marginal) matching loss: forward-roll the source pool, backward-
/// roll the target pool, and penalize the node-weighted MMD^2 between the two
/// clouds at every grid node,
///   L_u = sum_n w_n * MMD^2(Xf_n, Xb_n).
inline TimepointLoss unpaired_match_loss(Tape& tape, const TapedField& tf, const Tensor& x_pool,
                                         const Tensor& z_pool, const TimeGrid& grid,
                                         const KernelSpec& kernel = {}) {
    kernel.validate();
    detail::check_mmd_batch(x_pool, z_pool);
    if (x_pool.cols() != tf.meta->dim)
        throw Error("unpaired_match_loss: point dimension does not match field");
    const std::vector<Var> fwd = forward_rollout(tape, tf, tape.leaf(x_pool), grid);
    const std::vector<Var> bwd = backward_rollout(tape, tf, tape.leaf(z_pool), grid);
    std::vector<Var> terms;
    terms.reserve(fwd.size());
    for (std::size_t n = 0; n < fwd.size(); ++n)
        terms.push_back(mmd_squared(tape, fwd[n], bwd[n], kernel));
    return detail::weighted_node_sum(tape, terms, grid.weights);
}

/// Scalar summary of one combined loss evaluation. total = paired +
/// lambda_u * unpaired holds to within 1e-12; per_timepoint holds each node's
/// combined contribution.
struct LossBreakdown {
    double total = 0.0;
    double paired = 0.0;
    double unpaired = 0.0;
    std::vector<double> per_timepoint;
};

struct BidpmLossResult {
    Var total;
    LossBreakdown breakdown;
};

/// Combined objective L = L_p + lambda_u * L_u on one minibatch.  x_p/z_p are
/// the paired rows (row i of each is one pair); x_u/z_u are the unpaired rows.
/// The MMD pools are each side's unpaired rows joined with that side's paired
/// rows, so paired data also anchors the marginal term. Empty unpaired pools
/// (or lambda_u = 0) reduce the loss to the paired term alone, and the
/// unpaired code path is not touched at all.
inline BidpmLossResult bidpm_loss(Tape& tape, const TapedField& tf, const Tensor& x_p,
                                  const Tensor& z_p, const Tensor& x_u, const Tensor& z_u,
                                  const TimeGrid& grid, double lambda_u,
                                  const PairwiseMetric& metric = {}, const KernelSpec& kernel = {}) {
    if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u))
        throw Error("bidpm_loss: lambda_u must be finite and >= 0");
    const auto row_count = [](const Tensor& t) { return t.rank() == 2 ? t.rows() : 0; };
    const bool have_paired = row_count(x_p) > 0;
    const bool have_unpaired = row_count(x_u) > 0 && row_count(z_u) > 0;
    if (have_paired && x_p.rows() != z_p.rows())
        throw Error("bidpm_loss: paired sides must have equal row counts");
    if (!have_paired && !have_unpaired) throw Error("bidpm_loss: empty minibatch");

    const bool use_unpaired = have_unpaired && lambda_u > 0.0;

    BidpmLossResult res;
    res.breakdown.per_timepoint.assign(grid.points.size(), 0.0);

    if (have_paired && !use_unpaired) {
        TimepointLoss lp = paired_match_loss(tape, tf, x_p, z_p, grid, metric);
        res.total = lp.total;
        res.breakdown.paired = lp.total.value().item();
        res.breakdown.per_timepoint = lp.per_timepoint;
        res.breakdown.total = res.breakdown.paired;
        return res;
    }

    // Roll each side's full pool once (paired rows first); the paired term
    // reads the leading rows of the same state sequences.
    const std::size_t bp = have_paired ? x_p.rows() : 0;
    const Tensor x_all = have_paired ? concat_rows(x_p, x_u) : x_u;
    const Tensor z_all = have_paired ? concat_rows(z_p, z_u) : z_u;
    const std::vector<Var> fwd = forward_rollout(tape, tf, tape.leaf(x_all), grid);
    const std::vector<Var> bwd = backward_rollout(tape, tf, tape.leaf(z_all), grid);

    std::vector<double> paired_nodes(fwd.size(), 0.0), unpaired_nodes(fwd.size(), 0.0);
    Var total;
    bool started = false;
    for (std::size_t n = 0; n < fwd.size(); ++n) {
        const double w = grid.weights[n];
        Var node_term;
        bool node_started = false;
        if (have_paired) {
            const Var d = batch_metric(tape, tape.slice_rows(fwd[n], 0, bp),
                                       tape.slice_rows(bwd[n], 0, bp), metric);
            paired_nodes[n] = w * d.value().item();
            node_term = tape.scale(d, w);
            node_started = true;
        }
        {
            const Var u = mmd_squared(tape, fwd[n], bwd[n], kernel);
            unpaired_nodes[n] = w * u.value().item();
            const Var wu = tape.scale(u, lambda_u * w);
            node_term = node_started ? tape.add(node_term, wu) : wu;
        }
        res.breakdown.per_timepoint[n] = paired_nodes[n] + lambda_u * unpaired_nodes[n];
        total = started ? tape.add(total, node_term) : node_term;
        started = true;
    }

    res.total = total;
    for (std::size_t n = 0; n < fwd.size(); ++n) {
        res.breakdown.paired += paired_nodes[n];
        res.breakdown.unpaired += unpaired_nodes[n];
    }
    res.breakdown.total = res.breakdown.paired + lambda_u * res.breakdown.unpaired;
    return res;
}

/// Rectified-flow regression: with X_t = (1-t) x + t z on the straight pair
/// interpolant, fit u(X_t, t) to the constant direction z - x. Only the field
/// parameters are differentiated; the interpolated points are data.
inline Var rf_loss(Tape& tape, const TapedField& tf, const Tensor& x, const Tensor& z,
                   std::span<const double> ts) {
    detail::check_paired_batch(*tf.meta, x, z, "rf_loss");
    if (ts.size() != x.rows()) throw Error("rf_loss: one time sample per row required");
    Tensor xt(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            xt(i, j) = (1.0 - ts[i]) * x(i, j) + ts[i] * z(i, j);
    const Var u = eval_field_rows(tape, tf, tape.leaf(xt), ts);
    return batch_metric(tape, u, tape.leaf(sub(z, x)), PairwiseMetric{});
}

enum class CfmVariant : std::uint8_t { icfm, otcfm };

struct CfmSpec {
    CfmVariant variant = CfmVariant::icfm;
    double sigma = 0.0;  // constant probability-path width
};

/// Squared-Euclidean minimum-cost re-pairing of a batch: row i of x is
/// matched with row pairing[i] of z.
inline std::vector<std::size_t> ot_pairing(const Tensor& x, const Tensor& z) {
    return solve_assignment(pairwise_sqdist(x, z)).col_of_row;
}

/// Conditional flow matching with a constant-width Gaussian path around the
/// straight interpolant: X_t = (1-t) x + t z + sigma * xi, regression target
/// z - x (the path width is constant, so it contributes no velocity). The
/// OT variant first re-pairs the batch by minimum-cost assignment. noise must
/// hold one standard-normal row per batch row when sigma > 0.
inline Var cfm_loss(Tape& tape, const TapedField& tf, const Tensor& x, const Tensor& z,
                    std::span<const double> ts, const CfmSpec& spec, const Tensor& noise = {}) {
    detail::check_paired_batch(*tf.meta, x, z, "cfm_loss");
    if (ts.size() != x.rows()) throw Error("cfm_loss: one time sample per row required");
    if (!(spec.sigma >= 0.0) || !std::isfinite(spec.sigma))
        throw Error("cfm_loss: sigma must be finite and >= 0");

    Tensor zz = z;
    if (spec.variant == CfmVariant::otcfm) {
        const std::vector<std::size_t> perm = ot_pairing(x, z);
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) zz(i, j) = z(perm[i], j);
    }

    Tensor xt(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            xt(i, j) = (1.0 - ts[i]) * x(i, j) + ts[i] * zz(i, j);
    if (spec.sigma > 0.0) {
        if (!noise.same_shape(x)) throw Error("cfm_loss: noise must match the batch shape");
        for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += spec.sigma * noise[i];
    }

    const Var u = eval_field_rows(tape, tf, tape.leaf(xt), ts);
    return batch_metric(tape, u, tape.leaf(sub(zz, x)), PairwiseMetric{});
}

}  // namespace bidpm
