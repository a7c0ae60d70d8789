#pragma once

#include <algorithm>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace bidpm {

/// Bijection from source components to target components.
struct ComponentMap {
    std::vector<std::size_t> target_of;

    std::size_t components() const { return target_of.size(); }
    std::size_t operator()(std::size_t k) const { return target_of.at(k); }

    static ComponentMap identity(std::size_t k) { return rotation(k, 0); }

    static ComponentMap rotation(std::size_t k, std::size_t shift) {
        ComponentMap m;
        m.target_of.resize(k);
        for (std::size_t i = 0; i < k; ++i) m.target_of[i] = (i + shift) % k;
        return m;
    }

    std::vector<std::size_t> inverse() const {
        validate();
        std::vector<std::size_t> inv(target_of.size());
        for (std::size_t i = 0; i < target_of.size(); ++i) inv[target_of[i]] = i;
        return inv;
    }

    void validate() const {
        const std::size_t k = target_of.size();
        if (k == 0) throw Error("ComponentMap: empty");
        std::vector<char> seen(k, 0);
        for (std::size_t v : target_of) {
            if (v >= k || seen[v]) throw Error("ComponentMap: not a bijection");
            seen[v] = 1;
        }
    }

    /// Canonical text form: "rot<shift>" when the map is a rotation,
    /// otherwise "perm:i0,i1,...".
    std::string to_string() const {
        validate();
        const std::size_t k = target_of.size();
        const std::size_t shift = target_of[0];
        bool is_rot = true;
        for (std::size_t i = 0; i < k; ++i)
            if (target_of[i] != (i + shift) % k) {
                is_rot = false;
                break;
            }
        if (is_rot) return "rot" + std::to_string(shift);
        std::string s = "perm:";
        for (std::size_t i = 0; i < k; ++i) {
            if (i) s += ",";
            s += std::to_string(target_of[i]);
        }
        return s;
    }

    static ComponentMap parse(const std::string& text, std::size_t k) {
        if (text == "identity") return identity(k);
        if (text.rfind("rot", 0) == 0) {
            const std::string num = text.substr(3);
            if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos)
                throw Error("ComponentMap: bad rotation '" + text + "'");
            return rotation(k, static_cast<std::size_t>(std::stoull(num)) % k);
        }
        if (text.rfind("perm:", 0) == 0) {
            ComponentMap m;
            std::string rest = text.substr(5);
            std::size_t pos = 0;
            while (pos < rest.size()) {
                const std::size_t comma = rest.find(',', pos);
                const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                                    : comma - pos);
                if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
                    throw Error("ComponentMap: bad permutation entry '" + tok + "'");
                m.target_of.push_back(static_cast<std::size_t>(std::stoull(tok)));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            if (m.target_of.size() != k)
                throw Error("ComponentMap: permutation lists " + std::to_string(m.target_of.size()) +
                            " entries for " + std::to_string(k) + " components");
            m.validate();
            return m;
        }
        throw Error("ComponentMap: unknown map spec '" + text + "'");
    }
};

struct RingSide {
    double radius = 1.0;
    double stddev = 0.1;
};

/// Two rings of isotropic Gaussian components with shared angular layout:
/// component k of a ring with radius r has mean (r cos 2 pi k/K, r sin 2 pi k/K).
struct GaussianRingSpec {
    std::size_t components = 8;
    RingSide source{1.0, 0.1};
    RingSide target{1.4, 0.06};
    std::uint64_t seed = 0;

    void validate() const {
        if (components == 0) throw Error("GaussianRingSpec: need at least one component");
        for (const RingSide* s : {&source, &target}) {
            if (!std::isfinite(s->radius)) throw Error("GaussianRingSpec: radius must be finite");
            if (!(s->stddev >= 0.0) || !std::isfinite(s->stddev))
                throw Error("GaussianRingSpec: stddev must be finite and >= 0");
        }
    }
};

enum class Side : std::uint8_t { source, target };

inline Tensor ring_means(std::size_t components, double radius) {
    Tensor m(Shape{components, 2});
    for (std::size_t k = 0; k < components; ++k) {
        const double ang =
            2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(components);
        m(k, 0) = radius * std::cos(ang);
        m(k, 1) = radius * std::sin(ang);
    }
    return m;
}

struct PointBatch {
    Tensor points;                    // [n, 2], rows component-major in draw order
    std::vector<std::size_t> labels;  // component of each row
};

/// Samples n_per_component points from every component of one side:
/// mean_k + stddev * xi. The noise xi for draw j is read from a stream keyed
/// only by (seed, slot, j), where slot defaults to the component index; both
/// sides of a spec therefore share noise slot-for-slot, which gives paired
/// rows an exact per-component affine correspondence. Passing a slot
/// relabeling merely permutes i.i.d. streams, so the side's distribution is
/// unchanged.
inline PointBatch gen_ring(const GaussianRingSpec& spec, Side side, std::size_t n_per_component,
                           const std::vector<std::size_t>& slot_of_component = {}) {
    spec.validate();
    if (n_per_component == 0) throw Error("gen_ring: n_per_component must be positive");
    const std::size_t k_comp = spec.components;
    if (!slot_of_component.empty() && slot_of_component.size() != k_comp)
        throw Error("gen_ring: slot relabeling must cover every component");

    const RingSide& rs = (side == Side::source) ? spec.source : spec.target;
    const Tensor means = ring_means(k_comp, rs.radius);

    PointBatch out;
    out.points = Tensor(Shape{k_comp * n_per_component, 2});
    out.labels.resize(k_comp * n_per_component);
    for (std::size_t c = 0; c < k_comp; ++c) {
        const std::size_t slot = slot_of_component.empty() ? c : slot_of_component[c];
        CounterRng noise(derive_seed(spec.seed, "ring-noise", slot));
        for (std::size_t j = 0; j < n_per_component; ++j) {
            const std::size_t row = c * n_per_component + j;
            out.points(row, 0) = means(c, 0) + rs.stddev * noise.normal();
            out.points(row, 1) = means(c, 1) + rs.stddev * noise.normal();
            out.labels[row] = c;
        }
    }
    return out;
}

/// Per-coordinate affine map onto [-1, 1]. Fitted from data bounds; a
/// degenerate coordinate keeps half-width 1 so the map stays invertible.
struct Normalizer {
    std::vector<double> center;
    std::vector<double> half;

    static Normalizer fit(const Tensor& pts) {
        detail::require_rank2(pts, "Normalizer::fit");
        if (pts.rows() == 0) throw Error("Normalizer::fit: empty batch");
        Normalizer nm;
        for (std::size_t j = 0; j < pts.cols(); ++j) {
            double lo = pts(0, j), hi = pts(0, j);
            for (std::size_t i = 1; i < pts.rows(); ++i) {
                lo = std::min(lo, pts(i, j));
                hi = std::max(hi, pts(i, j));
            }
            nm.center.push_back(0.5 * (lo + hi));
            nm.half.push_back(hi > lo ? 0.5 * (hi - lo) : 1.0);
        }
        return nm;
    }

    static Normalizer fit_joint(const Tensor& a, const Tensor& b) {
        return fit(concat_rows(a, b));
    }

    bool empty() const { return center.empty(); }

    Tensor apply(const Tensor& pts) const {
        check(pts);
        Tensor out(pts.shape());
        for (std::size_t i = 0; i < pts.rows(); ++i)
            for (std::size_t j = 0; j < pts.cols(); ++j)
                out(i, j) = (pts(i, j) - center[j]) / half[j];
        return out;
    }

    Tensor invert(const Tensor& pts) const {
        check(pts);
        Tensor out(pts.shape());
        for (std::size_t i = 0; i < pts.rows(); ++i)
            for (std::size_t j = 0; j < pts.cols(); ++j) out(i, j) = pts(i, j) * half[j] + center[j];
        return out;
    }

private:
    void check(const Tensor& pts) const {
        detail::require_rank2(pts, "Normalizer");
        if (pts.cols() != center.size()) throw Error("Normalizer: dimension mismatch");
    }
};

inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
    detail::require_rank2(t, "gather_rows");
    Tensor out(Shape{rows.size(), t.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= t.rows()) throw Error("gather_rows: row index out of range");
        for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(rows[i], j);
    }
    return out;
}

/// A partially paired two-sample problem: all rows of both sides plus index
/// lists describing which rows form pairs. Row i of the paired lists is one
/// pair. Paired and unpaired row sets partition each side.
struct ToyDataset {
    GaussianRingSpec spec;
    ComponentMap map;
    double rho = 1.0;
    std::size_t n_per_component = 0;

    Tensor source, target;  // [n, 2]
    std::vector<std::size_t> source_labels, target_labels;
    Tensor source_means, target_means;  // [K, 2], same space as the points

    std::vector<std::size_t> paired_source_rows, paired_target_rows;
    std::vector<std::size_t> unpaired_source_rows, unpaired_target_rows;

    Normalizer norm;  // identity when empty()
    bool normalized = false;

    std::size_t size() const { return source.rows(); }
    std::size_t paired_count() const { return paired_source_rows.size(); }

    Tensor paired_source() const { return gather_rows(source, paired_source_rows); }
    Tensor paired_target() const { return gather_rows(target, paired_target_rows); }
};

/// Selects round(rho * n) pairs between two generated sides: within each
/// source component k the first draws (in draw order) are matched one-to-one
/// with the first draws of target component map(k). The remainder of
/// round(rho * n) spreads one extra pair over the lowest component indices.
/// seed only shuffles the traversal order of the leftover unpaired rows.
inline void make_paired(ToyDataset& ds, const PointBatch& src, const PointBatch& tgt,
                        const ComponentMap& map, double rho, std::uint64_t seed) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error("make_paired: rho must lie in [0,1]");
    map.validate();
    if (src.points.rows() != tgt.points.rows())
        throw Error("make_paired: sides must have equal sample counts");
    const std::size_t k_comp = map.components();
    const std::size_t n = src.points.rows();
    if (n % k_comp != 0) throw Error("make_paired: rows not divisible into components");
    const std::size_t npc = n / k_comp;

    const std::size_t q = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n)));
    const std::size_t base = q / k_comp;
    const std::size_t extra = q % k_comp;

    ds.map = map;
    ds.rho = rho;
    ds.n_per_component = npc;
    ds.source = src.points;
    ds.target = tgt.points;
    ds.source_labels = src.labels;
    ds.target_labels = tgt.labels;
    ds.paired_source_rows.clear();
    ds.paired_target_rows.clear();

    std::vector<char> src_used(n, 0), tgt_used(n, 0);
    for (std::size_t k = 0; k < k_comp; ++k) {
        const std::size_t quota = base + (k < extra ? 1 : 0);
        const std::size_t tk = map(k);
        for (std::size_t j = 0; j < quota; ++j) {
            const std::size_t si = k * npc + j;
            const std::size_t ti = tk * npc + j;
            ds.paired_source_rows.push_back(si);
            ds.paired_target_rows.push_back(ti);
            src_used[si] = 1;
            tgt_used[ti] = 1;
        }
    }

    ds.unpaired_source_rows.clear();
    ds.unpaired_target_rows.clear();
    for (std::size_t i = 0; i < n; ++i) {
        if (!src_used[i]) ds.unpaired_source_rows.push_back(i);
        if (!tgt_used[i]) ds.unpaired_target_rows.push_back(i);
    }
    CounterRng su(derive_seed(seed, "unpaired-order", 0));
    CounterRng tu(derive_seed(seed, "unpaired-order", 1));
    su.shuffle(ds.unpaired_source_rows);
    tu.shuffle(ds.unpaired_target_rows);
}

/// Builds the toy problem end to end: sample both rings with slot-aligned
/// noise, select pairs, optionally rescale everything (points and component
/// means) jointly to [-1, 1].
inline ToyDataset make_toy_dataset(const GaussianRingSpec& spec, const ComponentMap& map, double rho,
                                   std::size_t n_per_component, bool normalize = false) {
    spec.validate();
    map.validate();
    if (map.components() != spec.components)
        throw Error("make_toy_dataset: map covers " + std::to_string(map.components()) +
                    " components, spec has " + std::to_string(spec.components));

    ToyDataset ds;
    ds.spec = spec;
    const PointBatch src = gen_ring(spec, Side::source, n_per_component);
    const PointBatch tgt = gen_ring(spec, Side::target, n_per_component, map.inverse());
    make_paired(ds, src, tgt, map, rho, spec.seed);
    ds.source_means = ring_means(spec.components, spec.source.radius);
    ds.target_means = ring_means(spec.components, spec.target.radius);

    if (normalize) {
        ds.norm = Normalizer::fit_joint(ds.source, ds.target);
        ds.source = ds.norm.apply(ds.source);
        ds.target = ds.norm.apply(ds.target);
        ds.source_means = ds.norm.apply(ds.source_means);
        ds.target_means = ds.norm.apply(ds.target_means);
        ds.normalized = true;
    }
    return ds;
}

/// One training minibatch: paired rows aligned index-for-index, plus unpaired
/// rows per side. Empty parts have zero rows.
struct MiniBatch {
    Tensor x_p, z_p;  // paired source/target rows
    Tensor x_u, z_u;  // unpaired rows per side
    std::vector<std::string> warnings;
};

namespace detail {

// Positions pos, pos+1, ... of an endless index stream over a pool: each
// epoch is an independent permutation of the pool keyed by (seed, pool, epoch),
// so every element appears exactly once per epoch and any step is replayable
// from its coordinates.
inline std::vector<std::size_t> stream_indices(std::size_t pool_size, std::uint64_t seed,
                                               std::uint64_t pool_id, std::size_t pos,
                                               std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    std::vector<std::size_t> perm;
    std::size_t perm_epoch = static_cast<std::size_t>(-1);
    for (std::size_t p = pos; p < pos + count; ++p) {
        const std::size_t epoch = p / pool_size;
        if (epoch != perm_epoch) {
            perm.resize(pool_size);
            for (std::size_t i = 0; i < pool_size; ++i) perm[i] = i;
            CounterRng rng(derive_seed(seed, "epoch-perm", pool_id * 0x10001ull + epoch));
            rng.shuffle(perm);
            perm_epoch = epoch;
        }
        out.push_back(perm[p % pool_size]);
    }
    return out;
}

}  // namespace detail

/// Deterministic minibatch for a given (seed, step): when both paired and
/// unpaired pools are non-empty, half the batch is pairs and half unpaired
/// rows per side (batch_size must be even); otherwise the whole batch comes
/// from the non-empty pool. A pool smaller than its share is clamped to its
/// size with a warning recorded in the batch.
inline MiniBatch minibatch(const ToyDataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::size_t step) {
    if (batch_size == 0) throw Error("minibatch: batch_size must be positive");
    const std::size_t n_pairs = ds.paired_count();
    const std::size_t n_us = ds.unpaired_source_rows.size();
    const std::size_t n_ut = ds.unpaired_target_rows.size();
    const bool have_unpaired = n_us > 0 && n_ut > 0;

    MiniBatch mb;
    mb.x_p = Tensor(Shape{0, 2});
    mb.z_p = Tensor(Shape{0, 2});
    mb.x_u = Tensor(Shape{0, 2});
    mb.z_u = Tensor(Shape{0, 2});

    std::size_t want_pairs = 0, want_unpaired = 0;
    if (n_pairs > 0 && have_unpaired) {
        if (batch_size % 2 != 0)
            throw Error("minibatch: batch_size must be even when mixing paired and unpaired rows");
        want_pairs = batch_size / 2;
        want_unpaired = batch_size / 2;
    } else if (n_pairs > 0) {
        want_pairs = batch_size;
    } else if (have_unpaired) {
        want_unpaired = batch_size;
    } else {
        throw Error("minibatch: dataset has no usable rows");
    }

    const auto clamp_pool = [&mb](std::size_t want, std::size_t have, const char* pool) {
        if (want <= have) return want;
        mb.warnings.push_back(std::string("minibatch: ") + pool + " pool has " +
                              std::to_string(have) + " rows, wanted " + std::to_string(want));
        return have;
    };

    if (want_pairs > 0) {
        const std::size_t m = clamp_pool(want_pairs, n_pairs, "paired");
        const auto idx = detail::stream_indices(n_pairs, seed, 0, step * m, m);
        std::vector<std::size_t> srows, trows;
        for (std::size_t i : idx) {
            srows.push_back(ds.paired_source_rows[i]);
            trows.push_back(ds.paired_target_rows[i]);
        }
        mb.x_p = gather_rows(ds.source, srows);
        mb.z_p = gather_rows(ds.target, trows);
    }
    if (want_unpaired > 0) {
        const std::size_t ms = clamp_pool(want_unpaired, n_us, "unpaired-source");
        const std::size_t mt = clamp_pool(want_unpaired, n_ut, "unpaired-target");
        const auto sidx = detail::stream_indices(n_us, seed, 1, step * ms, ms);
        const auto tidx = detail::stream_indices(n_ut, seed, 2, step * mt, mt);
        std::vector<std::size_t> srows, trows;
        for (std::size_t i : sidx) srows.push_back(ds.unpaired_source_rows[i]);
        for (std::size_t i : tidx) trows.push_back(ds.unpaired_target_rows[i]);
        mb.x_u = gather_rows(ds.source, srows);
        mb.z_u = gather_rows(ds.target, trows);
    }
    return mb;
}

}  // namespace bidpm
