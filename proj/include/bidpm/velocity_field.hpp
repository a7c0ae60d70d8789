#pragma once

#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace bidpm {

/// Time-conditioned velocity network u(x, t): an MLP with SiLU activations
/// whose input is x concatenated with an embedding of t. Layer widths run
/// D+E -> H -> ... -> H -> D with n_hidden hidden layers.
struct VelocityField {
    std::size_t dim = 2;        // D, point dimension
    std::size_t hidden = 128;   // H, hidden width
    std::size_t n_hidden = 3;   // number of hidden layers
    std::size_t embed_dim = 8;  // E: 1 = raw scalar t, even = sinusoidal pairs

    std::vector<Tensor> weights;  // per layer, [in, out]
    std::vector<Tensor> biases;   // per layer, [1, out]

    std::size_t layer_count() const { return n_hidden + 1; }

    std::vector<std::size_t> layer_widths() const {
        std::vector<std::size_t> w;
        w.push_back(dim + embed_dim);
        for (std::size_t i = 0; i < n_hidden; ++i) w.push_back(hidden);
        w.push_back(dim);
        return w;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const Tensor& t : weights) n += t.size();
        for (const Tensor& t : biases) n += t.size();
        return n;
    }

    static bool valid_embed_dim(std::size_t e) { return e == 1 || (e >= 2 && e % 2 == 0); }
};

struct FieldInit {
    std::uint64_t seed = 0;
    double final_layer_scale = 1e-2;  // damps the initial field toward zero
};

/// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases, last
/// layer additionally scaled so the initial velocity is near zero. Draw order
/// is layer-by-layer, row-major, from one dedicated stream: reproducible.
inline VelocityField init_field(std::size_t dim, std::size_t hidden, std::size_t embed_dim,
                                const FieldInit& init = {}, std::size_t n_hidden = 3) {
    if (dim == 0 || hidden == 0 || n_hidden == 0)
        throw Error("init_field: dim, hidden and n_hidden must be positive");
    if (!VelocityField::valid_embed_dim(embed_dim))
        throw Error("init_field: embed_dim must be 1 or an even number, got " +
                    std::to_string(embed_dim));

    VelocityField f;
    f.dim = dim;
    f.hidden = hidden;
    f.n_hidden = n_hidden;
    f.embed_dim = embed_dim;

    CounterRng rng(init.seed, hash_label("field-init"));
    const std::vector<std::size_t> widths = f.layer_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        const bool last = (l + 2 == widths.size());
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)) *
                             (last ? init.final_layer_scale : 1.0);
        Tensor w(Shape{fan_in, fan_out});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        f.weights.push_back(std::move(w));
        f.biases.emplace_back(Shape{1, fan_out});
    }
    return f;
}

/// Embedding of a scalar time for a batch of B rows, shape [B, E].
/// E == 1 embeds t itself; even E interleaves sin(2^k pi t), cos(2^k pi t)
/// for k = 0..E/2-1, so t = 0 maps to (0, 1, 0, 1, ...).
inline Tensor time_embedding(double t, std::size_t embed_dim, std::size_t batch_rows) {
    if (!VelocityField::valid_embed_dim(embed_dim))
        throw Error("time_embedding: invalid embed_dim " + std::to_string(embed_dim));
    Tensor row(Shape{1, embed_dim});
    if (embed_dim == 1) {
        row[0] = t;
    } else {
        for (std::size_t k = 0; 2 * k < embed_dim; ++k) {
            const double arg = std::ldexp(std::numbers::pi * t, static_cast<int>(k));
            row[2 * k] = std::sin(arg);
            row[2 * k + 1] = std::cos(arg);
        }
    }
    Tensor out(Shape{batch_rows, embed_dim});
    for (std::size_t i = 0; i < batch_rows; ++i)
        for (std::size_t j = 0; j < embed_dim; ++j) out(i, j) = row[j];
    return out;
}

/// Per-row times, shape [B, E]. Used by baselines that sample one t per row.
inline Tensor time_embedding_rows(std::span<const double> ts, std::size_t embed_dim) {
    Tensor out(Shape{ts.size(), embed_dim});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Tensor r = time_embedding(ts[i], embed_dim, 1);
        for (std::size_t j = 0; j < embed_dim; ++j) out(i, j) = r[j];
    }
    return out;
}

namespace detail {

inline void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw Error("eval_field: time " + std::to_string(t) + " outside [0,1]");
}

inline void check_input(const VelocityField& f, const Tensor& x) {
    require_rank2(x, "eval_field");
    if (x.cols() != f.dim)
        throw Error("eval_field: input has " + std::to_string(x.cols()) + " columns, field expects " +
                    std::to_string(f.dim));
    if (x.rows() == 0) throw Error("eval_field: empty batch");
}

// Shared forward pass; T is Tensor (plain) or Var (taped).
template <class T>
T field_forward(std::size_t layer_count, std::span<const T> weights, std::span<const T> biases,
                const T& x, const T& emb) {
    T h = concat_cols(x, emb);
    for (std::size_t l = 0; l < layer_count; ++l) {
        h = row_add(matmul(h, weights[l]), biases[l]);
        if (l + 1 < layer_count) h = silu(h);
    }
    return h;
}

}  // namespace detail

/// u(x, t) for a batch x [B, D] at a shared time t. Plain evaluation.
inline Tensor eval_field(const VelocityField& f, const Tensor& x, double t) {
    detail::check_time(t);
    detail::check_input(f, x);
    const Tensor emb = time_embedding(t, f.embed_dim, x.rows());
    return detail::field_forward<Tensor>(f.layer_count(), f.weights, f.biases, x, emb);
}

/// u(x_i, t_i) with an independent time per row. Plain evaluation.
inline Tensor eval_field_rows(const VelocityField& f, const Tensor& x, std::span<const double> ts) {
    detail::check_input(f, x);
    if (ts.size() != x.rows()) throw Error("eval_field_rows: one time per row required");
    for (double t : ts) detail::check_time(t);
    const Tensor emb = time_embedding_rows(ts, f.embed_dim);
    return detail::field_forward<Tensor>(f.layer_count(), f.weights, f.biases, x, emb);
}

/// A field whose parameters live on a tape, ready for differentiation.
struct TapedField {
    const VelocityField* meta = nullptr;
    std::vector<Var> weights;
    std::vector<Var> biases;

    /// Parameter leaves in the canonical flat order: w0, b0, w1, b1, ...
    std::vector<Var> params() const {
        std::vector<Var> ps;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            ps.push_back(weights[l]);
            ps.push_back(biases[l]);
        }
        return ps;
    }
};

inline TapedField put_on_tape(Tape& tape, const VelocityField& f) {
    TapedField tf;
    tf.meta = &f;
    for (std::size_t l = 0; l < f.layer_count(); ++l) {
        tf.weights.push_back(tape.leaf(f.weights[l]));
        tf.biases.push_back(tape.leaf(f.biases[l]));
    }
    return tf;
}

inline Var eval_field(Tape& tape, const TapedField& tf, Var x, double t) {
    detail::check_time(t);
    detail::check_input(*tf.meta, x.value());
    const Var emb = tape.leaf(time_embedding(t, tf.meta->embed_dim, x.value().rows()));
    return detail::field_forward<Var>(tf.meta->layer_count(), tf.weights, tf.biases, x, emb);
}

inline Var eval_field_rows(Tape& tape, const TapedField& tf, Var x, std::span<const double> ts) {
    detail::check_input(*tf.meta, x.value());
    if (ts.size() != x.value().rows()) throw Error("eval_field_rows: one time per row required");
    for (double t : ts) detail::check_time(t);
    const Var emb = tape.leaf(time_embedding_rows(ts, tf.meta->embed_dim));
    return detail::field_forward<Var>(tf.meta->layer_count(), tf.weights, tf.biases, x, emb);
}

/// Mutable views over the parameters in the canonical flat order.
inline std::vector<Tensor*> field_params(VelocityField& f) {
    std::vector<Tensor*> ps;
    for (std::size_t l = 0; l < f.layer_count(); ++l) {
        ps.push_back(&f.weights[l]);
        ps.push_back(&f.biases[l]);
    }
    return ps;
}

inline std::vector<const Tensor*> field_params(const VelocityField& f) {
    std::vector<const Tensor*> ps;
    for (std::size_t l = 0; l < f.layer_count(); ++l) {
        ps.push_back(&f.weights[l]);
        ps.push_back(&f.biases[l]);
    }
    return ps;
}

}  // namespace bidpm
