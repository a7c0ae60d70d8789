#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "losses.hpp"
#include "velocity_field.hpp"

namespace bidpm {

enum class Method : std::uint8_t { bidpm, rf, icfm, otcfm };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::bidpm: return "bidpm";
        case Method::rf: return "rf";
        case Method::icfm: return "icfm";
        case Method::otcfm: return "otcfm";
    }
    throw Error("method_name: unknown method");
}

inline Method parse_method(const std::string& s) {
    if (s == "bidpm") return Method::bidpm;
    if (s == "rf") return Method::rf;
    if (s == "icfm") return Method::icfm;
    if (s == "otcfm") return Method::otcfm;
    throw Error("parse_method: unknown method '" + s + "'");
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;  // added outside the square root
};

struct OptimizerState {
    std::vector<Tensor> m, v;  // first/second moments, canonical param order
    std::size_t step = 0;      // completed updates

    static OptimizerState init(const VelocityField& f) {
        OptimizerState st;
        for (const Tensor* p : field_params(f)) {
            st.m.emplace_back(p->shape());
            st.v.emplace_back(p->shape());
        }
        return st;
    }
};

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * mhat / (sqrt(vhat) + eps).
/// Rejects non-finite gradients so a blown-up step cannot silently poison
/// the parameters.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      OptimizerState& st, const AdamConfig& cfg) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw Error("adam_step: parameter/gradient/state count mismatch");
    for (const Tensor& g : grads)
        if (!g.all_finite()) throw Error("adam_step: non-finite gradient");

    const std::size_t t = ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) throw Error("adam_step: gradient shape mismatch");
        Tensor& m = st.m[i];
        Tensor& v = st.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

/// shadow <- decay * shadow + (1 - decay) * live, elementwise over all
/// parameters. decay = 0 copies the live field.
inline void ema_update(VelocityField& shadow, const VelocityField& live, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw Error("ema_update: decay must lie in [0,1)");
    const auto sp = field_params(shadow);
    const auto lp = field_params(live);
    if (sp.size() != lp.size()) throw Error("ema_update: field layouts differ");
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (!sp[i]->same_shape(*lp[i])) throw Error("ema_update: field layouts differ");
        for (std::size_t k = 0; k < sp[i]->size(); ++k)
            (*sp[i])[k] = decay * (*sp[i])[k] + (1.0 - decay) * (*lp[i])[k];
    }
}

struct TrainConfig {
    Method method = Method::bidpm;
    std::size_t steps = 20000;
    std::size_t batch_size = 256;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_u = 0.2;
    double ema_decay = 0.999;
    std::size_t grid_steps = 2;
    std::vector<double> grid_weights;  // empty = endpoint 1, interior 0.5
    double cfm_sigma = 0.0;
    double clip_grad_norm = 10.0;  // <= 0 disables clipping
    std::size_t record_every = 1;
    std::uint64_t seed = 0;

    std::size_t hidden = 128;
    std::size_t hidden_layers = 3;
    std::size_t embed_dim = 8;

    KernelSpec kernel;

    std::vector<std::string> validate() const {
        std::vector<std::string> errs;
        const auto bad = [&errs](const std::string& msg) { errs.push_back("train config: " + msg); };
        if (steps < 1) bad("steps must be >= 1");
        if (batch_size < 1) bad("batch_size must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            bad("learning_rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1 must lie in [0,1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2 must lie in [0,1)");
        if (!(adam_eps > 0.0)) bad("adam_eps must be positive");
        if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u)) bad("lambda_u must be >= 0");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) bad("ema_decay must lie in [0,1)");
        if (grid_steps < 1) bad("grid_steps must be >= 1");
        if (!grid_weights.empty()) {
            if (grid_weights.size() != grid_steps + 1)
                bad("grid_weights needs grid_steps + 1 entries");
            for (double w : grid_weights)
                if (!(w >= 0.0) || !std::isfinite(w)) bad("grid_weights must be finite and >= 0");
        }
        if (!(cfm_sigma >= 0.0) || !std::isfinite(cfm_sigma)) bad("cfm_sigma must be >= 0");
        if (record_every < 1) bad("record_every must be >= 1");
        if (hidden < 1) bad("hidden must be >= 1");
        if (hidden_layers < 1) bad("hidden_layers must be >= 1");
        if (!VelocityField::valid_embed_dim(embed_dim)) bad("embed_dim must be 1 or even");
        try {
            kernel.validate();
        } catch (const Error& e) {
            bad(e.what());
        }
        return errs;
    }

    void require_valid() const {
        const auto errs = validate();
        if (errs.empty()) return;
        std::string msg = "invalid train config:";
        for (const std::string& e : errs) msg += "\n  - " + e;
        throw Error(msg);
    }

    TimeGrid make_grid() const {
        TimeGrid g = uniform_grid(grid_steps);
        if (!grid_weights.empty()) {
            g.weights = grid_weights;
            g.validate();
        }
        return g;
    }

    AdamConfig adam() const { return AdamConfig{learning_rate, beta1, beta2, adam_eps}; }
};

struct TrainRecord {
    std::size_t step = 0;
    LossBreakdown loss;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    VelocityField field;
    VelocityField ema_field;
    OptimizerState opt;
    std::vector<TrainRecord> records;
    bool aborted = false;
    std::string abort_reason;
    std::vector<std::string> warnings;
};

/// Observer invoked after each completed update with the number of finished
/// steps and the current state; lets callers snapshot mid-run checkpoints.
using TrainHook =
    std::function<void(std::size_t completed_steps, const VelocityField& live,
                       const VelocityField& ema, const OptimizerState& opt)>;

namespace detail {

inline double global_norm(const std::vector<Tensor>& grads) {
    double acc = 0.0;
    for (const Tensor& g : grads)
        for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * g[k];
    return std::sqrt(acc);
}

inline void clip_to_norm(std::vector<Tensor>& grads, double norm, double max_norm) {
    if (max_norm <= 0.0 || norm <= max_norm) return;
    const double f = max_norm / norm;
    for (Tensor& g : grads)
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= f;
}

inline std::vector<Tensor> ordered_grads(const GradientMap& gm, const std::vector<Var>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Var& p : params) out.push_back(gm.at(p.id()));
    return out;
}

inline void note_warnings(TrainResult& res, const std::vector<std::string>& ws) {
    for (const std::string& w : ws)
        if (std::find(res.warnings.begin(), res.warnings.end(), w) == res.warnings.end())
            res.warnings.push_back(w);
}

// Shared step loop; build_loss returns the loss node and fills the breakdown.
template <class BuildLoss>
TrainResult train_loop(const ToyDataset& ds, const TrainConfig& cfg, BuildLoss&& build_loss,
                       const TrainHook& hook = {}) {
    cfg.require_valid();
    TrainResult res;
    res.field = init_field(2, cfg.hidden, cfg.embed_dim, FieldInit{derive_seed(cfg.seed, "field-init")},
                           cfg.hidden_layers);
    res.ema_field = res.field;
    res.opt = OptimizerState::init(res.field);

    const std::uint64_t mb_seed = derive_seed(cfg.seed, "minibatch");
    const AdamConfig adam = cfg.adam();

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const MiniBatch mb = minibatch(ds, cfg.batch_size, mb_seed, step);
            note_warnings(res, mb.warnings);

            Tape tape;
            TapedField tf = put_on_tape(tape, res.field);
            LossBreakdown breakdown;
            const Var loss = build_loss(tape, tf, mb, step, breakdown);

            const std::vector<Var> params = tf.params();
            std::vector<Tensor> grads = ordered_grads(tape.backward(loss, params), params);
            const double norm = global_norm(grads);
            clip_to_norm(grads, norm, cfg.clip_grad_norm);

            adam_step(field_params(res.field), grads, res.opt, adam);
            ema_update(res.ema_field, res.field, cfg.ema_decay);

            if (step % cfg.record_every == 0 || step + 1 == cfg.steps) {
                const double ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
                res.records.push_back(TrainRecord{step, breakdown, norm, ms});
            }
            if (hook) hook(step + 1, res.field, res.ema_field, res.opt);
        } catch (const Error& e) {
            res.aborted = true;
            res.abort_reason = "step " + std::to_string(step) + ": " + e.what();
            break;
        }
    }
    return res;
}

}  // namespace detail

/// Bi-directional discrete-process-matching training. The recorded loss at
/// each step is the objective at the pre-update parameters for that step's
/// batch, with no hidden scaling.
inline TrainResult train(const ToyDataset& ds, const TrainConfig& cfg, const TrainHook& hook = {}) {
    if (cfg.method != Method::bidpm) throw Error("train: config method must be bidpm");
    const TimeGrid grid = cfg.make_grid();
    return detail::train_loop(
        ds, cfg,
        [&](Tape& tape, TapedField& tf, const MiniBatch& mb, std::size_t, LossBreakdown& bd) {
            BidpmLossResult r = bidpm_loss(tape, tf, mb.x_p, mb.z_p, mb.x_u, mb.z_u, grid,
                                           cfg.lambda_u, PairwiseMetric{}, cfg.kernel);
            bd = r.breakdown;
            return r.total;
        },
        hook);
}

/// Flow-matching baselines on the same data stream: paired rows keep their
/// pairing, unpaired rows are coupled in draw order (an independent coupling).
/// Each row gets one uniform time sample; the OT variant re-pairs per batch.
inline TrainResult train_baseline(const ToyDataset& ds, const TrainConfig& cfg,
                                  const TrainHook& hook = {}) {
    if (cfg.method == Method::bidpm) throw Error("train_baseline: use train for method bidpm");
    const CfmSpec cfm{cfg.method == Method::otcfm ? CfmVariant::otcfm : CfmVariant::icfm,
                      cfg.cfm_sigma};
    return detail::train_loop(
        ds, cfg,
        [&](Tape& tape, TapedField& tf, const MiniBatch& mb, std::size_t step, LossBreakdown& bd) {
            const bool have_p = mb.x_p.rows() > 0;
            const bool have_u = mb.x_u.rows() > 0 && mb.z_u.rows() > 0;
            if (have_u && mb.x_u.rows() != mb.z_u.rows())
                throw Error("train_baseline: unpaired sides drew different row counts");
            Tensor x, z;
            if (have_p && have_u) {
                x = concat_rows(mb.x_p, mb.x_u);
                z = concat_rows(mb.z_p, mb.z_u);
            } else if (have_p) {
                x = mb.x_p;
                z = mb.z_p;
            } else if (have_u) {
                x = mb.x_u;
                z = mb.z_u;
            } else {
                throw Error("train_baseline: empty minibatch");
            }

            CounterRng trng(derive_seed(cfg.seed, "t-samples", step));
            std::vector<double> ts(x.rows());
            for (double& t : ts) t = trng.uniform01();

            Var loss;
            if (cfg.method == Method::rf) {
                loss = rf_loss(tape, tf, x, z, ts);
            } else {
                Tensor noise;
                if (cfm.sigma > 0.0) {
                    CounterRng nrng(derive_seed(cfg.seed, "cfm-noise", step));
                    noise = nrng.normal_tensor(x.shape());
                }
                loss = cfm_loss(tape, tf, x, z, ts, cfm, noise);
            }
            bd.total = bd.paired = loss.value().item();
            bd.unpaired = 0.0;
            return loss;
        },
        hook);
}

/// Dispatch on cfg.method.
inline TrainResult train_any(const ToyDataset& ds, const TrainConfig& cfg,
                             const TrainHook& hook = {}) {
    return cfg.method == Method::bidpm ? train(ds, cfg, hook) : train_baseline(ds, cfg, hook);
}

}  // namespace bidpm
