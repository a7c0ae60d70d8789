#pragma once

#include <vector>

#include "tensor.hpp"
#include "velocity_field.hpp"

namespace bidpm {

/// Discretization of [0,1]: strictly increasing node times t_0 = 0 < ... <
/// t_N = 1 plus one non-negative matching weight per node.
struct TimeGrid {
    std::vector<double> points;
    std::vector<double> weights;

    TimeGrid(std::vector<double> pts, std::vector<double> ws)
        : points(std::move(pts)), weights(std::move(ws)) {
        validate();
    }

    /// N, the number of Euler steps (= nodes - 1).
    std::size_t steps() const { return points.size() - 1; }

    double dt(std::size_t n) const { return points[n + 1] - points[n]; }

    void validate() const {
        if (points.size() < 2) throw Error("TimeGrid: need at least two nodes");
        if (points.front() != 0.0 || points.back() != 1.0)
            throw Error("TimeGrid: endpoints must be exactly 0 and 1");
        for (std::size_t i = 0; i + 1 < points.size(); ++i)
            if (!(points[i] < points[i + 1])) throw Error("TimeGrid: node times must strictly increase");
        if (weights.size() != points.size())
            throw Error("TimeGrid: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(points.size()) + " nodes");
        for (double w : weights)
            if (!(w >= 0.0) || !std::isfinite(w)) throw Error("TimeGrid: weights must be finite and >= 0");
    }
};

/// Evenly spaced nodes t_n = n/N with endpoint weights 1 and interior
/// weights 0.5, the default matching schedule.
inline TimeGrid uniform_grid(std::size_t n_steps) {
    if (n_steps < 1) throw Error("uniform_grid: need at least one step");
    std::vector<double> pts(n_steps + 1);
    std::vector<double> ws(n_steps + 1, 0.5);
    for (std::size_t n = 0; n <= n_steps; ++n)
        pts[n] = static_cast<double>(n) / static_cast<double>(n_steps);
    pts[0] = 0.0;
    pts[n_steps] = 1.0;
    ws[0] = 1.0;
    ws[n_steps] = 1.0;
    return TimeGrid(std::move(pts), std::move(ws));
}

/// Forward Euler states X_0..X_N from a source batch:
///   X_n = X_{n-1} + u(X_{n-1}, t_{n-1}) * (t_n - t_{n-1}).
/// u is any callable (const T&, double) -> T; T is Tensor or Var.
template <class T, class FieldFn>
std::vector<T> forward_rollout_states(FieldFn&& u, const T& x0, const TimeGrid& grid) {
    std::vector<T> states;
    states.reserve(grid.steps() + 1);
    states.push_back(x0);
    for (std::size_t n = 1; n <= grid.steps(); ++n) {
        const T& prev = states.back();
        states.push_back(add(prev, scale(u(prev, grid.points[n - 1]), grid.dt(n - 1))));
    }
    return states;
}

/// Backward Euler states X_N..X_0 from a target batch, filled in place:
///   X_{n-1} = X_n + u(X_n, t_n) * (t_{n-1} - t_n).
/// Index n of the result still refers to node t_n.
template <class T, class FieldFn>
std::vector<T> backward_rollout_states(FieldFn&& u, const T& z1, const TimeGrid& grid) {
    const std::size_t n_steps = grid.steps();
    std::vector<T> states(n_steps + 1);
    states[n_steps] = z1;
    for (std::size_t n = n_steps; n >= 1; --n) {
        const T& cur = states[n];
        states[n - 1] = add(cur, scale(u(cur, grid.points[n]), -grid.dt(n - 1)));
    }
    return states;
}

inline std::vector<Tensor> forward_rollout(const VelocityField& f, const Tensor& x0,
                                           const TimeGrid& grid) {
    return forward_rollout_states([&](const Tensor& x, double t) { return eval_field(f, x, t); }, x0,
                                  grid);
}

inline std::vector<Tensor> backward_rollout(const VelocityField& f, const Tensor& z1,
                                            const TimeGrid& grid) {
    return backward_rollout_states([&](const Tensor& x, double t) { return eval_field(f, x, t); }, z1,
                                   grid);
}

inline std::vector<Var> forward_rollout(Tape& tape, const TapedField& tf, Var x0,
                                        const TimeGrid& grid) {
    return forward_rollout_states([&](Var x, double t) { return eval_field(tape, tf, x, t); }, x0,
                                  grid);
}

inline std::vector<Var> backward_rollout(Tape& tape, const TapedField& tf, Var z1,
                                         const TimeGrid& grid) {
    return backward_rollout_states([&](Var x, double t) { return eval_field(tape, tf, x, t); }, z1,
                                   grid);
}

enum class Direction { forward, backward };

inline const char* direction_name(Direction d) {
    return d == Direction::forward ? "forward" : "backward";
}

/// Inference-mode transport of a batch across the full grid: forward carries
/// source points to the target side, backward the reverse. No tape involved.
inline Tensor synthesize(const VelocityField& f, const Tensor& batch, const TimeGrid& grid,
                         Direction dir) {
    if (dir == Direction::forward) return forward_rollout(f, batch, grid).back();
    return backward_rollout(f, batch, grid).front();
}

}  // namespace bidpm
