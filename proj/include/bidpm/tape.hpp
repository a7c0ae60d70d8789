#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace bidpm {

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    matmul,
    scale,
    silu,
    exp_,
    sum,
    mean_square,
    row_add,
    concat_cols,
    concat_rows,
    slice_rows,
    pairwise_sqdist,
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; invalidated by Tape::reset.
class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr && id_ >= 0; }
    Tape& tape() const {
        if (!tape_) throw Error("Var: unbound handle");
        return *tape_;
    }
    std::int32_t id() const { return id_; }
    const Tensor& value() const;

private:
    friend class Tape;
    Var(Tape* t, std::int32_t id) : tape_(t), id_(id) {}

    Tape* tape_ = nullptr;
    std::int32_t id_ = -1;
};

/// Gradients of a scalar loss with respect to leaf nodes, keyed by node id.
using GradientMap = std::unordered_map<std::int32_t, Tensor>;

/// Record of a single forward evaluation. Nodes are appended in execution
/// order, so a reverse sweep visits each node after all of its consumers.
class Tape {
public:
    Var leaf(Tensor v) {
        detail::ensure_finite(v, "leaf");
        return push(Op::leaf, -1, -1, std::move(v));
    }

    std::size_t size() const { return nodes_.size(); }

    /// Drops all nodes. Outstanding Vars on this tape become invalid.
    void reset() { nodes_.clear(); }

    const Tensor& value(const Var& v) const { return node(v).value; }

    Var add(Var a, Var b) { return push(Op::add, idx(a), idx(b), bidpm::add(val(a), val(b))); }
    Var sub(Var a, Var b) { return push(Op::sub, idx(a), idx(b), bidpm::sub(val(a), val(b))); }
    Var mul(Var a, Var b) { return push(Op::mul, idx(a), idx(b), bidpm::mul(val(a), val(b))); }
    Var matmul(Var a, Var b) {
        return push(Op::matmul, idx(a), idx(b), bidpm::matmul(val(a), val(b)));
    }
    Var scale(Var a, double c) {
        Var out = push(Op::scale, idx(a), -1, bidpm::scale(val(a), c));
        nodes_.back().c = c;
        return out;
    }
    Var silu(Var a) { return push(Op::silu, idx(a), -1, bidpm::silu(val(a))); }
    Var exp(Var a) { return push(Op::exp_, idx(a), -1, bidpm::exp(val(a))); }
    Var sum(Var a) { return push(Op::sum, idx(a), -1, bidpm::sum(val(a))); }
    Var mean_square(Var a) { return push(Op::mean_square, idx(a), -1, bidpm::mean_square(val(a))); }
    Var row_add(Var a, Var v) {
        return push(Op::row_add, idx(a), idx(v), bidpm::row_add(val(a), val(v)));
    }
    Var concat_cols(Var a, Var b) {
        return push(Op::concat_cols, idx(a), idx(b), bidpm::concat_cols(val(a), val(b)));
    }
    Var concat_rows(Var a, Var b) {
        return push(Op::concat_rows, idx(a), idx(b), bidpm::concat_rows(val(a), val(b)));
    }
    Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
        Var out = push(Op::slice_rows, idx(a), -1, bidpm::slice_rows(val(a), r0, r1));
        nodes_.back().i0 = r0;
        nodes_.back().i1 = r1;
        return out;
    }
    Var pairwise_sqdist(Var a, Var b) {
        return push(Op::pairwise_sqdist, idx(a), idx(b), bidpm::pairwise_sqdist(val(a), val(b)));
    }

    /// Reverse sweep from a one-element loss. Returns gradients for exactly
    /// the requested parameter leaves; an untouched parameter gets zeros of
    /// its own shape.
    GradientMap backward(Var loss, std::span<const Var> params) const {
        const Node& top = node(loss);
        if (top.value.size() != 1) throw Error("backward: loss must have exactly one element");
        for (const Var& p : params) {
            if (&p.tape() != this) throw Error("backward: parameter bound to a different tape");
            if (node(p).op != Op::leaf) throw Error("backward: parameter is not a leaf");
        }

        std::vector<Tensor> adj(nodes_.size());
        adj[static_cast<std::size_t>(loss.id())] = Tensor::scalar(1.0);

        for (std::int32_t i = loss.id(); i >= 0; --i) {
            const Tensor& g = adj[static_cast<std::size_t>(i)];
            if (g.size() == 0) continue;  // node does not influence the loss
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            propagate(n, g, adj);
        }

        GradientMap out;
        for (const Var& p : params) {
            Tensor& slot = adj[static_cast<std::size_t>(p.id())];
            out.emplace(p.id(), slot.size() ? std::move(slot) : Tensor(node(p).value.shape()));
        }
        return out;
    }

    GradientMap backward(Var loss, std::initializer_list<Var> params) const {
        return backward(loss, std::span<const Var>(params.begin(), params.size()));
    }

private:
    struct Node {
        Op op;
        std::int32_t a = -1;
        std::int32_t b = -1;
        double c = 0.0;       // scale factor
        std::size_t i0 = 0;   // slice bounds
        std::size_t i1 = 0;
        Tensor value;
    };

    friend class Var;

    const Node& node(const Var& v) const {
        if (!v.valid() || v.tape_ != this || static_cast<std::size_t>(v.id_) >= nodes_.size())
            throw Error("Tape: stale or foreign Var");
        return nodes_[static_cast<std::size_t>(v.id_)];
    }

    std::int32_t idx(const Var& v) const {
        node(v);  // validate
        return v.id_;
    }

    const Tensor& val(const Var& v) const { return node(v).value; }

    Var push(Op op, std::int32_t a, std::int32_t b, Tensor value) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
    }

    // adj[j] += delta, allocating on first touch.
    static void accumulate(std::vector<Tensor>& adj, std::int32_t j, const Tensor& delta) {
        Tensor& slot = adj[static_cast<std::size_t>(j)];
        if (slot.size() == 0) {
            slot = delta;
            return;
        }
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += delta[i];
    }

    void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& adj) const {
        switch (n.op) {
            case Op::leaf:
                return;
            case Op::add:
                accumulate(adj, n.a, g);
                accumulate(adj, n.b, g);
                return;
            case Op::sub: {
                accumulate(adj, n.a, g);
                accumulate(adj, n.b, bidpm::scale(g, -1.0));
                return;
            }
            case Op::mul: {
                accumulate(adj, n.a, bidpm::mul(g, value_of(n.b)));
                accumulate(adj, n.b, bidpm::mul(g, value_of(n.a)));
                return;
            }
            case Op::matmul: {
                const Tensor& a = value_of(n.a);
                const Tensor& b = value_of(n.b);
                Tensor ga(a.shape());
                Tensor gb(b.shape());
                detail::mm_nt_acc(g.data().data(), b.data().data(), ga.data().data(), a.rows(),
                                  b.cols(), a.cols());
                detail::mm_tn_acc(a.data().data(), g.data().data(), gb.data().data(), a.rows(),
                                  a.cols(), b.cols());
                accumulate(adj, n.a, ga);
                accumulate(adj, n.b, gb);
                return;
            }
            case Op::scale:
                accumulate(adj, n.a, bidpm::scale(g, n.c));
                return;
            case Op::silu: {
                const Tensor& x = value_of(n.a);
                Tensor gx(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const double s = detail::sigmoid(x[i]);
                    gx[i] = g[i] * s * (1.0 + x[i] * (1.0 - s));
                }
                accumulate(adj, n.a, gx);
                return;
            }
            case Op::exp_:
                // d exp(x) = exp(x), already held in n.value.
                accumulate(adj, n.a, bidpm::mul(g, n.value));
                return;
            case Op::sum: {
                const Tensor& x = value_of(n.a);
                accumulate(adj, n.a, Tensor(x.shape(), g.item()));
                return;
            }
            case Op::mean_square: {
                const Tensor& x = value_of(n.a);
                const double c = g.item() * 2.0 / static_cast<double>(x.size());
                accumulate(adj, n.a, bidpm::scale(x, c));
                return;
            }
            case Op::row_add: {
                accumulate(adj, n.a, g);
                Tensor gv(Shape{1, g.cols()});
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gv[j] += g(i, j);
                accumulate(adj, n.b, gv);
                return;
            }
            case Op::concat_cols: {
                const Tensor& a = value_of(n.a);
                accumulate(adj, n.a, col_block(g, 0, a.cols()));
                accumulate(adj, n.b, col_block(g, a.cols(), g.cols()));
                return;
            }
            case Op::concat_rows: {
                const Tensor& a = value_of(n.a);
                accumulate(adj, n.a, bidpm::slice_rows(g, 0, a.rows()));
                accumulate(adj, n.b, bidpm::slice_rows(g, a.rows(), g.rows()));
                return;
            }
            case Op::slice_rows: {
                const Tensor& a = value_of(n.a);
                Tensor ga(a.shape());
                for (std::size_t i = n.i0; i < n.i1; ++i)
                    for (std::size_t j = 0; j < a.cols(); ++j) ga(i, j) = g(i - n.i0, j);
                accumulate(adj, n.a, ga);
                return;
            }
            case Op::pairwise_sqdist: {
                const Tensor& a = value_of(n.a);
                const Tensor& b = value_of(n.b);
                Tensor ga(a.shape());
                Tensor gb(b.shape());
                const std::size_t d = a.cols();
                for (std::size_t i = 0; i < a.rows(); ++i) {
                    for (std::size_t j = 0; j < b.rows(); ++j) {
                        const double w = 2.0 * g(i, j);
                        if (w == 0.0) continue;
                        for (std::size_t k = 0; k < d; ++k) {
                            const double diff = a(i, k) - b(j, k);
                            ga(i, k) += w * diff;
                            gb(j, k) -= w * diff;
                        }
                    }
                }
                accumulate(adj, n.a, ga);
                accumulate(adj, n.b, gb);
                return;
            }
        }
        throw Error("backward: unknown op");
    }

    const Tensor& value_of(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)].value; }

    static Tensor col_block(const Tensor& g, std::size_t c0, std::size_t c1) {
        Tensor out(Shape{g.rows(), c1 - c0});
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = g(i, j);
        return out;
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape().value(*this); }

// Free-function overloads so templated code can run on Tensors (plain
// evaluation) or Vars (taped evaluation) interchangeably.
inline Var add(Var a, Var b) { return a.tape().add(a, b); }
inline Var sub(Var a, Var b) { return a.tape().sub(a, b); }
inline Var mul(Var a, Var b) { return a.tape().mul(a, b); }
inline Var matmul(Var a, Var b) { return a.tape().matmul(a, b); }
inline Var scale(Var a, double c) { return a.tape().scale(a, c); }
inline Var silu(Var a) { return a.tape().silu(a); }
inline Var exp(Var a) { return a.tape().exp(a); }
inline Var sum(Var a) { return a.tape().sum(a); }
inline Var mean_square(Var a) { return a.tape().mean_square(a); }
inline Var row_add(Var a, Var v) { return a.tape().row_add(a, v); }
inline Var concat_cols(Var a, Var b) { return a.tape().concat_cols(a, b); }
inline Var concat_rows(Var a, Var b) { return a.tape().concat_rows(a, b); }
inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) { return a.tape().slice_rows(a, r0, r1); }
inline Var pairwise_sqdist(Var a, Var b) { return a.tape().pairwise_sqdist(a, b); }

}  // namespace bidpm
