#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bidpm {

/// Error type for all library failures (shape mismatches, numeric blow-ups,
/// bad configs, I/O). The message names the operation and the offending data.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

/// Dense row-major array of 64-bit reals. Values are immutable by convention
/// once handed to the tape; mutation is reserved for construction and for the
/// optimizer's in-place parameter updates.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw Error("Tensor: shape " + shape_str(shape_) + " does not match data length " +
                        std::to_string(data_.size()));
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    /// Single-row matrix [1,D].
    static Tensor row(std::initializer_list<double> xs) {
        return Tensor(Shape{1, xs.size()}, std::vector<double>(xs));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<double> xs) {
        if (xs.size() != r * c)
            throw Error("Tensor::matrix: " + std::to_string(xs.size()) + " values for shape [" +
                        std::to_string(r) + "," + std::to_string(c) + "]");
        return Tensor(Shape{r, c}, std::vector<double>(xs));
    }

    static Tensor identity(std::size_t n) {
        Tensor t(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const {
        require_rank2("rows");
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank2("cols");
        return shape_[1];
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) {
        require_rank2("operator()");
        return data_[i * shape_[1] + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        require_rank2("operator()");
        return data_[i * shape_[1] + j];
    }

    /// Value of a one-element tensor.
    double item() const {
        if (size() != 1) throw Error("Tensor::item: tensor has " + std::to_string(size()) + " elements");
        return data_[0];
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::size_t count(const Shape& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return s.empty() ? 0 : n;
    }

private:
    void require_rank2(const char* what) const {
        if (shape_.size() != 2)
            throw Error(std::string("Tensor::") + what + ": rank-2 required, have " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

namespace detail {

inline void ensure_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw Error(std::string(op) + ": non-finite value produced");
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw Error(std::string(op) + ": rank-2 operand required, have " + shape_str(t.shape()));
}

// C = A * B, row-major, ikj order.
inline void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A * B^T with A [m,k], B [n,k].
inline void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C += A^T * B with A [m,k], B [m,n], C [k,n].
inline void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each validates shapes, computes, and rejects non-finite output.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    detail::ensure_finite(out, "add");
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    detail::ensure_finite(out, "sub");
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    detail::ensure_finite(out, "mul");
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw Error("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out(Shape{a.rows(), b.cols()});
    detail::mm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
    detail::ensure_finite(out, "matmul");
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw Error("scale: non-finite factor");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    detail::ensure_finite(out, "scale");
    return out;
}

/// x * sigmoid(x), the smooth activation used by the velocity network.
inline Tensor silu(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * detail::sigmoid(a[i]);
    detail::ensure_finite(out, "silu");
    return out;
}

inline Tensor exp(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a[i]);
    detail::ensure_finite(out, "exp");
    return out;
}

/// Sum of all entries, as a one-element tensor.
inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    Tensor out = Tensor::scalar(acc);
    detail::ensure_finite(out, "sum");
    return out;
}

/// Mean of squared entries, as a one-element tensor.
inline Tensor mean_square(const Tensor& a) {
    if (a.size() == 0) throw Error("mean_square: empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
    Tensor out = Tensor::scalar(acc / static_cast<double>(a.size()));
    detail::ensure_finite(out, "mean_square");
    return out;
}

/// a[B,D] + v[1,D], v broadcast over rows.
inline Tensor row_add(const Tensor& a, const Tensor& v) {
    detail::require_rank2(a, "row_add");
    detail::require_rank2(v, "row_add");
    if (v.rows() != 1 || v.cols() != a.cols())
        throw Error("row_add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
    Tensor out(a.shape());
    const std::size_t d = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = a(i, j) + v[j];
    detail::ensure_finite(out, "row_add");
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "concat_cols");
    detail::require_rank2(b, "concat_cols");
    if (a.rows() != b.rows())
        throw Error("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(Shape{a.rows(), a.cols() + b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
    }
    detail::ensure_finite(out, "concat_cols");
    return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "concat_rows");
    detail::require_rank2(b, "concat_rows");
    if (a.cols() != b.cols())
        throw Error("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    Tensor out(Shape{a.rows() + b.rows(), a.cols()});
    std::size_t k = 0;
    for (double v : a.data()) out[k++] = v;
    for (double v : b.data()) out[k++] = v;
    detail::ensure_finite(out, "concat_rows");
    return out;
}

/// Rows [r0, r1) of a.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    detail::require_rank2(a, "slice_rows");
    if (r0 >= r1 || r1 > a.rows())
        throw Error("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                    ") out of " + shape_str(a.shape()));
    Tensor out(Shape{r1 - r0, a.cols()});
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i - r0, j) = a(i, j);
    return out;
}

/// D[i,j] = squared Euclidean distance between row i of a and row j of b.
inline Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "pairwise_sqdist");
    detail::require_rank2(b, "pairwise_sqdist");
    if (a.cols() != b.cols())
        throw Error("pairwise_sqdist: dimension mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    Tensor out(Shape{a.rows(), b.rows()});
    const std::size_t d = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = a(i, k) - b(j, k);
                acc += diff * diff;
            }
            out(i, j) = acc;
        }
    }
    detail::ensure_finite(out, "pairwise_sqdist");
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    Tensor out(Shape{a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

}  // namespace bidpm
