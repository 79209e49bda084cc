#pragma once

// Dense 1/2/3-way storage and the mode products that every fusion scheme is
// written against. Everything is row-major and 0-based; for a 3-way tensor
// the last mode is the fastest-moving index.

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mutan {

/// Thrown whenever operand shapes do not conform.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_positive(std::size_t n, const char* what) {
    if (n == 0) throw DimensionError(std::string(what) + ": dimension 0 is not allowed");
}

}  // namespace detail

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
    Vector(std::initializer_list<double> values) : data_(values) {}
    explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

    std::size_t dim() const noexcept { return data_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool operator==(const Vector&) const = default;

private:
    std::vector<double> data_;
};

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        detail::require_positive(rows, "Matrix rows");
        detail::require_positive(cols, "Matrix cols");
    }
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require_positive(rows, "Matrix rows");
        detail::require_positive(cols, "Matrix cols");
        if (data_.size() != rows * cols)
            throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                                 " != rows*cols " + std::to_string(rows * cols));
    }
    /// Row-by-row literal, e.g. Matrix{{1, 1}, {0, 1}}.
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows.size() ? rows.begin()->size() : 0;
        detail::require_positive(rows_, "Matrix rows");
        detail::require_positive(cols_, "Matrix cols");
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

using Dims3 = std::array<std::size_t, 3>;

class DenseTensor3 {
public:
    DenseTensor3() = default;
    explicit DenseTensor3(Dims3 dims, double fill = 0.0) : dims_(dims) {
        for (auto d : dims_) detail::require_positive(d, "DenseTensor3");
        data_.assign(dims_[0] * dims_[1] * dims_[2], fill);
    }
    DenseTensor3(Dims3 dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
        for (auto d : dims_) detail::require_positive(d, "DenseTensor3");
        if (data_.size() != dims_[0] * dims_[1] * dims_[2])
            throw DimensionError("DenseTensor3: data length does not match dims");
    }

    const Dims3& dims() const noexcept { return dims_; }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return (i * dims_[1] + j) * dims_[2] + k;
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[offset(i, j, k)]; }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[offset(i, j, k)]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool operator==(const DenseTensor3&) const = default;

private:
    Dims3 dims_{0, 0, 0};
    std::vector<double> data_;
};

namespace detail {

inline std::size_t mode_axis(int mode) {
    if (mode < 1 || mode > 3) throw DimensionError("mode must be 1, 2 or 3, got " + std::to_string(mode));
    return static_cast<std::size_t>(mode - 1);
}

inline std::string mismatch(const char* op, int mode, std::size_t expected, std::size_t got) {
    return std::string(op) + ": mode " + std::to_string(mode) + " has size " + std::to_string(expected) +
           " but operand has size " + std::to_string(got);
}

}  // namespace detail

/// T ×_mode M where M is (new_dim × old_dim): out[..j..] = Σ_i M(j,i)·T[..i..].
inline DenseTensor3 mode_n_product(const DenseTensor3& t, const Matrix& m, int mode) {
    const std::size_t axis = detail::mode_axis(mode);
    if (m.cols() != t.dim(axis))
        throw DimensionError(detail::mismatch("mode_n_product", mode, t.dim(axis), m.cols()));

    Dims3 out_dims = t.dims();
    out_dims[axis] = m.rows();
    DenseTensor3 out(out_dims);
    const auto [a, b, c] = t.dims();

    switch (axis) {
        case 0:
            for (std::size_t j = 0; j < m.rows(); ++j)
                for (std::size_t i = 0; i < a; ++i) {
                    const double w = m(j, i);
                    if (w == 0.0) continue;
                    for (std::size_t y = 0; y < b; ++y)
                        for (std::size_t z = 0; z < c; ++z) out(j, y, z) += w * t(i, y, z);
                }
            break;
        case 1:
            for (std::size_t x = 0; x < a; ++x)
                for (std::size_t j = 0; j < m.rows(); ++j)
                    for (std::size_t i = 0; i < b; ++i) {
                        const double w = m(j, i);
                        if (w == 0.0) continue;
                        for (std::size_t z = 0; z < c; ++z) out(x, j, z) += w * t(x, i, z);
                    }
            break;
        default:
            for (std::size_t x = 0; x < a; ++x)
                for (std::size_t y = 0; y < b; ++y)
                    for (std::size_t j = 0; j < m.rows(); ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < c; ++i) acc += m(j, i) * t(x, y, i);
                        out(x, y, j) = acc;
                    }
            break;
    }
    return out;
}

/// Contracts `mode` with x and drops it; the result is indexed by the two
/// remaining modes in their original order.
inline Matrix mode_n_vector_product(const DenseTensor3& t, const Vector& x, int mode) {
    const std::size_t axis = detail::mode_axis(mode);
    if (x.dim() != t.dim(axis))
        throw DimensionError(detail::mismatch("mode_n_vector_product", mode, t.dim(axis), x.dim()));
    const auto [a, b, c] = t.dims();

    switch (axis) {
        case 0: {
            Matrix out(b, c);
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t y = 0; y < b; ++y)
                    for (std::size_t z = 0; z < c; ++z) out(y, z) += x[i] * t(i, y, z);
            return out;
        }
        case 1: {
            Matrix out(a, c);
            for (std::size_t p = 0; p < a; ++p)
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t z = 0; z < c; ++z) out(p, z) += x[i] * t(p, i, z);
            return out;
        }
        default: {
            Matrix out(a, b);
            for (std::size_t p = 0; p < a; ++p)
                for (std::size_t y = 0; y < b; ++y) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < c; ++i) acc += x[i] * t(p, y, i);
                    out(p, y) = acc;
                }
            return out;
        }
    }
}

/// ((core ×1 wq) ×2 wv) ×3 wo.
inline DenseTensor3 tucker_reconstruct(const DenseTensor3& core, const Matrix& wq, const Matrix& wv,
                                       const Matrix& wo) {
    if (wq.cols() != core.dim(0) || wv.cols() != core.dim(1) || wo.cols() != core.dim(2))
        throw DimensionError("tucker_reconstruct: factor column counts (" + std::to_string(wq.cols()) + ", " +
                             std::to_string(wv.cols()) + ", " + std::to_string(wo.cols()) +
                             ") do not match core dims (" + std::to_string(core.dim(0)) + ", " +
                             std::to_string(core.dim(1)) + ", " + std::to_string(core.dim(2)) + ")");
    return mode_n_product(mode_n_product(mode_n_product(core, wq, 1), wv, 2), wo, 3);
}

inline Matrix outer_product(const Vector& a, const Vector& b) {
    Matrix out(a.dim(), b.dim());
    for (std::size_t i = 0; i < a.dim(); ++i)
        for (std::size_t j = 0; j < b.dim(); ++j) out(i, j) = a[i] * b[j];
    return out;
}

/// y = W·x for W (rows × cols).
inline Vector matvec(const Matrix& w, const Vector& x) {
    if (w.cols() != x.dim())
        throw DimensionError("matvec: matrix has " + std::to_string(w.cols()) + " columns, vector has " +
                             std::to_string(x.dim()) + " entries");
    Vector y(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) acc += w(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

}  // namespace mutan
