#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mutan/tensor.hpp"

namespace mutan {

struct ParamSpec {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;

    std::size_t size() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }
    bool operator==(const ParamSpec&) const = default;
};

/// Non-owning row-major matrix window into a ParamVector.
template <typename T>
struct BasicMatrixRef {
    std::span<T> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

using MatrixRef = BasicMatrixRef<double>;
using ConstMatrixRef = BasicMatrixRef<const double>;

/// Flat list of learnable scalars with a (name, shape, offset) manifest.
/// Entries are laid out back to back in declaration order.
class ParamVector {
public:
    std::size_t add(std::string name, std::vector<std::size_t> shape) {
        for (const auto& s : manifest_)
            if (s.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
        ParamSpec spec{std::move(name), std::move(shape), values_.size()};
        values_.resize(values_.size() + spec.size(), 0.0);
        manifest_.push_back(std::move(spec));
        return manifest_.size() - 1;
    }

    /// Same manifest, all values zero.
    ParamVector zeros_like() const {
        ParamVector out;
        out.manifest_ = manifest_;
        out.values_.assign(values_.size(), 0.0);
        return out;
    }

    std::size_t size() const noexcept { return values_.size(); }
    std::size_t entry_count() const noexcept { return manifest_.size(); }
    const std::vector<ParamSpec>& manifest() const noexcept { return manifest_; }
    const ParamSpec& spec(std::size_t index) const { return manifest_.at(index); }

    std::size_t find(const std::string& name) const {
        for (std::size_t i = 0; i < manifest_.size(); ++i)
            if (manifest_[i].name == name) return i;
        throw std::out_of_range("no parameter named " + name);
    }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    std::span<double> entry(std::size_t index) {
        const auto& s = manifest_.at(index);
        return std::span<double>(values_).subspan(s.offset, s.size());
    }
    std::span<const double> entry(std::size_t index) const {
        const auto& s = manifest_.at(index);
        return std::span<const double>(values_).subspan(s.offset, s.size());
    }

    MatrixRef matrix(std::size_t index) {
        const auto& s = manifest_.at(index);
        return {entry(index), s.shape.at(0), s.shape.at(1)};
    }
    ConstMatrixRef matrix(std::size_t index) const {
        const auto& s = manifest_.at(index);
        return {entry(index), s.shape.at(0), s.shape.at(1)};
    }

    Matrix copy_matrix(std::size_t index) const {
        const auto& s = manifest_.at(index);
        auto e = entry(index);
        return Matrix(s.shape.at(0), s.shape.at(1), std::vector<double>(e.begin(), e.end()));
    }
    DenseTensor3 copy_tensor(std::size_t index) const {
        const auto& s = manifest_.at(index);
        auto e = entry(index);
        return DenseTensor3({s.shape.at(0), s.shape.at(1), s.shape.at(2)}, std::vector<double>(e.begin(), e.end()));
    }

    /// Overwrites all values; the length must match.
    void assign(std::span<const double> values) {
        if (values.size() != values_.size())
            throw DimensionError("ParamVector::assign: expected " + std::to_string(values_.size()) + " values, got " +
                                 std::to_string(values.size()));
        values_.assign(values.begin(), values.end());
    }

    /// Appends every entry of `other` under `prefix`.
    void append(const ParamVector& other, const std::string& prefix) {
        for (std::size_t i = 0; i < other.entry_count(); ++i) {
            const auto idx = add(prefix + other.spec(i).name, other.spec(i).shape);
            auto src = other.entry(i);
            std::copy(src.begin(), src.end(), entry(idx).begin());
        }
    }

    bool operator==(const ParamVector&) const = default;

private:
    std::vector<ParamSpec> manifest_;
    std::vector<double> values_;
};

}  // namespace mutan
