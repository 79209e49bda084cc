#pragma once

// Count sketch and circular convolution. Sketching an outer product under the
// additive joint hash h(i,j) = (h_q[i] + h_v[j]) mod d with sign s_q[i]·s_v[j]
// equals the circular convolution of the two per-input sketches, so the
// outer product never has to be formed.

#include <cstdint>
#include <string>
#include <vector>

#include "mutan/random.hpp"
#include "mutan/tensor.hpp"

namespace mutan {

class CountSketchPlan {
public:
    /// Samples h uniformly in [0, output_dim) and s uniformly in {-1, +1}.
    CountSketchPlan(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed)
        : input_dim_(input_dim), output_dim_(output_dim), seed_(seed) {
        detail::require_positive(input_dim, "CountSketchPlan input_dim");
        detail::require_positive(output_dim, "CountSketchPlan output_dim");
        Rng rng(seed);
        hash_.resize(input_dim);
        sign_.resize(input_dim);
        for (std::size_t i = 0; i < input_dim; ++i) {
            hash_[i] = static_cast<std::uint32_t>(rng.below(output_dim));
            sign_[i] = (rng.next() >> 63) ? 1 : -1;
        }
    }

    /// Explicit arrays; used for hand-built plans.
    CountSketchPlan(std::size_t output_dim, std::vector<std::uint32_t> hash, std::vector<int> sign)
        : input_dim_(hash.size()), output_dim_(output_dim), hash_(std::move(hash)), sign_(std::move(sign)) {
        detail::require_positive(input_dim_, "CountSketchPlan input_dim");
        detail::require_positive(output_dim_, "CountSketchPlan output_dim");
        if (sign_.size() != input_dim_) throw DimensionError("CountSketchPlan: hash and sign lengths differ");
        for (auto h : hash_)
            if (h >= output_dim_) throw DimensionError("CountSketchPlan: hash value out of range");
        for (auto s : sign_)
            if (s != 1 && s != -1) throw DimensionError("CountSketchPlan: sign must be +1 or -1");
    }

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t output_dim() const noexcept { return output_dim_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<std::uint32_t>& hash() const noexcept { return hash_; }
    const std::vector<int>& sign() const noexcept { return sign_; }

    bool operator==(const CountSketchPlan&) const = default;

private:
    std::size_t input_dim_;
    std::size_t output_dim_;
    std::uint64_t seed_ = 0;
    std::vector<std::uint32_t> hash_;
    std::vector<int> sign_;
};

/// out[k] = Σ_{i : h[i] = k} s[i]·x[i].
inline Vector sketch(const CountSketchPlan& plan, const Vector& x) {
    if (x.dim() != plan.input_dim())
        throw DimensionError("sketch: plan expects input dim " + std::to_string(plan.input_dim()) + ", got " +
                             std::to_string(x.dim()));
    Vector out(plan.output_dim());
    for (std::size_t i = 0; i < x.dim(); ++i) out[plan.hash()[i]] += plan.sign()[i] * x[i];
    return out;
}

/// out[k] = Σ_j a[j]·b[(k − j) mod d], computed directly in O(d²).
inline Vector circular_convolution(const Vector& a, const Vector& b) {
    if (a.dim() != b.dim())
        throw DimensionError("circular_convolution: operand dims " + std::to_string(a.dim()) + " and " +
                             std::to_string(b.dim()) + " differ");
    const std::size_t d = a.dim();
    Vector out(d);
    for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += a[j] * b[(k + d - j) % d];
        out[k] = acc;
    }
    return out;
}

/// Sketch of the flattened outer product under the additive joint hash.
/// Materializes nothing larger than the output but walks all d_q·d_v pairs.
inline Vector sketch_outer_product(const CountSketchPlan& plan_q, const CountSketchPlan& plan_v, const Vector& q,
                                   const Vector& v) {
    if (plan_q.output_dim() != plan_v.output_dim())
        throw DimensionError("sketch_outer_product: plans have different output dims");
    if (q.dim() != plan_q.input_dim() || v.dim() != plan_v.input_dim())
        throw DimensionError("sketch_outer_product: input dims do not match plans");
    const std::size_t d = plan_q.output_dim();
    Vector out(d);
    for (std::size_t i = 0; i < q.dim(); ++i)
        for (std::size_t j = 0; j < v.dim(); ++j) {
            const std::size_t k = (plan_q.hash()[i] + plan_v.hash()[j]) % d;
            out[k] += plan_q.sign()[i] * plan_v.sign()[j] * q[i] * v[j];
        }
    return out;
}

}  // namespace mutan
