#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

#include "mutan/tensor.hpp"

namespace mutan {

/// Max-subtracted softmax.
inline Vector softmax(std::span<const double> y) {
    if (y.empty()) throw DimensionError("softmax of an empty vector");
    const double peak = *std::max_element(y.begin(), y.end());
    Vector p(y.size());
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        p[i] = std::exp(y[i] - peak);
        total += p[i];
    }
    for (double& e : p) e /= total;
    return p;
}

inline Vector softmax(const Vector& y) { return softmax(y.values()); }

/// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> y) {
    if (y.empty()) throw DimensionError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < y.size(); ++i)
        if (y[i] > y[best]) best = i;
    return best;
}

inline std::size_t argmax(const Vector& y) { return argmax(y.values()); }

}  // namespace mutan
