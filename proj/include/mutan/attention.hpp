#pragma once

// Multi-glimpse attention. A fusion operator with d_out = g scores every
// region against the question; each glimpse softmaxes its scores over the
// regions independently and sum-pools the regions with those weights. The
// pooled output is the concatenation of the g glimpse vectors.

#include <cstddef>
#include <iomanip>
#include <optional>
#include <ostream>
#include <vector>

#include "mutan/fusion.hpp"
#include "mutan/numeric.hpp"
#include "mutan/tensor.hpp"

namespace mutan {

struct RegionGrid {
    std::vector<Vector> regions;

    RegionGrid() = default;
    explicit RegionGrid(std::vector<Vector> r) : regions(std::move(r)) { validate(); }

    std::size_t count() const noexcept { return regions.size(); }
    std::size_t region_dim() const { return regions.at(0).dim(); }

    void validate() const {
        if (regions.empty()) throw DimensionError("RegionGrid: needs at least one region");
        for (const auto& r : regions)
            if (r.dim() != regions[0].dim()) throw DimensionError("RegionGrid: regions have different dims");
    }

    bool operator==(const RegionGrid&) const = default;
};

/// g × G weights; row j is glimpse j's distribution over regions.
struct AttentionMap {
    Matrix weights;

    std::size_t glimpses() const noexcept { return weights.rows(); }
    std::size_t regions() const noexcept { return weights.cols(); }
};

struct AttentionResult {
    AttentionMap map;
    Matrix scores;  // g × G, pre-softmax
    Vector pooled;  // g·d_v
    std::vector<FusionCache> caches;
};

namespace detail {

inline AttentionMap normalize_scores(const Matrix& scores) {
    AttentionMap map{Matrix(scores.rows(), scores.cols())};
    for (std::size_t j = 0; j < scores.rows(); ++j) {
        const Vector w = softmax(scores.values().subspan(j * scores.cols(), scores.cols()));
        for (std::size_t i = 0; i < scores.cols(); ++i) map.weights(j, i) = w[i];
    }
    return map;
}

}  // namespace detail

/// Softmax each glimpse's scores over regions and pool. Pooling sums
/// regions left to right.
inline AttentionResult pool_with_scores(Matrix scores, const RegionGrid& grid) {
    if (scores.cols() != grid.count())
        throw DimensionError("pool_with_scores: " + std::to_string(scores.cols()) + " score columns for " +
                             std::to_string(grid.count()) + " regions");
    AttentionResult out;
    out.map = detail::normalize_scores(scores);
    out.scores = std::move(scores);
    const std::size_t g = out.map.glimpses(), dv = grid.region_dim();
    out.pooled = Vector(g * dv);
    for (std::size_t j = 0; j < g; ++j)
        for (std::size_t i = 0; i < grid.count(); ++i) {
            const double w = out.map.weights(j, i);
            for (std::size_t d = 0; d < dv; ++d) out.pooled[j * dv + d] += w * grid.regions[i][d];
        }
    return out;
}

/// Scores every region with `scorer` (optionally keeping a single Mutan
/// rank) and pools. Caches are kept so the scorer can be trained.
inline AttentionResult attend(const FusionOperator& scorer, const RegionGrid& grid, const Vector& q,
                              std::optional<std::size_t> keep_rank = std::nullopt) {
    grid.validate();
    if (grid.region_dim() != scorer.input_v_dim() || q.dim() != scorer.input_q_dim())
        throw DimensionError("attend: scorer expects (" + std::to_string(scorer.input_q_dim()) + ", " +
                             std::to_string(scorer.input_v_dim()) + "), got question dim " + std::to_string(q.dim()) +
                             " and region dim " + std::to_string(grid.region_dim()));
    const std::size_t g = scorer.output_dim();
    Matrix scores(g, grid.count());
    std::vector<FusionCache> caches(grid.count());
    for (std::size_t i = 0; i < grid.count(); ++i) {
        const Vector s = keep_rank ? scorer.forward_rank(q, grid.regions[i], *keep_rank, &caches[i])
                                   : scorer.forward(q, grid.regions[i], &caches[i]);
        for (std::size_t j = 0; j < g; ++j) scores(j, i) = s[j];
    }
    AttentionResult out = pool_with_scores(std::move(scores), grid);
    out.caches = std::move(caches);
    return out;
}

/// Gradient of a loss through attend(): returns the scorer's parameter
/// gradient and dL/dq given dL/dpooled.
inline FusionGradients attend_backward(const FusionOperator& scorer, const RegionGrid& grid,
                                       const AttentionResult& fwd, const Vector& dpooled) {
    const std::size_t g = fwd.map.glimpses(), n = grid.count(), dv = grid.region_dim();
    if (dpooled.dim() != g * dv) throw DimensionError("attend_backward: pooled gradient has the wrong dim");
    // dL/dscore[j,i] = w[j,i]·(dL/dw[j,i] − Σ_i' w[j,i']·dL/dw[j,i'])
    Matrix dscores(g, n);
    for (std::size_t j = 0; j < g; ++j) {
        std::vector<double> dw(n);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t d = 0; d < dv; ++d) acc += dpooled[j * dv + d] * grid.regions[i][d];
            dw[i] = acc;
            mean += fwd.map.weights(j, i) * acc;
        }
        for (std::size_t i = 0; i < n; ++i) dscores(j, i) = fwd.map.weights(j, i) * (dw[i] - mean);
    }
    FusionGradients total{scorer.params().zeros_like(), Vector(scorer.input_q_dim()), Vector(scorer.input_v_dim())};
    for (std::size_t i = 0; i < n; ++i) {
        Vector ds(g);
        for (std::size_t j = 0; j < g; ++j) ds[j] = dscores(j, i);
        const FusionGradients gi = scorer.backward(fwd.caches[i], ds);
        auto acc = total.params.values();
        auto src = gi.params.values();
        for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += src[p];
        for (std::size_t d = 0; d < total.dq.dim(); ++d) total.dq[d] += gi.dq[d];
    }
    return total;
}

/// One map per Mutan rank, each computed with z replaced by that rank's z_r.
inline std::vector<AttentionMap> attention_ablation_maps(const FusionOperator& scorer, const RegionGrid& grid,
                                                         const Vector& q) {
    if (scorer.scheme() != Scheme::Mutan)
        throw std::logic_error("attention_ablation_maps: scorer must be Mutan, got " +
                               std::string(to_string(scorer.scheme())));
    std::vector<AttentionMap> maps;
    for (std::size_t r = 0; r < scorer.rank(); ++r) maps.push_back(attend(scorer, grid, q, r).map);
    return maps;
}

/// CSV with one row per glimpse and one column per region, 17 significant digits.
inline void write_attention_csv(std::ostream& os, const AttentionMap& map) {
    const auto old_precision = os.precision(17);
    for (std::size_t j = 0; j < map.glimpses(); ++j) {
        for (std::size_t i = 0; i < map.regions(); ++i) {
            if (i) os << ',';
            os << map.weights(j, i);
        }
        os << '\n';
    }
    os.precision(old_precision);
}

}  // namespace mutan
