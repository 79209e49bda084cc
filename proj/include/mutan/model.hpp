#pragma once

// Classifier head: optional attention stage, then a fusion operator whose
// output y is read as answer logits, p = softmax(y).

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mutan/attention.hpp"
#include "mutan/fusion.hpp"
#include "mutan/numeric.hpp"

namespace mutan {

struct Prediction {
    Vector probs;
    std::size_t answer = 0;
};

class VqaModel {
public:
    explicit VqaModel(FusionOperator fusion) : fusion_(std::move(fusion)) {}

    /// Attention model: `scorer` maps (q, region) to g glimpse scores and the
    /// final fusion consumes the g·d_v pooled vector as its visual input.
    VqaModel(FusionOperator scorer, FusionOperator fusion) : fusion_(std::move(fusion)), scorer_(std::move(scorer)) {
        const std::size_t g = scorer_->output_dim();
        if (fusion_.input_v_dim() != g * scorer_->input_v_dim())
            throw DimensionError("VqaModel: fusion visual dim " + std::to_string(fusion_.input_v_dim()) +
                                 " must equal glimpses * region dim = " + std::to_string(g * scorer_->input_v_dim()));
        if (fusion_.input_q_dim() != scorer_->input_q_dim())
            throw DimensionError("VqaModel: scorer and fusion disagree on the question dim");
    }

    const FusionOperator& fusion() const noexcept { return fusion_; }
    const FusionOperator* scorer() const noexcept { return scorer_ ? &*scorer_ : nullptr; }
    bool has_attention() const noexcept { return scorer_.has_value(); }
    std::size_t answer_count() const noexcept { return fusion_.output_dim(); }
    std::size_t glimpses() const noexcept { return scorer_ ? scorer_->output_dim() : 0; }

    /// Scorer parameters (prefixed "scorer.") followed by fusion parameters ("fusion.").
    ParamVector params() const {
        ParamVector out;
        if (scorer_) out.append(scorer_->params(), "scorer.");
        out.append(fusion_.params(), "fusion.");
        return out;
    }
    std::size_t param_count() const {
        return fusion_.params().size() + (scorer_ ? scorer_->params().size() : 0);
    }
    void set_params(std::span<const double> values) {
        if (values.size() != param_count())
            throw DimensionError("VqaModel::set_params: expected " + std::to_string(param_count()) + " values, got " +
                                 std::to_string(values.size()));
        std::size_t offset = 0;
        if (scorer_) {
            scorer_->set_params(values.subspan(0, scorer_->params().size()));
            offset = scorer_->params().size();
        }
        fusion_.set_params(values.subspan(offset));
    }

    /// Pre-softmax answer scores. `keep_rank` restricts the final Mutan
    /// fusion to a single z_r.
    Vector logits(const Vector& q, const RegionGrid& grid, std::optional<std::size_t> keep_rank = std::nullopt) const {
        const Vector visual = visual_input(q, grid);
        return keep_rank ? fusion_.forward_rank(q, visual, *keep_rank) : fusion_.forward(q, visual);
    }
    Vector logits(const Vector& q, const Vector& v) const { return logits(q, RegionGrid({v})); }

    Prediction predict(const Vector& q, const RegionGrid& grid) const { return from_logits(logits(q, grid)); }
    Prediction predict(const Vector& q, const Vector& v) const { return predict(q, RegionGrid({v})); }

    static Prediction from_logits(const Vector& y) {
        Prediction p{softmax(y), 0};
        p.answer = argmax(y);
        return p;
    }

    /// Cross-entropy loss of one example; adds dL/dθ into `grad` (same layout
    /// as params()). Returns the loss and the predicted answer.
    std::pair<double, std::size_t> accumulate_gradient(const Vector& q, const RegionGrid& grid, std::size_t target,
                                                       std::span<double> grad) const;

    /// Visual input seen by the final fusion: the single region, or the pooled
    /// attention output.
    Vector visual_input(const Vector& q, const RegionGrid& grid) const {
        grid.validate();
        if (!scorer_) {
            if (grid.count() != 1)
                throw DimensionError("VqaModel without attention needs exactly one region, got " +
                                     std::to_string(grid.count()));
            return grid.regions[0];
        }
        return attend(*scorer_, grid, q).pooled;
    }

private:
    FusionOperator fusion_;
    std::optional<FusionOperator> scorer_;
};

/// −log(max(p[target], 1e-12)).
inline double cross_entropy(const Vector& probs, std::size_t target) {
    if (target >= probs.dim())
        throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                                std::to_string(probs.dim()) + " classes");
    return -std::log(std::max(probs[target], 1e-12));
}

inline std::pair<double, std::size_t> VqaModel::accumulate_gradient(const Vector& q, const RegionGrid& grid,
                                                                    std::size_t target,
                                                                    std::span<double> grad) const {
    if (grad.size() != param_count()) throw DimensionError("accumulate_gradient: gradient buffer has the wrong size");
    std::optional<AttentionResult> att;
    Vector visual;
    if (scorer_) {
        grid.validate();
        att = attend(*scorer_, grid, q);
        visual = att->pooled;
    } else {
        visual = visual_input(q, grid);
    }
    FusionCache cache;
    const Vector y = fusion_.forward(q, visual, &cache);
    const Vector p = softmax(y);
    const double loss = cross_entropy(p, target);
    Vector dy = p;
    dy[target] -= 1.0;
    const FusionGradients fg = fusion_.backward(cache, dy);
    const std::size_t offset = scorer_ ? scorer_->params().size() : 0;
    auto fvals = fg.params.values();
    for (std::size_t i = 0; i < fvals.size(); ++i) grad[offset + i] += fvals[i];
    if (scorer_) {
        const FusionGradients sg = attend_backward(*scorer_, grid, *att, fg.dv);
        auto svals = sg.params.values();
        for (std::size_t i = 0; i < svals.size(); ++i) grad[i] += svals[i];
    }
    return {loss, argmax(y)};
}

/// Mutan fusion restricted to rank `keep_rank` (0-based).
inline Prediction rank_masked_predict(const VqaModel& model, const Vector& q, const RegionGrid& grid,
                                      std::size_t keep_rank) {
    if (model.fusion().scheme() != Scheme::Mutan)
        throw std::logic_error("rank_masked_predict: model fusion is not Mutan");
    return VqaModel::from_logits(model.logits(q, grid, keep_rank));
}

/// Softmax of the mean pre-softmax logits.
inline Prediction ensemble_predict(std::span<const VqaModel> models, const Vector& q, const RegionGrid& grid) {
    if (models.empty()) throw std::invalid_argument("ensemble_predict: empty model list");
    const std::size_t answers = models[0].answer_count();
    // Running mean: k identical members reproduce the single-model logits exactly.
    Vector mean(answers);
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (models[i].answer_count() != answers)
            throw DimensionError("ensemble_predict: models disagree on answer count");
        const Vector y = models[i].logits(q, grid);
        for (std::size_t a = 0; a < answers; ++a) mean[a] += (y[a] - mean[a]) / static_cast<double>(i + 1);
    }
    return VqaModel::from_logits(mean);
}

}  // namespace mutan
