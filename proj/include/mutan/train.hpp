#pragma once

// Adam, answer sampling, the consensus accuracy metric and the mini-batch
// training loop with best-epoch checkpointing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "mutan/model.hpp"
#include "mutan/random.hpp"
#include "mutan/synthdata.hpp"

namespace mutan {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 512;
    std::size_t max_epochs = 10;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("learning_rate must be finite and >= 0");
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
            throw ConfigError("Adam betas must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double wall_ms = 0.0;
};

struct TrainState {
    std::vector<double> params;
    std::vector<double> m, v;
    std::uint64_t step = 0;

    struct Best {
        std::size_t epoch = 0;
        double val_accuracy = -1.0;
        std::vector<double> params;
    } best;

    std::vector<EpochRecord> history;

    explicit TrainState(std::vector<double> initial)
        : params(std::move(initial)), m(params.size(), 0.0), v(params.size(), 0.0) {}
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update.
inline void adam_step(TrainState& state, std::span<const double> grads, const TrainConfig& cfg) {
    if (grads.size() != state.params.size())
        throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                             std::to_string(state.params.size()) + " parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        state.params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

/// Uniform pick among labels given by at least 3 annotators; falls back to
/// the most frequent label (lowest label on ties).
inline std::int32_t sample_answer(std::span<const std::int32_t> answers, Rng& rng) {
    if (answers.empty()) throw std::invalid_argument("sample_answer: empty answer multiset");
    std::vector<std::pair<std::int32_t, std::size_t>> counts;  // first-seen order
    for (auto a : answers) {
        auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& p) { return p.first == a; });
        if (it == counts.end())
            counts.emplace_back(a, 1);
        else
            ++it->second;
    }
    std::sort(counts.begin(), counts.end());
    std::vector<std::int32_t> eligible;
    for (const auto& [label, count] : counts)
        if (count >= 3) eligible.push_back(label);
    if (!eligible.empty()) return eligible[rng.below(eligible.size())];
    auto best = counts.front();
    for (const auto& p : counts)
        if (p.second > best.second) best = p;
    return best.first;
}

/// min(1, #annotators who gave `predicted` / 3).
inline double vqa_accuracy(std::int32_t predicted, std::span<const std::int32_t> answers) {
    const auto count = std::count(answers.begin(), answers.end(), predicted);
    return std::min(1.0, static_cast<double>(count) / 3.0);
}

/// Top-1 accuracy against the planted labels.
inline double top1_accuracy(const VqaModel& model, std::span<const Example> examples) {
    if (examples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& ex : examples)
        if (model.predict(ex.q, ex.v).answer == static_cast<std::size_t>(ex.label)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

/// Mean consensus accuracy against the 10-answer multisets.
inline double consensus_accuracy(const VqaModel& model, std::span<const Example> examples) {
    if (examples.empty()) return 0.0;
    double total = 0.0;
    for (const auto& ex : examples)
        total += vqa_accuracy(static_cast<std::int32_t>(model.predict(ex.q, ex.v).answer), ex.answers);
    return total / static_cast<double>(examples.size());
}

/// Tab-separated epoch line: epoch, train_loss, train_acc, val_acc, wall_ms.
inline void write_epoch_line(std::ostream& os, const EpochRecord& r, bool with_timing = true) {
    const auto old = os.precision(17);
    os << r.epoch << '\t' << r.train_loss << '\t' << r.train_accuracy << '\t' << r.val_accuracy << '\t';
    if (with_timing)
        os << std::fixed << std::setprecision(1) << r.wall_ms << std::defaultfloat;
    else
        os << 0;
    os << '\n';
    os.precision(old);
}

/// Mini-batch Adam over a seeded shuffle. Epoch 0 records the initial
/// parameters; the best snapshot is the earliest epoch with the highest
/// validation accuracy and is loaded into `model` on return.
inline TrainState train_loop(VqaModel& model, std::span<const Example> train_set, std::span<const Example> val_set,
                             const TrainConfig& cfg, std::ostream* log = nullptr, bool log_timing = true) {
    cfg.validate();
    if (train_set.empty()) throw TrainingError("train_loop: empty training set");
    if (val_set.empty()) throw TrainingError("train_loop: empty validation set");

    const ParamVector initial = model.params();
    TrainState state({initial.values().begin(), initial.values().end()});
    Rng shuffle_rng(derive_seed(cfg.seed, 21));
    Rng answer_rng(derive_seed(cfg.seed, 22));

    auto record = [&](EpochRecord r) {
        if (r.val_accuracy > state.best.val_accuracy) {
            state.best.epoch = r.epoch;
            state.best.val_accuracy = r.val_accuracy;
            state.best.params = state.params;
        }
        state.history.push_back(r);
        if (log) write_epoch_line(*log, r, log_timing);
    };

    {
        EpochRecord r;
        r.val_accuracy = top1_accuracy(model, val_set);
        record(r);
    }

    std::vector<std::size_t> order(train_set.size());
    std::vector<double> grad(state.params.size());
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = begin; b < end; ++b) {
                const Example& ex = train_set[order[b]];
                const auto target = static_cast<std::size_t>(sample_answer(ex.answers, answer_rng));
                const auto [loss, predicted] = model.accumulate_gradient(ex.q, ex.v, target, grad);
                if (!std::isfinite(loss))
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                                        std::to_string(order[b]));
                loss_sum += loss;
                if (predicted == static_cast<std::size_t>(ex.label)) ++hits;
            }
            const double scale = 1.0 / static_cast<double>(end - begin);
            for (double& g : grad) g *= scale;
            adam_step(state, grad, cfg);
            model.set_params(state.params);
        }

        EpochRecord r;
        r.epoch = epoch;
        r.train_loss = loss_sum / static_cast<double>(train_set.size());
        r.train_accuracy = static_cast<double>(hits) / static_cast<double>(train_set.size());
        r.val_accuracy = top1_accuracy(model, val_set);
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        record(r);
    }
    model.set_params(state.best.params);
    return state;
}

}  // namespace mutan
