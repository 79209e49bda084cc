#pragma once

// Planted-tensor synthetic VQA tasks.
//
// A ground-truth tensor T* (dense, or a Tucker reconstruction whose core has
// slices of rank <= planted_rank) labels each (q, v) pair with
// argmax_k (T* ×1 q) ×2 v. Each example also carries a 10-answer multiset
// with a configurable fraction of random wrong answers, so answer sampling
// and the consensus metric are exercised end to end.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mutan/attention.hpp"
#include "mutan/blob.hpp"
#include "mutan/fusion.hpp"
#include "mutan/numeric.hpp"
#include "mutan/random.hpp"
#include "mutan/tensor.hpp"

namespace mutan {

inline constexpr std::size_t answers_per_example = 10;

struct TaskConfig {
    std::size_t d_q = 8;
    std::size_t d_v = 8;
    std::size_t n_answers = 4;
    std::size_t train_examples = 2000;
    std::size_t val_examples = 500;
    std::size_t regions = 1;          // > 1 makes an attention task
    double noise_sigma = 0.0;         // p_noise = min(0.5, noise_sigma)
    std::size_t planted_t = 3;        // 0 plants a dense i.i.d. tensor
    std::size_t planted_rank = 2;
    double distractor_scale = 0.25;   // std-dev of non-signal regions
    std::uint64_t seed = 1;

    bool operator==(const TaskConfig&) const = default;

    double p_noise() const { return std::min(0.5, noise_sigma); }

    void validate() const {
        if (d_q == 0 || d_v == 0 || n_answers == 0 || regions == 0)
            throw ConfigError("task dims, answer count and region count must be positive");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
        if (planted_t > 0 && (planted_rank == 0 || planted_rank > planted_t))
            throw ConfigError("planted_rank must be in [1, planted_t]");
        if (!(distractor_scale >= 0.0)) throw ConfigError("distractor_scale must be >= 0");
    }
};

struct Example {
    Vector q;
    RegionGrid v;
    std::array<std::int32_t, answers_per_example> answers{};
    std::int32_t label = 0;          // clean planted label
    std::int32_t signal_region = 0;  // region holding the labelled visual vector

    const Vector& signal() const { return v.regions.at(static_cast<std::size_t>(signal_region)); }
    bool operator==(const Example&) const = default;
};

struct SyntheticTask {
    TaskConfig config;
    DenseTensor3 t_star;
    std::vector<Example> examples;  // train examples first, then validation

    std::span<const Example> train() const { return std::span(examples).first(config.train_examples); }
    std::span<const Example> val() const { return std::span(examples).subspan(config.train_examples); }

    bool operator==(const SyntheticTask&) const = default;
};

/// Label a Bayes-optimal predictor would output: argmax of the planted score.
inline std::size_t planted_label(const DenseTensor3& t_star, const Vector& q, const Vector& v) {
    return argmax(full_bilinear_forward(t_star, q, v));
}

inline DenseTensor3 plant_tensor(const TaskConfig& c) {
    Rng rng(derive_seed(c.seed, 11));
    auto normal_matrix = [&](std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double& x : m.values()) x = rng.normal();
        return m;
    };
    if (c.planted_t == 0) {
        DenseTensor3 t({c.d_q, c.d_v, c.n_answers});
        for (double& x : t.values()) x = rng.normal();
        return t;
    }
    const std::size_t t = c.planted_t;
    const Matrix wq = normal_matrix(c.d_q, t);
    const Matrix wv = normal_matrix(c.d_v, t);
    std::vector<Matrix> m, n;
    for (std::size_t r = 0; r < c.planted_rank; ++r) m.push_back(normal_matrix(t, t));
    for (std::size_t r = 0; r < c.planted_rank; ++r) n.push_back(normal_matrix(t, t));
    const Matrix wo = normal_matrix(c.n_answers, t);
    return tucker_reconstruct(core_from_slices(m, n), wq, wv, wo);
}

inline SyntheticTask generate(const TaskConfig& config) {
    config.validate();
    SyntheticTask task{config, plant_tensor(config), {}};
    Rng rng(derive_seed(config.seed, 12));
    const std::size_t total = config.train_examples + config.val_examples;
    const auto clean_copies = static_cast<std::size_t>(
        std::lround(static_cast<double>(answers_per_example) * (1.0 - config.p_noise())));
    task.examples.reserve(total);
    for (std::size_t e = 0; e < total; ++e) {
        Example ex;
        ex.q = Vector(config.d_q);
        for (double& x : ex.q) x = rng.normal();
        ex.signal_region = static_cast<std::int32_t>(config.regions > 1 ? rng.below(config.regions) : 0);
        std::vector<Vector> regions;
        for (std::size_t g = 0; g < config.regions; ++g) {
            const double scale = static_cast<std::int32_t>(g) == ex.signal_region ? 1.0 : config.distractor_scale;
            Vector r(config.d_v);
            for (double& x : r) x = scale * rng.normal();
            regions.push_back(std::move(r));
        }
        ex.v = RegionGrid(std::move(regions));
        ex.label = static_cast<std::int32_t>(planted_label(task.t_star, ex.q, ex.signal()));
        for (std::size_t a = 0; a < answers_per_example; ++a) {
            if (a < clean_copies || config.n_answers == 1) {
                ex.answers[a] = ex.label;
            } else {
                // uniform over the other labels
                auto other = static_cast<std::int32_t>(rng.below(config.n_answers - 1));
                ex.answers[a] = other >= ex.label ? other + 1 : other;
            }
        }
        task.examples.push_back(std::move(ex));
    }
    return task;
}

namespace detail {

inline std::string exact_double(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

}  // namespace detail

inline Document task_document(const SyntheticTask& task) {
    const auto& c = task.config;
    Document doc;
    auto& m = doc.manifest;
    m.set("kind", "dataset");
    m.set_number("d_q", c.d_q);
    m.set_number("d_v", c.d_v);
    m.set_number("n_answers", c.n_answers);
    m.set_number("regions", c.regions);
    m.set_number("train_examples", c.train_examples);
    m.set_number("val_examples", c.val_examples);
    m.set_number("planted_t", c.planted_t);
    m.set_number("planted_rank", c.planted_rank);
    m.set("noise", detail::exact_double(c.noise_sigma));
    m.set("distractor_scale", detail::exact_double(c.distractor_scale));
    m.set_number("seed", c.seed);

    const auto n = static_cast<std::uint32_t>(task.examples.size());
    const auto dq = static_cast<std::uint32_t>(c.d_q), dv = static_cast<std::uint32_t>(c.d_v);
    const auto g = static_cast<std::uint32_t>(c.regions);
    const auto& ts = task.t_star;
    doc.arrays.push_back(BlobArray::doubles(
        "T_star",
        {static_cast<std::uint32_t>(ts.dim(0)), static_cast<std::uint32_t>(ts.dim(1)),
         static_cast<std::uint32_t>(ts.dim(2))},
        {ts.values().begin(), ts.values().end()}));
    std::vector<double> qs, vs;
    std::vector<std::int32_t> answers, labels, signal;
    for (const auto& ex : task.examples) {
        qs.insert(qs.end(), ex.q.begin(), ex.q.end());
        for (const auto& r : ex.v.regions) vs.insert(vs.end(), r.begin(), r.end());
        answers.insert(answers.end(), ex.answers.begin(), ex.answers.end());
        labels.push_back(ex.label);
        signal.push_back(ex.signal_region);
    }
    doc.arrays.push_back(BlobArray::doubles("Q", {n, dq}, std::move(qs)));
    doc.arrays.push_back(BlobArray::doubles("V", {n, g, dv}, std::move(vs)));
    doc.arrays.push_back(
        BlobArray::ints("answers", {n, static_cast<std::uint32_t>(answers_per_example)}, std::move(answers)));
    doc.arrays.push_back(BlobArray::ints("labels", {n}, std::move(labels)));
    doc.arrays.push_back(BlobArray::ints("signal_region", {n}, std::move(signal)));
    return doc;
}

inline void write_dataset(const SyntheticTask& task, const std::filesystem::path& path) {
    write_document(path, task_document(task));
}

inline SyntheticTask read_dataset(const std::filesystem::path& path) {
    const Document doc = read_document(path);
    const auto& m = doc.manifest;
    if (!m.contains("kind") || m.get("kind") != "dataset")
        throw FormatError(FormatErrc::malformed, path.string() + " is not a dataset document");
    SyntheticTask task;
    auto& c = task.config;
    c.d_q = m.get_uint("d_q");
    c.d_v = m.get_uint("d_v");
    c.n_answers = m.get_uint("n_answers");
    c.regions = m.get_uint("regions");
    c.train_examples = m.get_uint("train_examples");
    c.val_examples = m.get_uint("val_examples");
    c.planted_t = m.get_uint("planted_t");
    c.planted_rank = m.get_uint("planted_rank");
    c.noise_sigma = m.get_double("noise");
    c.distractor_scale = m.get_double("distractor_scale");
    c.seed = m.get_uint("seed");

    const auto expect_dims = [&](const BlobArray& a, std::vector<std::uint32_t> dims) {
        if (a.dims != dims) throw FormatError(FormatErrc::malformed, "array " + a.name + " has unexpected dims");
    };
    const std::size_t n = c.train_examples + c.val_examples;
    const auto n32 = static_cast<std::uint32_t>(n);
    const auto& ts = doc.array("T_star");
    if (ts.dims.size() != 3 || ts.dtype != DType::f64)
        throw FormatError(FormatErrc::malformed, "T_star must be a rank-3 f64 array");
    task.t_star = DenseTensor3({ts.dims[0], ts.dims[1], ts.dims[2]}, ts.f64);
    const auto& qs = doc.array("Q");
    const auto& vs = doc.array("V");
    const auto& answers = doc.array("answers");
    const auto& labels = doc.array("labels");
    const auto& signal = doc.array("signal_region");
    expect_dims(qs, {n32, static_cast<std::uint32_t>(c.d_q)});
    expect_dims(vs, {n32, static_cast<std::uint32_t>(c.regions), static_cast<std::uint32_t>(c.d_v)});
    expect_dims(answers, {n32, static_cast<std::uint32_t>(answers_per_example)});
    expect_dims(labels, {n32});
    expect_dims(signal, {n32});
    if (qs.dtype != DType::f64 || vs.dtype != DType::f64 || answers.dtype != DType::i32 ||
        labels.dtype != DType::i32 || signal.dtype != DType::i32)
        throw FormatError(FormatErrc::malformed, "dataset arrays have unexpected dtypes");

    task.examples.resize(n);
    for (std::size_t e = 0; e < n; ++e) {
        auto& ex = task.examples[e];
        ex.q = Vector(std::vector<double>(qs.f64.begin() + e * c.d_q, qs.f64.begin() + (e + 1) * c.d_q));
        std::vector<Vector> regions;
        for (std::size_t g = 0; g < c.regions; ++g) {
            const auto start = vs.f64.begin() + (e * c.regions + g) * c.d_v;
            regions.emplace_back(std::vector<double>(start, start + c.d_v));
        }
        ex.v = RegionGrid(std::move(regions));
        for (std::size_t a = 0; a < answers_per_example; ++a) {
            ex.answers[a] = answers.i32[e * answers_per_example + a];
            if (ex.answers[a] < 0 || static_cast<std::size_t>(ex.answers[a]) >= c.n_answers)
                throw FormatError(FormatErrc::malformed, "answer label out of range");
        }
        ex.label = labels.i32[e];
        ex.signal_region = signal.i32[e];
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= c.n_answers || ex.signal_region < 0 ||
            static_cast<std::size_t>(ex.signal_region) >= c.regions)
            throw FormatError(FormatErrc::malformed, "label or signal region out of range");
    }
    return task;
}

}  // namespace mutan
