#include "commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "checks.hpp"
#include "mutan/checkpoint.hpp"
#include "mutan/mutan.hpp"

namespace mutan::cli {
namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string num(double x) { return fmt::format("{:.17g}", x); }

/// Resolved configuration, echoed as "# key=value" lines before any output.
class Echo {
public:
    explicit Echo(std::string command) { add("command", std::move(command)); }
    template <typename T>
    Echo& add(const std::string& key, const T& value) {
        if constexpr (std::is_floating_point_v<T>)
            lines_.emplace_back(key, num(value));
        else
            lines_.emplace_back(key, fmt::format("{}", value));
        return *this;
    }
    void print(std::ostream& err) const {
        for (const auto& [k, v] : lines_) fmt::print(err, "# {}={}\n", k, v);
    }

private:
    std::vector<std::pair<std::string, std::string>> lines_;
};

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------- params

struct ParamsOptions {
    std::string scheme = "Mutan";
    std::size_t dq = 2400, dv = 2048, answers = 2000, t = 360, rank = 10, sketch_dim = 16000;
    bool table1 = false;
};

FusionConfig preset(Scheme s, std::size_t dq, std::size_t dv, std::size_t answers) {
    FusionConfig c;
    c.scheme = s;
    c.d_q = dq;
    c.d_v = dv;
    c.d_out = answers;
    return c;
}

int cmd_params(const ParamsOptions& o, std::ostream& out, std::ostream& err) {
    Echo echo("params");
    echo.add("table1", o.table1);
    if (o.table1) {
        echo.add("dq", 2400).add("dv", 2048).add("answers", 2000).print(err);
        struct Row {
            const char* name;
            FusionConfig cfg;
            double published;
        };
        std::vector<Row> rows;
        rows.push_back({"Concat", preset(Scheme::Concat, 2400, 2048, 2000), 8.9});
        auto mcb = preset(Scheme::MCB, 2400, 2048, 2000);
        mcb.sketch_dim = 16000;
        rows.push_back({"MCB", mcb, 32.0});
        auto mlb = preset(Scheme::MLB, 2400, 2048, 2000);
        mlb.rank = 1200;
        rows.push_back({"MLB", mlb, 7.7});
        auto nor = preset(Scheme::TuckerFusion, 2400, 2048, 2000);
        nor.t_q = nor.t_v = nor.t_o = 160;
        rows.push_back({"MUTAN_noR", nor, 4.9});
        auto mutan = preset(Scheme::Mutan, 2400, 2048, 2000);
        mutan.t_q = mutan.t_v = mutan.t_o = 360;
        mutan.rank = 10;
        rows.push_back({"MUTAN", mutan, 4.9});
        fmt::print(out, "model\tparams\tmillions\tpublished_millions\tstatus\n");
        for (const auto& r : rows) {
            const auto count = param_count(r.cfg);
            const double millions = std::round(static_cast<double>(count) / 1e5) / 10.0;
            const bool match = std::abs(millions - r.published) < 1e-9;
            fmt::print(out, "{}\t{}\t{:.1f}\t{:.1f}\t{}\n", r.name, count, millions, r.published,
                       match ? "match" : "mismatch");
        }
        return exit_ok;
    }
    FusionConfig c = preset(parse_scheme(o.scheme), o.dq, o.dv, o.answers);
    c.t_q = c.t_v = c.t_o = o.t;
    c.rank = c.scheme == Scheme::MLB ? o.t : o.rank;
    c.sketch_dim = o.sketch_dim;
    echo.add("scheme", to_string(c.scheme)).add("dq", o.dq).add("dv", o.dv).add("answers", o.answers);
    echo.add("t", o.t).add("rank", c.rank).add("sketch_dim", o.sketch_dim).print(err);
    const auto count = param_count(c);
    fmt::print(out, "scheme\tparams\tmillions\n{}\t{}\t{:.1f}\n", to_string(c.scheme), count,
               static_cast<double>(count) / 1e6);
    return exit_ok;
}

// ---------------------------------------------------------------- check

struct CheckCmdOptions {
    std::string suite = "all";
    bool inject_fault = false;
    std::size_t threads = 1;
    std::uint64_t seed = 1;
};

int cmd_check(const CheckCmdOptions& o, std::ostream& out, std::ostream& err) {
    Echo("check")
        .add("suite", o.suite)
        .add("inject_fault", o.inject_fault)
        .add("threads", o.threads)
        .add("seed", o.seed)
        .print(err);
    const std::vector<std::string> suites = o.suite == "all" ? suite_names() : std::vector<std::string>{o.suite};
    bool ok = true;
    fmt::print(out, "suite\tcheck\tseed\terror\ttolerance\tstatus\n");
    for (const auto& s : suites)
        for (const auto& row : run_suite(s, CheckOptions{o.seed, o.threads, o.inject_fault})) {
            ok = ok && row.passed();
            fmt::print(out, "{}\t{}\t{}\t{}\t{}\t{}\n", row.suite, row.check, row.seed, num(row.error),
                       num(row.tolerance), row.passed() ? "pass" : "FAIL");
        }
    return ok ? exit_ok : exit_tolerance;
}

// ---------------------------------------------------------------- train

struct ModelOptions {
    std::string scheme = "Mutan";
    std::size_t t = 3, rank = 2, sketch_dim = 0;
    std::optional<std::size_t> glimpses;
    bool no_tanh = false;
};

struct TrainOptions {
    std::string task;
    std::string out = "checkpoint";
    ModelOptions model;
    std::size_t epochs = 10;
    double lr = 1e-4;
    std::optional<std::size_t> batch;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    bool no_timing = false;
    std::optional<double> min_val_acc;
};

FusionConfig fusion_for(Scheme s, std::size_t dq, std::size_t dv, std::size_t dout, std::size_t t, std::size_t rank,
                        std::size_t sketch_dim, bool tanh, std::uint64_t seed) {
    FusionConfig c;
    c.scheme = s;
    c.d_q = dq;
    c.d_v = dv;
    c.d_out = dout;
    c.t_q = c.t_v = c.t_o = t;
    c.rank = s == Scheme::MLB ? t : rank;
    c.sketch_dim = sketch_dim ? sketch_dim : 4 * t;
    c.use_tanh = tanh;
    c.seed = seed;
    c.validate();
    return c;
}

std::size_t resolved_glimpses(const ModelOptions& m, const SyntheticTask& task) {
    const std::size_t g = m.glimpses.value_or(task.config.regions > 1 ? 2 : 0);
    if (g == 0 && task.config.regions > 1)
        throw UsageError(fmt::format("task has {} regions; a model without attention needs --glimpses >= 1",
                                     task.config.regions));
    if (g > 4) throw UsageError("--glimpses must be in 0..4");
    return g;
}

VqaModel build_model(const ModelOptions& m, const SyntheticTask& task, std::uint64_t seed) {
    const Scheme s = parse_scheme(m.scheme);
    const auto& tc = task.config;
    const std::size_t g = resolved_glimpses(m, task);
    const bool tanh = !m.no_tanh;
    FusionConfig fusion =
        fusion_for(s, tc.d_q, g ? g * tc.d_v : tc.d_v, tc.n_answers, m.t, m.rank, m.sketch_dim, tanh, seed);
    if (!g) return VqaModel(FusionOperator(fusion));
    FusionConfig scorer = fusion_for(Scheme::Mutan, tc.d_q, tc.d_v, g, m.t, std::min(m.rank, m.t), 0, tanh,
                                     derive_seed(seed, 2));
    return VqaModel(FusionOperator(scorer), FusionOperator(fusion));
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
    const SyntheticTask task = read_dataset(o.task);
    VqaModel model = build_model(o.model, task, o.seed);
    TrainConfig cfg;
    cfg.learning_rate = o.lr;
    cfg.batch_size = o.batch.value_or(model.has_attention() ? 100 : 512);
    cfg.max_epochs = o.epochs;
    cfg.seed = o.seed;
    cfg.validate();

    Echo echo("train");
    echo.add("task", o.task).add("out", o.out).add("scheme", to_string(model.fusion().scheme()));
    echo.add("t", o.model.t).add("rank", model.fusion().config().rank);
    echo.add("sketch_dim", model.fusion().config().sketch_dim).add("glimpses", model.glimpses());
    echo.add("tanh", !o.model.no_tanh).add("epochs", cfg.max_epochs).add("lr", cfg.learning_rate);
    echo.add("batch", cfg.batch_size).add("seed", cfg.seed).add("threads", o.threads);
    echo.add("params", model.param_count()).print(err);

    fmt::print(out, "epoch\ttrain_loss\ttrain_acc\tval_acc\twall_ms\n");
    const TrainState state = train_loop(model, task.train(), task.val(), cfg, &out, !o.no_timing);
    Manifest extra;
    extra.set("best_epoch", std::to_string(state.best.epoch));
    extra.set("best_val_acc", num(state.best.val_accuracy));
    extra.set("train_seed", std::to_string(cfg.seed));
    if (const auto parent = std::filesystem::path(o.out).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    save_checkpoint(model, o.out, extra);
    fmt::print(err, "# best_epoch={}\n# best_val_acc={}\n# checkpoint={}\n", state.best.epoch,
               num(state.best.val_accuracy), manifest_path(o.out).string());
    if (o.min_val_acc && state.best.val_accuracy < *o.min_val_acc) {
        fmt::print(err, "best val accuracy {} is below --min-val-acc {}\n", num(state.best.val_accuracy),
                   num(*o.min_val_acc));
        return exit_tolerance;
    }
    return exit_ok;
}

// ---------------------------------------------------------------- sweep

struct SweepOptions {
    std::string vary;
    std::string range;
    std::string task;
    std::size_t t = 6;
    std::string ranks = "1,2";
    bool no_tanh = false;
    std::size_t epochs = 10;
    double lr = 1e-4;
    std::size_t batch = 512;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
};

std::vector<std::size_t> parse_range(const std::string& text) {
    std::vector<std::size_t> parts;
    std::stringstream ss(text);
    std::string piece;
    while (std::getline(ss, piece, ':')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(piece, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != piece.size()) throw UsageError("--range must be a:b:step with positive integers");
        parts.push_back(static_cast<std::size_t>(v));
    }
    if (parts.size() == 2) parts.push_back(1);
    if (parts.size() != 3 || parts[2] == 0) throw UsageError("--range must be a:b:step with step > 0");
    std::vector<std::size_t> out;
    for (std::size_t x = parts[0]; x <= parts[1]; x += parts[2]) out.push_back(x);
    if (out.empty() || out.front() == 0) throw UsageError("--range " + text + " selects no positive settings");
    return out;
}

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(piece, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != piece.size() || v == 0) throw UsageError("--ranks must be a comma list of ranks");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw UsageError("--ranks is empty");
    return out;
}

int cmd_sweep(const SweepOptions& o, std::ostream& out, std::ostream& err) {
    const auto settings = parse_range(o.range);
    const auto ranks = parse_list(o.ranks);
    if (o.vary != "t" && o.vary != "to" && o.vary != "rank") throw UsageError("--vary must be t, to or rank");
    const SyntheticTask task = read_dataset(o.task);
    if (task.config.regions != 1) throw UsageError("sweep needs a single-region task");
    const auto& tc = task.config;

    struct Job {
        std::string series;
        std::size_t setting;
        FusionConfig cfg;
    };
    std::vector<Job> jobs;
    auto base = [&](Scheme s) {
        FusionConfig c;
        c.scheme = s;
        c.d_q = tc.d_q;
        c.d_v = tc.d_v;
        c.d_out = tc.n_answers;
        c.use_tanh = !o.no_tanh;
        c.seed = o.seed;
        return c;
    };
    for (std::size_t x : settings) {
        if (o.vary == "t") {
            auto full = base(Scheme::TuckerFusion);
            full.t_q = full.t_v = full.t_o = x;
            auto ident = base(Scheme::MLB);
            ident.rank = x;
            jobs.push_back({"learned_core", x, full});
            jobs.push_back({"identity_core", x, ident});
        } else if (o.vary == "to") {
            auto full = base(Scheme::TuckerFusion);
            full.t_q = full.t_v = o.t;
            full.t_o = x;
            jobs.push_back({"unconstrained", x, full});
            for (std::size_t r : ranks) {
                auto m = base(Scheme::Mutan);
                m.t_q = m.t_v = o.t;
                m.t_o = x;
                m.rank = r;
                jobs.push_back({fmt::format("R{}", r), x, m});
            }
        } else {
            auto m = base(Scheme::Mutan);
            m.t_q = m.t_v = m.t_o = o.t;
            m.rank = x;
            jobs.push_back({"mutan", x, m});
        }
    }
    for (const auto& j : jobs) j.cfg.validate();

    Echo("sweep")
        .add("vary", o.vary)
        .add("range", o.range)
        .add("task", o.task)
        .add("t", o.t)
        .add("ranks", o.ranks)
        .add("tanh", !o.no_tanh)
        .add("epochs", o.epochs)
        .add("lr", o.lr)
        .add("batch", o.batch)
        .add("seed", o.seed)
        .add("threads", o.threads)
        .print(err);

    TrainConfig cfg;
    cfg.learning_rate = o.lr;
    cfg.batch_size = o.batch;
    cfg.max_epochs = o.epochs;
    cfg.seed = o.seed;
    cfg.validate();
    std::vector<double> acc(jobs.size());
    parallel_for(jobs.size(), o.threads, [&](std::size_t i) {
        VqaModel model{FusionOperator(jobs[i].cfg)};
        acc[i] = train_loop(model, task.train(), task.val(), cfg).best.val_accuracy;
    });
    fmt::print(out, "series\tsetting\tparams\tval_acc\n");
    for (std::size_t i = 0; i < jobs.size(); ++i)
        fmt::print(out, "{}\t{}\t{}\t{}\n", jobs[i].series, jobs[i].setting, param_count(jobs[i].cfg), num(acc[i]));
    return exit_ok;
}

// ---------------------------------------------------------------- ablate

struct AblateOptions {
    std::string checkpoint;
    std::string task;
    std::string out_dir = ".";
    std::size_t maps = 1;
};

int cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream& err) {
    const VqaModel model = load_checkpoint(o.checkpoint);
    const SyntheticTask task = read_dataset(o.task);
    if (model.fusion().scheme() != Scheme::Mutan)
        throw UsageError(fmt::format("ablate needs a Mutan fusion, checkpoint has {}", to_string(model.fusion().scheme())));
    const std::size_t R = model.fusion().rank();
    Echo("ablate")
        .add("checkpoint", o.checkpoint)
        .add("task", o.task)
        .add("out_dir", o.out_dir)
        .add("maps", o.maps)
        .add("rank", R)
        .add("glimpses", model.glimpses())
        .print(err);

    const auto val = task.val();
    if (val.empty()) throw UsageError("task has no validation examples");
    std::vector<std::size_t> hits(R, 0);
    std::size_t full_hits = 0;
    double worst = 0.0;
    for (const auto& ex : val) {
        const Vector full = model.logits(ex.q, ex.v);
        if (argmax(full) == static_cast<std::size_t>(ex.label)) ++full_hits;
        std::vector<double> sum(full.dim(), 0.0);
        for (std::size_t r = 0; r < R; ++r) {
            const Vector y = model.logits(ex.q, ex.v, r);
            if (argmax(y) == static_cast<std::size_t>(ex.label)) ++hits[r];
            for (std::size_t a = 0; a < sum.size(); ++a) sum[a] += y[a];
        }
        for (std::size_t a = 0; a < sum.size(); ++a)
            worst = std::max(worst, std::abs(sum[a] - full[a]) / std::max(1.0, std::abs(full[a])));
    }
    const double n = static_cast<double>(val.size());
    fmt::print(out, "rank\tval_acc\tfull_val_acc\n");
    for (std::size_t r = 0; r < R; ++r)
        fmt::print(out, "{}\t{}\t{}\n", r + 1, num(static_cast<double>(hits[r]) / n), num(full_hits / n));

    if (const FusionOperator* scorer = model.scorer(); scorer && scorer->scheme() == Scheme::Mutan) {
        std::filesystem::create_directories(o.out_dir);
        for (std::size_t e = 0; e < std::min(o.maps, val.size()); ++e) {
            auto write = [&](const std::string& name, const AttentionMap& map) {
                const auto path = std::filesystem::path(o.out_dir) / name;
                std::ofstream f(path);
                if (!f) throw FormatError(FormatErrc::io_failure, "cannot write " + path.string());
                write_attention_csv(f, map);
                fmt::print(err, "# wrote {}\n", path.string());
            };
            write(fmt::format("attention_e{}_full.csv", e), attend(*scorer, val[e].v, val[e].q).map);
            const auto maps = attention_ablation_maps(*scorer, val[e].v, val[e].q);
            for (std::size_t r = 0; r < maps.size(); ++r) write(fmt::format("attention_e{}_r{}.csv", e, r + 1), maps[r]);
        }
    }
    constexpr double tolerance = 1e-14;
    const bool ok = worst < tolerance;
    fmt::print(err, "# rank_sum_error={}\n# rank_sum_tolerance={}\n# rank_sum_status={}\n", num(worst), num(tolerance),
               ok ? "pass" : "FAIL");
    return ok ? exit_ok : exit_tolerance;
}

// ---------------------------------------------------------------- gen

struct GenOptions {
    TaskConfig task;
    std::string out;
    bool verify = false;
};

int cmd_gen(const GenOptions& o, std::ostream& out, std::ostream& err) {
    const auto& c = o.task;
    Echo("gen")
        .add("out", o.out)
        .add("dq", c.d_q)
        .add("dv", c.d_v)
        .add("answers", c.n_answers)
        .add("examples", c.train_examples)
        .add("val_examples", c.val_examples)
        .add("regions", c.regions)
        .add("noise", c.noise_sigma)
        .add("planted_t", c.planted_t)
        .add("planted_rank", c.planted_rank)
        .add("distractor_scale", c.distractor_scale)
        .add("seed", c.seed)
        .add("verify", o.verify)
        .print(err);
    const SyntheticTask task = generate(c);
    if (const auto parent = std::filesystem::path(o.out).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    write_dataset(task, o.out);
    fmt::print(out, "item\tvalue\tstatus\n");
    fmt::print(out, "manifest\t{}\tok\n", manifest_path(o.out).string());
    fmt::print(out, "examples\t{}\tok\n", task.examples.size());
    if (!o.verify) return exit_ok;

    const bool round_trip = read_dataset(o.out) == task;
    double acc = 0.0;
    for (const auto& ex : task.examples)
        acc += vqa_accuracy(static_cast<std::int32_t>(planted_label(task.t_star, ex.q, ex.signal())), ex.answers);
    acc = task.examples.empty() ? 1.0 : acc / static_cast<double>(task.examples.size());
    // With noise, the oracle's consensus accuracy is below 1 by construction.
    const bool acc_ok = c.p_noise() > 0.0 || acc == 1.0;
    fmt::print(out, "round_trip\t{}\t{}\n", round_trip ? 1 : 0, round_trip ? "pass" : "FAIL");
    fmt::print(out, "oracle_vqa_accuracy\t{}\t{}\n", num(acc), acc_ok ? "pass" : "FAIL");
    return round_trip && acc_ok ? exit_ok : exit_tolerance;
}

void add_model_flags(CLI::App* app, ModelOptions& m) {
    app->add_option("--scheme", m.scheme, "Concat|FullBilinear|TuckerFusion|Mutan|MLB|MCB")->capture_default_str();
    app->add_option("--t", m.t, "projection dim t_q = t_v = t_o (MLB: its rank)")->capture_default_str();
    app->add_option("--rank", m.rank, "Mutan slice rank R")->capture_default_str();
    app->add_option("--sketch-dim", m.sketch_dim, "MCB sketch dim (0: 4t)")->capture_default_str();
    app->add_option("--glimpses", m.glimpses, "attention glimpses (default 2 on multi-region tasks, else 0)");
    app->add_flag("--no-tanh", m.no_tanh, "linear projections");
}

}  // namespace

std::optional<std::uint64_t> default_seed() {
    const char* env = std::getenv("MUTAN_SEED");
    if (!env) return 1;
    const std::string text(env);
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    if (used != text.size() || text.empty() || text[0] == '-') return std::nullopt;
    return v;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    const auto seed = default_seed();
    if (!seed) {
        fmt::print(err, "error: MUTAN_SEED must be an unsigned integer\n");
        return exit_usage;
    }

    CLI::App app{"Bilinear fusion toolkit: parameter audits, invariant checks and desk-scale experiments", "mutan"};
    app.require_subcommand(1);
    app.allow_windows_style_options(false);

    ParamsOptions params;
    auto* p = app.add_subcommand("params", "parameter counts");
    p->add_option("--scheme", params.scheme)->capture_default_str();
    p->add_option("--dq", params.dq)->capture_default_str();
    p->add_option("--dv", params.dv)->capture_default_str();
    p->add_option("--answers", params.answers)->capture_default_str();
    p->add_option("--t", params.t)->capture_default_str();
    p->add_option("--rank", params.rank)->capture_default_str();
    p->add_option("--sketch-dim", params.sketch_dim)->capture_default_str();
    p->add_flag("--table1", params.table1, "the five reference rows with published values");

    CheckCmdOptions check;
    check.seed = *seed;
    auto* c = app.add_subcommand("check", "invariant suites");
    c->add_option("--suite", check.suite)
        ->check(CLI::IsMember({"all", "equiv", "grad", "sketch", "ablate-linearity"}))
        ->capture_default_str();
    c->add_flag("--inject-fault", check.inject_fault, "flip a sign in the backward pass");
    c->add_option("--threads", check.threads)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--seed", check.seed)->capture_default_str();

    TrainOptions train;
    train.seed = *seed;
    auto* t = app.add_subcommand("train", "train a model on a generated task");
    t->add_option("--task", train.task, "dataset path")->required();
    t->add_option("--out", train.out, "checkpoint path")->capture_default_str();
    add_model_flags(t, train.model);
    t->add_option("--epochs", train.epochs)->capture_default_str();
    t->add_option("--lr", train.lr)->capture_default_str();
    t->add_option("--batch", train.batch, "batch size (default 512, 100 with attention)");
    t->add_option("--seed", train.seed)->capture_default_str();
    t->add_option("--threads", train.threads)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_flag("--no-timing", train.no_timing, "write 0 in the wall_ms column");
    t->add_option("--min-val-acc", train.min_val_acc, "exit 1 if the best val accuracy is lower");

    SweepOptions sweep;
    sweep.seed = *seed;
    auto* s = app.add_subcommand("sweep", "accuracy and parameter count over a setting range");
    s->add_option("--vary", sweep.vary)->required()->check(CLI::IsMember({"t", "to", "rank"}));
    s->add_option("--range", sweep.range, "a:b:step, inclusive")->required();
    s->add_option("--task", sweep.task)->required();
    s->add_option("--t", sweep.t, "fixed t_q = t_v for --vary to|rank")->capture_default_str();
    s->add_option("--ranks", sweep.ranks, "ranks compared with the dense core for --vary to")->capture_default_str();
    s->add_flag("--no-tanh", sweep.no_tanh);
    s->add_option("--epochs", sweep.epochs)->capture_default_str();
    s->add_option("--lr", sweep.lr)->capture_default_str();
    s->add_option("--batch", sweep.batch)->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--seed", sweep.seed)->capture_default_str();
    s->add_option("--threads", sweep.threads)->check(CLI::PositiveNumber)->capture_default_str();

    AblateOptions ablate;
    auto* a = app.add_subcommand("ablate", "per-rank accuracy and attention maps of a Mutan checkpoint");
    a->add_option("--checkpoint", ablate.checkpoint)->required();
    a->add_option("--task", ablate.task)->required();
    a->add_option("--out-dir", ablate.out_dir, "attention CSV directory")->capture_default_str();
    a->add_option("--maps", ablate.maps, "validation examples to export maps for")->capture_default_str();
    std::size_t ablate_threads = 1;
    a->add_option("--threads", ablate_threads)->check(CLI::PositiveNumber)->capture_default_str();

    GenOptions gen;
    gen.task.seed = *seed;
    auto* g = app.add_subcommand("gen", "generate a planted synthetic task");
    g->add_option("--dq", gen.task.d_q)->capture_default_str();
    g->add_option("--dv", gen.task.d_v)->capture_default_str();
    g->add_option("--answers", gen.task.n_answers)->capture_default_str();
    g->add_option("--examples", gen.task.train_examples, "training examples")->capture_default_str();
    g->add_option("--val-examples", gen.task.val_examples)->capture_default_str();
    g->add_option("--regions", gen.task.regions)->capture_default_str();
    g->add_option("--noise", gen.task.noise_sigma)->capture_default_str();
    g->add_option("--planted-t", gen.task.planted_t, "0 plants a dense tensor")->capture_default_str();
    g->add_option("--planted-rank", gen.task.planted_rank)->capture_default_str();
    g->add_option("--distractor-scale", gen.task.distractor_scale)->capture_default_str();
    g->add_option("--seed", gen.task.seed)->capture_default_str();
    g->add_option("--out", gen.out)->required();
    g->add_flag("--verify", gen.verify, "read back and score the planted oracle");
    std::size_t gen_threads = 1;
    g->add_option("--threads", gen_threads)->check(CLI::PositiveNumber)->capture_default_str();

    std::size_t params_threads = 1;
    p->add_option("--threads", params_threads)->check(CLI::PositiveNumber)->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return exit_usage;
    }

    try {
        if (p->parsed()) return cmd_params(params, out, err);
        if (c->parsed()) return cmd_check(check, out, err);
        if (t->parsed()) return cmd_train(train, out, err);
        if (s->parsed()) return cmd_sweep(sweep, out, err);
        if (a->parsed()) return cmd_ablate(ablate, out, err);
        if (g->parsed()) return cmd_gen(gen, out, err);
    } catch (const FormatError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return exit_io;
    } catch (const std::filesystem::filesystem_error& e) {
        fmt::print(err, "error: {}\n", e.what());
        return exit_io;
    } catch (const TrainingError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return exit_tolerance;
    } catch (const std::invalid_argument& e) {  // ConfigError, DimensionError, UsageError
        fmt::print(err, "error: {}\n", e.what());
        return exit_usage;
    } catch (const std::out_of_range& e) {
        fmt::print(err, "error: {}\n", e.what());
        return exit_usage;
    } catch (const std::logic_error& e) {
        fmt::print(err, "error: {}\n", e.what());
        return exit_usage;
    }
    return exit_usage;
}

}  // namespace mutan::cli
