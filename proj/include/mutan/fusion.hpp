#pragma once

// Bilinear fusion operators (q, v) -> y.
//
// All Tucker-family schemes share the pipeline
//   q~ = act(q^T Wq),  v~ = act(v^T Wv),  z = core(q~, v~),  y = Wo z
// and differ only in how the core interaction z is parameterized:
//   TuckerFusion  dense core Tc, z[k] = q~^T Tc[:,:,k] v~
//   Mutan         z = sum_r (q~^T M_r) * (v~^T N_r)   (each slice of rank <= R)
//   MLB           identity core, z = q~ * v~
//   MCB           fixed signed count sketch, z = conv(sketch(q), sketch(v))
// FullBilinear stores the whole 3-way tensor and Concat is the linear
// baseline y = W [q; v].

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mutan/params.hpp"
#include "mutan/random.hpp"
#include "mutan/sketch.hpp"
#include "mutan/tensor.hpp"

namespace mutan {

enum class Scheme { Concat, FullBilinear, TuckerFusion, Mutan, MLB, MCB };

inline constexpr Scheme all_schemes[] = {Scheme::Concat, Scheme::FullBilinear, Scheme::TuckerFusion,
                                         Scheme::Mutan,  Scheme::MLB,          Scheme::MCB};

inline std::string_view to_string(Scheme s) {
    switch (s) {
        case Scheme::Concat: return "Concat";
        case Scheme::FullBilinear: return "FullBilinear";
        case Scheme::TuckerFusion: return "TuckerFusion";
        case Scheme::Mutan: return "Mutan";
        case Scheme::MLB: return "MLB";
        case Scheme::MCB: return "MCB";
    }
    return "?";
}

inline Scheme parse_scheme(std::string_view text) {
    for (auto s : all_schemes) {
        const auto name = to_string(s);
        if (name.size() != text.size()) continue;
        bool same = true;
        for (std::size_t i = 0; i < name.size(); ++i)
            if (std::tolower(static_cast<unsigned char>(name[i])) != std::tolower(static_cast<unsigned char>(text[i])))
                same = false;
        if (same) return s;
    }
    throw std::invalid_argument("unknown fusion scheme: " + std::string(text));
}

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct FusionConfig {
    Scheme scheme = Scheme::Mutan;
    std::size_t d_q = 0;
    std::size_t d_v = 0;
    std::size_t d_out = 0;
    std::size_t t_q = 0;
    std::size_t t_v = 0;
    std::size_t t_o = 0;
    std::size_t rank = 0;        // slice rank (Mutan) or global rank (MLB)
    std::size_t sketch_dim = 0;  // MCB only
    bool use_tanh = true;
    std::uint64_t seed = 0;

    bool operator==(const FusionConfig&) const = default;

    void validate() const {
        auto need = [&](std::size_t value, const char* field) {
            if (value == 0)
                throw ConfigError(std::string(to_string(scheme)) + " requires " + field + " > 0");
        };
        need(d_q, "d_q");
        need(d_v, "d_v");
        need(d_out, "d_out");
        switch (scheme) {
            case Scheme::TuckerFusion:
                need(t_q, "t_q");
                need(t_v, "t_v");
                need(t_o, "t_o");
                break;
            case Scheme::Mutan:
                need(t_q, "t_q");
                need(t_v, "t_v");
                need(t_o, "t_o");
                need(rank, "rank");
                if (rank > std::min(t_q, t_v))
                    throw ConfigError("Mutan requires rank <= min(t_q, t_v), got rank " + std::to_string(rank));
                break;
            case Scheme::MLB: need(rank, "rank"); break;
            case Scheme::MCB: need(sketch_dim, "sketch_dim"); break;
            case Scheme::Concat:
            case Scheme::FullBilinear: break;
        }
    }

    /// Whether q~ / v~ go through tanh. Only the learned-projection schemes have it.
    bool projects_with_tanh() const {
        return use_tanh && (scheme == Scheme::TuckerFusion || scheme == Scheme::Mutan || scheme == Scheme::MLB);
    }
};

inline FusionConfig mutan_config(std::size_t d_q, std::size_t d_v, std::size_t d_out, std::size_t t, std::size_t rank,
                                 std::uint64_t seed = 0) {
    FusionConfig c;
    c.scheme = Scheme::Mutan;
    c.d_q = d_q;
    c.d_v = d_v;
    c.d_out = d_out;
    c.t_q = c.t_v = c.t_o = t;
    c.rank = rank;
    c.seed = seed;
    return c;
}

/// Flat key=value lines, one field per line, each key prefixed.
inline std::string serialize(const FusionConfig& c, const std::string& prefix = "") {
    std::ostringstream os;
    os << prefix << "scheme=" << to_string(c.scheme) << '\n'
       << prefix << "d_q=" << c.d_q << '\n'
       << prefix << "d_v=" << c.d_v << '\n'
       << prefix << "d_out=" << c.d_out << '\n'
       << prefix << "t_q=" << c.t_q << '\n'
       << prefix << "t_v=" << c.t_v << '\n'
       << prefix << "t_o=" << c.t_o << '\n'
       << prefix << "rank=" << c.rank << '\n'
       << prefix << "sketch_dim=" << c.sketch_dim << '\n'
       << prefix << "use_tanh=" << (c.use_tanh ? 1 : 0) << '\n'
       << prefix << "seed=" << c.seed << '\n';
    return os.str();
}

inline FusionConfig parse_fusion_config(const std::map<std::string, std::string>& kv, const std::string& prefix = "") {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(prefix + key);
        if (it == kv.end()) throw ConfigError("missing config key " + prefix + key);
        return it->second;
    };
    auto num = [&](const std::string& key) -> std::uint64_t {
        const auto& text = get(key);
        std::size_t used = 0;
        std::uint64_t value = 0;
        try {
            value = std::stoull(text, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != text.size()) throw ConfigError("config key " + prefix + key + " is not an integer");
        return value;
    };
    FusionConfig c;
    c.scheme = parse_scheme(get("scheme"));
    c.d_q = num("d_q");
    c.d_v = num("d_v");
    c.d_out = num("d_out");
    c.t_q = num("t_q");
    c.t_v = num("t_v");
    c.t_o = num("t_o");
    c.rank = num("rank");
    c.sketch_dim = num("sketch_dim");
    c.use_tanh = num("use_tanh") != 0;
    c.seed = num("seed");
    c.validate();
    return c;
}

/// Learnable parameter shapes in storage order, with the fan-in used for
/// initialization. Computing this never allocates parameter storage.
struct LayoutEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t fan_in;
};

inline std::vector<LayoutEntry> parameter_layout(const FusionConfig& c) {
    c.validate();
    std::vector<LayoutEntry> out;
    switch (c.scheme) {
        case Scheme::Concat: out.push_back({"W", {c.d_out, c.d_q + c.d_v}, c.d_q + c.d_v}); break;
        case Scheme::FullBilinear: out.push_back({"T", {c.d_q, c.d_v, c.d_out}, c.d_q * c.d_v}); break;
        case Scheme::TuckerFusion:
            out.push_back({"Wq", {c.d_q, c.t_q}, c.d_q});
            out.push_back({"Wv", {c.d_v, c.t_v}, c.d_v});
            out.push_back({"Tc", {c.t_q, c.t_v, c.t_o}, c.t_q * c.t_v});
            out.push_back({"Wo", {c.d_out, c.t_o}, c.t_o});
            break;
        case Scheme::Mutan:
            out.push_back({"Wq", {c.d_q, c.t_q}, c.d_q});
            out.push_back({"Wv", {c.d_v, c.t_v}, c.d_v});
            for (std::size_t r = 0; r < c.rank; ++r) out.push_back({"M" + std::to_string(r), {c.t_q, c.t_o}, c.t_q});
            for (std::size_t r = 0; r < c.rank; ++r) out.push_back({"N" + std::to_string(r), {c.t_v, c.t_o}, c.t_v});
            out.push_back({"Wo", {c.d_out, c.t_o}, c.t_o});
            break;
        case Scheme::MLB:
            out.push_back({"Wq", {c.d_q, c.rank}, c.d_q});
            out.push_back({"Wv", {c.d_v, c.rank}, c.d_v});
            out.push_back({"Wo", {c.d_out, c.rank}, c.rank});
            break;
        case Scheme::MCB: out.push_back({"Wo", {c.d_out, c.sketch_dim}, c.sketch_dim}); break;
    }
    return out;
}

/// Number of learnable scalars. MCB's hash and sign arrays are fixed and excluded.
inline std::uint64_t param_count(const FusionConfig& c) {
    std::uint64_t total = 0;
    for (const auto& e : parameter_layout(c)) {
        std::uint64_t n = 1;
        for (auto d : e.shape) n *= d;
        total += n;
    }
    return total;
}

/// y[k] = Σ_{i,j} q[i]·v[j]·T[i,j,k], computed as (T ×1 q) ×2 v.
inline Vector full_bilinear_forward(const DenseTensor3& t, const Vector& q, const Vector& v) {
    if (t.dim(0) != q.dim() || t.dim(1) != v.dim())
        throw DimensionError("full_bilinear_forward: tensor dims (" + std::to_string(t.dim(0)) + ", " +
                             std::to_string(t.dim(1)) + ", _) vs inputs (" + std::to_string(q.dim()) + ", " +
                             std::to_string(v.dim()) + ")");
    const Matrix contracted = mode_n_vector_product(t, q, 1);  // (d_v × d_out)
    Vector y(t.dim(2));
    for (std::size_t j = 0; j < v.dim(); ++j)
        for (std::size_t k = 0; k < y.dim(); ++k) y[k] += v[j] * contracted(j, k);
    return y;
}

/// Tc[l,m,k] = Σ_r M_r[l,k]·N_r[m,k]; each mode-3 slice is a sum of R rank-one terms.
inline DenseTensor3 core_from_slices(const std::vector<Matrix>& m, const std::vector<Matrix>& n) {
    if (m.empty() || m.size() != n.size())
        throw DimensionError("core_from_slices: need the same nonzero number of M and N factors");
    const std::size_t tq = m[0].rows(), to = m[0].cols(), tv = n[0].rows();
    for (std::size_t r = 0; r < m.size(); ++r) {
        if (m[r].rows() != tq || m[r].cols() != to)
            throw DimensionError("core_from_slices: M_" + std::to_string(r) + " shape differs from M_0");
        if (n[r].rows() != tv || n[r].cols() != to)
            throw DimensionError("core_from_slices: N_" + std::to_string(r) + " shape differs from N_0");
    }
    DenseTensor3 core({tq, tv, to});
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t l = 0; l < tq; ++l)
            for (std::size_t mm = 0; mm < tv; ++mm)
                for (std::size_t k = 0; k < to; ++k) core(l, mm, k) += m[r](l, k) * n[r](mm, k);
    return core;
}

/// Core plus factor matrices such that tucker_reconstruct(core, wq, wv, wo)
/// is the operator's full interaction tensor (exact on the linear path).
struct TuckerForm {
    DenseTensor3 core;
    Matrix wq, wv, wo;
};

/// Everything backward needs from one forward call.
struct FusionCache {
    std::uint64_t owner = 0;
    std::uint64_t generation = 0;
    Vector q, v;
    Vector q_proj, v_proj;          // post-activation projections (Tucker family)
    std::vector<Vector> a, b;       // Mutan: q~^T M_r and v~^T N_r
    std::vector<std::size_t> ranks; // Mutan: ranks that contributed to z
    Vector sketch_q, sketch_v;      // MCB
    Vector z;
};

struct FusionGradients {
    ParamVector params;
    Vector dq, dv;
};

class StaleCacheError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class FusionOperator {
public:
    explicit FusionOperator(FusionConfig config) : config_(std::move(config)) {
        config_.validate();
        Rng rng(derive_seed(config_.seed, 1));
        for (const auto& e : parameter_layout(config_)) {
            const auto idx = params_.add(e.name, e.shape);
            const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
            for (double& x : params_.entry(idx)) x = rng.uniform(-bound, bound);
        }
        index_layout();
        if (config_.scheme == Scheme::MCB) {
            plan_q_.emplace(config_.d_q, config_.sketch_dim, derive_seed(config_.seed, 101));
            plan_v_.emplace(config_.d_v, config_.sketch_dim, derive_seed(config_.seed, 102));
        }
    }

    FusionOperator(const FusionOperator& other)
        : config_(other.config_), params_(other.params_), plan_q_(other.plan_q_), plan_v_(other.plan_v_),
          idx_(other.idx_), inject_fault_(other.inject_fault_) {}
    FusionOperator& operator=(const FusionOperator& other) {
        if (this != &other) {
            config_ = other.config_;
            params_ = other.params_;
            plan_q_ = other.plan_q_;
            plan_v_ = other.plan_v_;
            idx_ = other.idx_;
            inject_fault_ = other.inject_fault_;
            ++generation_;
        }
        return *this;
    }
    FusionOperator(FusionOperator&&) = default;
    FusionOperator& operator=(FusionOperator&&) = default;

    const FusionConfig& config() const noexcept { return config_; }
    Scheme scheme() const noexcept { return config_.scheme; }
    std::size_t input_q_dim() const noexcept { return config_.d_q; }
    std::size_t input_v_dim() const noexcept { return config_.d_v; }
    std::size_t output_dim() const noexcept { return config_.d_out; }
    std::size_t rank() const noexcept { return config_.scheme == Scheme::Mutan ? config_.rank : 0; }

    const ParamVector& params() const noexcept { return params_; }
    std::uint64_t param_count() const noexcept { return params_.size(); }

    /// Replaces every learnable value. Outstanding caches become stale.
    void set_params(std::span<const double> values) {
        params_.assign(values);
        ++generation_;
    }
    /// In-place mutation of one parameter entry. Outstanding caches become stale.
    std::span<double> mutable_entry(const std::string& name) {
        ++generation_;
        return params_.entry(params_.find(name));
    }

    const CountSketchPlan& plan_q() const { return plan_q_.value(); }
    const CountSketchPlan& plan_v() const { return plan_v_.value(); }
    /// Replaces the MCB sketch plans (tests build them by hand).
    void set_plans(CountSketchPlan q_plan, CountSketchPlan v_plan) {
        if (config_.scheme != Scheme::MCB) throw std::logic_error("set_plans: operator is not MCB");
        if (q_plan.input_dim() != config_.d_q || v_plan.input_dim() != config_.d_v ||
            q_plan.output_dim() != config_.sketch_dim || v_plan.output_dim() != config_.sketch_dim)
            throw DimensionError("set_plans: plan dims do not match config");
        plan_q_ = std::move(q_plan);
        plan_v_ = std::move(v_plan);
        ++generation_;
    }

    /// Flips the sign of one backward term. Used to prove the gradient
    /// checker actually detects errors.
    void set_fault_injection(bool on) noexcept { inject_fault_ = on; }

    Vector forward(const Vector& q, const Vector& v, FusionCache* cache = nullptr) const {
        return forward_impl(q, v, std::nullopt, cache);
    }

    /// Mutan only: forward with z replaced by z_r for the single rank `keep_rank` (0-based).
    Vector forward_rank(const Vector& q, const Vector& v, std::size_t keep_rank, FusionCache* cache = nullptr) const {
        require_mutan("forward_rank");
        if (keep_rank >= config_.rank)
            throw std::out_of_range("rank index " + std::to_string(keep_rank) + " outside [0, " +
                                    std::to_string(config_.rank) + ")");
        return forward_impl(q, v, keep_rank, cache);
    }

    /// Mutan only: the per-rank terms z_r, in rank order.
    std::vector<Vector> rank_terms(const Vector& q, const Vector& v) const {
        require_mutan("rank_terms");
        FusionCache cache;
        forward_impl(q, v, std::nullopt, &cache);
        std::vector<Vector> out;
        for (std::size_t r = 0; r < config_.rank; ++r) {
            Vector zr(config_.t_o);
            for (std::size_t k = 0; k < config_.t_o; ++k) zr[k] = cache.a[r][k] * cache.b[r][k];
            out.push_back(std::move(zr));
        }
        return out;
    }

    /// Latent z of the last forward (before Wo), for inspection.
    Vector latent(const Vector& q, const Vector& v) const {
        FusionCache cache;
        forward_impl(q, v, std::nullopt, &cache);
        return cache.z;
    }

    /// Output projection applied to an arbitrary latent vector.
    Vector project_output(const Vector& z) const {
        if (config_.scheme == Scheme::Concat || config_.scheme == Scheme::FullBilinear)
            throw std::logic_error("project_output: scheme has no output factor");
        return apply_rows(params_.matrix(idx_.wo), z);
    }

    FusionGradients backward(const FusionCache& cache, const Vector& dy) const {
        if (cache.owner != id_.value || cache.generation != generation_)
            throw StaleCacheError("fusion backward: cache was produced by a different operator or older parameters");
        if (dy.dim() != config_.d_out)
            throw DimensionError("fusion backward: upstream gradient has dim " + std::to_string(dy.dim()) +
                                 ", expected " + std::to_string(config_.d_out));
        FusionGradients g{params_.zeros_like(), Vector(config_.d_q), Vector(config_.d_v)};
        switch (config_.scheme) {
            case Scheme::Concat: backward_concat(cache, dy, g); break;
            case Scheme::FullBilinear: backward_full(cache, dy, g); break;
            case Scheme::TuckerFusion: backward_tucker(cache, dy, g); break;
            case Scheme::Mutan: backward_mutan(cache, dy, g); break;
            case Scheme::MLB: backward_mlb(cache, dy, g); break;
            case Scheme::MCB: backward_mcb(cache, dy, g); break;
        }
        return g;
    }

    /// Core and factors of the operator's interaction tensor. For the
    /// tanh-projected schemes this is the tensor of the linear path.
    TuckerForm tucker_form() const {
        const auto& c = config_;
        switch (c.scheme) {
            case Scheme::Concat: throw std::logic_error("Concat is not a bilinear operator");
            case Scheme::FullBilinear:
                return {params_.copy_tensor(idx_.core), Matrix::identity(c.d_q), Matrix::identity(c.d_v),
                        Matrix::identity(c.d_out)};
            case Scheme::TuckerFusion:
                return {params_.copy_tensor(idx_.core), params_.copy_matrix(idx_.wq), params_.copy_matrix(idx_.wv),
                        params_.copy_matrix(idx_.wo)};
            case Scheme::Mutan: {
                std::vector<Matrix> m, n;
                for (std::size_t r = 0; r < c.rank; ++r) {
                    m.push_back(params_.copy_matrix(idx_.m[r]));
                    n.push_back(params_.copy_matrix(idx_.n[r]));
                }
                return {core_from_slices(m, n), params_.copy_matrix(idx_.wq), params_.copy_matrix(idx_.wv),
                        params_.copy_matrix(idx_.wo)};
            }
            case Scheme::MLB: {
                DenseTensor3 core({c.rank, c.rank, c.rank});
                for (std::size_t r = 0; r < c.rank; ++r) core(r, r, r) = 1.0;
                return {std::move(core), params_.copy_matrix(idx_.wq), params_.copy_matrix(idx_.wv),
                        params_.copy_matrix(idx_.wo)};
            }
            case Scheme::MCB: {
                const auto& pq = *plan_q_;
                const auto& pv = *plan_v_;
                DenseTensor3 core({c.d_q, c.d_v, c.sketch_dim});
                for (std::size_t i = 0; i < c.d_q; ++i)
                    for (std::size_t j = 0; j < c.d_v; ++j) core(i, j, (pq.hash()[i] + pv.hash()[j]) % c.sketch_dim) = 1.0;
                Matrix wq(c.d_q, c.d_q), wv(c.d_v, c.d_v);
                for (std::size_t i = 0; i < c.d_q; ++i) wq(i, i) = pq.sign()[i];
                for (std::size_t j = 0; j < c.d_v; ++j) wv(j, j) = pv.sign()[j];
                return {std::move(core), std::move(wq), std::move(wv), params_.copy_matrix(idx_.wo)};
            }
        }
        throw std::logic_error("unreachable");
    }

private:
    struct Indices {
        std::size_t w = 0, core = 0, wq = 0, wv = 0, wo = 0;
        std::vector<std::size_t> m, n;
    };

    struct Identity {
        std::uint64_t value = next();
        Identity() = default;
        Identity(const Identity&) : value(next()) {}
        Identity& operator=(const Identity&) { return *this; }
        Identity(Identity&&) = default;
        Identity& operator=(Identity&&) = default;
        static std::uint64_t next() {
            static std::atomic<std::uint64_t> counter{1};
            return counter.fetch_add(1, std::memory_order_relaxed);
        }
    };

    void index_layout() {
        const auto has = [&](const char* name) {
            for (const auto& s : params_.manifest())
                if (s.name == name) return true;
            return false;
        };
        if (has("W")) idx_.w = params_.find("W");
        if (has("T")) idx_.core = params_.find("T");
        if (has("Tc")) idx_.core = params_.find("Tc");
        if (has("Wq")) idx_.wq = params_.find("Wq");
        if (has("Wv")) idx_.wv = params_.find("Wv");
        if (has("Wo")) idx_.wo = params_.find("Wo");
        if (config_.scheme == Scheme::Mutan)
            for (std::size_t r = 0; r < config_.rank; ++r) {
                idx_.m.push_back(params_.find("M" + std::to_string(r)));
                idx_.n.push_back(params_.find("N" + std::to_string(r)));
            }
    }

    void require_mutan(const char* what) const {
        if (config_.scheme != Scheme::Mutan)
            throw std::logic_error(std::string(what) + ": operator scheme is " + std::string(to_string(config_.scheme)) +
                                   ", not Mutan");
    }

    // out[a] = Σ_k W[a,k]·x[k]
    static Vector apply_rows(ConstMatrixRef w, const Vector& x) {
        Vector out(w.rows);
        for (std::size_t a = 0; a < w.rows; ++a) {
            double acc = 0.0;
            for (std::size_t k = 0; k < w.cols; ++k) acc += w(a, k) * x[k];
            out[a] = acc;
        }
        return out;
    }
    // out[k] = Σ_i x[i]·W[i,k]
    static Vector apply_cols(ConstMatrixRef w, const Vector& x) {
        Vector out(w.cols);
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double xi = x[i];
            for (std::size_t k = 0; k < w.cols; ++k) out[k] += xi * w(i, k);
        }
        return out;
    }
    // g[i,k] += a[i]·b[k]
    static void add_outer(MatrixRef g, const Vector& a, const Vector& b) {
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t k = 0; k < g.cols; ++k) g(i, k) += a[i] * b[k];
    }

    Vector project(ConstMatrixRef w, const Vector& x) const {
        Vector out = apply_cols(w, x);
        if (config_.projects_with_tanh())
            for (double& e : out) e = std::tanh(e);
        return out;
    }
    // Back through act(x^T W): accumulates dW and returns dx.
    Vector project_backward(ConstMatrixRef w, MatrixRef dw, const Vector& x, const Vector& out,
                            const Vector& dout) const {
        Vector dpre = dout;
        if (config_.projects_with_tanh())
            for (std::size_t l = 0; l < dpre.dim(); ++l) dpre[l] *= 1.0 - out[l] * out[l];
        add_outer(dw, x, dpre);
        return apply_rows(w, dpre);
    }

    Vector forward_impl(const Vector& q, const Vector& v, std::optional<std::size_t> keep_rank,
                        FusionCache* cache) const {
        if (q.dim() != config_.d_q || v.dim() != config_.d_v)
            throw DimensionError(std::string(to_string(config_.scheme)) + " forward: expected inputs (" +
                                 std::to_string(config_.d_q) + ", " + std::to_string(config_.d_v) + "), got (" +
                                 std::to_string(q.dim()) + ", " + std::to_string(v.dim()) + ")");
        FusionCache local;
        FusionCache& c = cache ? *cache : local;
        c = FusionCache{};
        c.owner = id_.value;
        c.generation = generation_;
        c.q = q;
        c.v = v;

        switch (config_.scheme) {
            case Scheme::Concat: {
                auto w = params_.matrix(idx_.w);
                Vector y(config_.d_out);
                for (std::size_t a = 0; a < w.rows; ++a) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < config_.d_q; ++i) acc += w(a, i) * q[i];
                    for (std::size_t j = 0; j < config_.d_v; ++j) acc += w(a, config_.d_q + j) * v[j];
                    y[a] = acc;
                }
                return y;
            }
            case Scheme::FullBilinear: {
                auto t = params_.entry(idx_.core);
                const std::size_t dv = config_.d_v, dout = config_.d_out;
                Vector y(dout);
                for (std::size_t i = 0; i < config_.d_q; ++i)
                    for (std::size_t j = 0; j < dv; ++j) {
                        const double w = q[i] * v[j];
                        const double* slice = &t[(i * dv + j) * dout];
                        for (std::size_t k = 0; k < dout; ++k) y[k] += w * slice[k];
                    }
                return y;
            }
            case Scheme::TuckerFusion: {
                c.q_proj = project(params_.matrix(idx_.wq), q);
                c.v_proj = project(params_.matrix(idx_.wv), v);
                auto core = params_.entry(idx_.core);
                const std::size_t tv = config_.t_v, to = config_.t_o;
                c.z = Vector(to);
                for (std::size_t l = 0; l < config_.t_q; ++l)
                    for (std::size_t m = 0; m < tv; ++m) {
                        const double w = c.q_proj[l] * c.v_proj[m];
                        const double* slice = &core[(l * tv + m) * to];
                        for (std::size_t k = 0; k < to; ++k) c.z[k] += w * slice[k];
                    }
                break;
            }
            case Scheme::Mutan: {
                c.q_proj = project(params_.matrix(idx_.wq), q);
                c.v_proj = project(params_.matrix(idx_.wv), v);
                c.z = Vector(config_.t_o);
                for (std::size_t r = 0; r < config_.rank; ++r) {
                    c.a.push_back(apply_cols(params_.matrix(idx_.m[r]), c.q_proj));
                    c.b.push_back(apply_cols(params_.matrix(idx_.n[r]), c.v_proj));
                }
                for (std::size_t r = 0; r < config_.rank; ++r) {
                    if (keep_rank && *keep_rank != r) continue;
                    c.ranks.push_back(r);
                    for (std::size_t k = 0; k < config_.t_o; ++k) c.z[k] += c.a[r][k] * c.b[r][k];
                }
                break;
            }
            case Scheme::MLB: {
                c.q_proj = project(params_.matrix(idx_.wq), q);
                c.v_proj = project(params_.matrix(idx_.wv), v);
                c.z = Vector(config_.rank);
                for (std::size_t k = 0; k < config_.rank; ++k) c.z[k] = c.q_proj[k] * c.v_proj[k];
                break;
            }
            case Scheme::MCB: {
                c.sketch_q = sketch(*plan_q_, q);
                c.sketch_v = sketch(*plan_v_, v);
                c.z = circular_convolution(c.sketch_q, c.sketch_v);
                break;
            }
        }
        return apply_rows(params_.matrix(idx_.wo), c.z);
    }

    // Shared tail: y = Wo z. Returns dz and accumulates dWo.
    Vector output_backward(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        auto wo = params_.matrix(idx_.wo);
        add_outer(g.params.matrix(idx_.wo), dy, c.z);
        Vector dz = apply_cols(wo, dy);
        if (inject_fault_)
            for (double& e : dz) e = -e;
        return dz;
    }

    void backward_concat(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        auto w = params_.matrix(idx_.w);
        auto dw = g.params.matrix(idx_.w);
        const std::size_t dq = config_.d_q;
        for (std::size_t a = 0; a < w.rows; ++a) {
            for (std::size_t i = 0; i < dq; ++i) {
                dw(a, i) += dy[a] * c.q[i];
                g.dq[i] += w(a, i) * dy[a];
            }
            for (std::size_t j = 0; j < config_.d_v; ++j) {
                dw(a, dq + j) += dy[a] * c.v[j];
                g.dv[j] += w(a, dq + j) * dy[a];
            }
        }
        if (inject_fault_)
            for (double& e : g.params.values()) e = -e;
    }

    void backward_full(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        auto t = params_.entry(idx_.core);
        auto dt = g.params.entry(idx_.core);
        const std::size_t dv = config_.d_v, dout = config_.d_out;
        for (std::size_t i = 0; i < config_.d_q; ++i)
            for (std::size_t j = 0; j < dv; ++j) {
                const std::size_t base = (i * dv + j) * dout;
                double proj = 0.0;
                for (std::size_t k = 0; k < dout; ++k) {
                    dt[base + k] += c.q[i] * c.v[j] * dy[k];
                    proj += t[base + k] * dy[k];
                }
                g.dq[i] += proj * c.v[j];
                g.dv[j] += proj * c.q[i];
            }
        if (inject_fault_)
            for (double& e : dt) e = -e;
    }

    void backward_tucker(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        const Vector dz = output_backward(c, dy, g);
        auto core = params_.entry(idx_.core);
        auto dcore = g.params.entry(idx_.core);
        const std::size_t tq = config_.t_q, tv = config_.t_v, to = config_.t_o;
        Vector dqp(tq), dvp(tv);
        for (std::size_t l = 0; l < tq; ++l)
            for (std::size_t m = 0; m < tv; ++m) {
                const std::size_t base = (l * tv + m) * to;
                const double w = c.q_proj[l] * c.v_proj[m];
                double proj = 0.0;
                for (std::size_t k = 0; k < to; ++k) {
                    dcore[base + k] += w * dz[k];
                    proj += core[base + k] * dz[k];
                }
                dqp[l] += proj * c.v_proj[m];
                dvp[m] += proj * c.q_proj[l];
            }
        g.dq = project_backward(params_.matrix(idx_.wq), g.params.matrix(idx_.wq), c.q, c.q_proj, dqp);
        g.dv = project_backward(params_.matrix(idx_.wv), g.params.matrix(idx_.wv), c.v, c.v_proj, dvp);
    }

    void backward_mutan(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        const Vector dz = output_backward(c, dy, g);
        const std::size_t to = config_.t_o;
        Vector dqp(config_.t_q), dvp(config_.t_v);
        for (std::size_t r : c.ranks) {
            Vector da(to), db(to);
            for (std::size_t k = 0; k < to; ++k) {
                da[k] = dz[k] * c.b[r][k];
                db[k] = dz[k] * c.a[r][k];
            }
            add_outer(g.params.matrix(idx_.m[r]), c.q_proj, da);
            add_outer(g.params.matrix(idx_.n[r]), c.v_proj, db);
            const Vector dq_r = apply_rows(params_.matrix(idx_.m[r]), da);
            const Vector dv_r = apply_rows(params_.matrix(idx_.n[r]), db);
            for (std::size_t l = 0; l < dqp.dim(); ++l) dqp[l] += dq_r[l];
            for (std::size_t m = 0; m < dvp.dim(); ++m) dvp[m] += dv_r[m];
        }
        g.dq = project_backward(params_.matrix(idx_.wq), g.params.matrix(idx_.wq), c.q, c.q_proj, dqp);
        g.dv = project_backward(params_.matrix(idx_.wv), g.params.matrix(idx_.wv), c.v, c.v_proj, dvp);
    }

    void backward_mlb(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        const Vector dz = output_backward(c, dy, g);
        Vector dqp(config_.rank), dvp(config_.rank);
        for (std::size_t k = 0; k < config_.rank; ++k) {
            dqp[k] = dz[k] * c.v_proj[k];
            dvp[k] = dz[k] * c.q_proj[k];
        }
        g.dq = project_backward(params_.matrix(idx_.wq), g.params.matrix(idx_.wq), c.q, c.q_proj, dqp);
        g.dv = project_backward(params_.matrix(idx_.wv), g.params.matrix(idx_.wv), c.v, c.v_proj, dvp);
    }

    void backward_mcb(const FusionCache& c, const Vector& dy, FusionGradients& g) const {
        const Vector dz = output_backward(c, dy, g);
        const std::size_t d = config_.sketch_dim;
        // z[k] = Σ_m a[m]·b[(k−m) mod d]
        Vector da(d), db(d);
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t m = 0; m < d; ++m) {
                const std::size_t n = (k + d - m) % d;
                da[m] += dz[k] * c.sketch_v[n];
                db[n] += dz[k] * c.sketch_q[m];
            }
        const auto& pq = *plan_q_;
        const auto& pv = *plan_v_;
        for (std::size_t i = 0; i < config_.d_q; ++i) g.dq[i] = pq.sign()[i] * da[pq.hash()[i]];
        for (std::size_t j = 0; j < config_.d_v; ++j) g.dv[j] = pv.sign()[j] * db[pv.hash()[j]];
    }

    FusionConfig config_;
    ParamVector params_;
    std::optional<CountSketchPlan> plan_q_, plan_v_;
    Indices idx_;
    Identity id_;
    std::uint64_t generation_ = 0;
    bool inject_fault_ = false;
};

}  // namespace mutan
