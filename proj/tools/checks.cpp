#include "checks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <thread>

#include "mutan/fusion.hpp"
#include "mutan/sketch.hpp"

namespace mutan::cli {
namespace {

using Case = std::function<CheckRow()>;

std::vector<CheckRow> run_cases(const std::vector<Case>& cases, std::size_t threads) {
    std::vector<CheckRow> rows(cases.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cases.size(); i = next++) rows[i] = cases[i]();
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(threads, cases.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return rows;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return scale > 0.0 ? diff / scale : diff;
}

std::vector<double> normals(std::size_t n, Rng& rng) {
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    return x;
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

FusionConfig random_config(Scheme s, Rng& rng, std::size_t max_dim, std::uint64_t seed) {
    FusionConfig c;
    c.scheme = s;
    c.d_q = dim(rng, 1, max_dim);
    c.d_v = dim(rng, 1, max_dim);
    c.d_out = dim(rng, 1, max_dim);
    c.t_q = dim(rng, 1, max_dim);
    c.t_v = dim(rng, 1, max_dim);
    c.t_o = dim(rng, 1, max_dim);
    c.rank = 1 + rng.below(std::min(c.t_q, c.t_v));
    c.sketch_dim = dim(rng, 1, max_dim);
    c.use_tanh = false;
    c.seed = seed;
    return c;
}

// y[k] = Σ_{i,j} q[i] v[j] T[i,j,k] with T = Σ_{l,m,n} Tc[l,m,n] Wq[i,l] Wv[j,m] Wo[k,n].
std::vector<double> tucker_reference(const TuckerForm& f, const Vector& q, const Vector& v) {
    const auto& core = f.core;
    std::vector<double> y(f.wo.rows(), 0.0);
    for (std::size_t i = 0; i < f.wq.rows(); ++i)
        for (std::size_t j = 0; j < f.wv.rows(); ++j)
            for (std::size_t k = 0; k < f.wo.rows(); ++k) {
                double t = 0.0;
                for (std::size_t l = 0; l < core.dim(0); ++l)
                    for (std::size_t m = 0; m < core.dim(1); ++m)
                        for (std::size_t n = 0; n < core.dim(2); ++n)
                            t += core(l, m, n) * f.wq(i, l) * f.wv(j, m) * f.wo(k, n);
                y[k] += q[i] * v[j] * t;
            }
    return y;
}

std::vector<double> reference_forward(const FusionOperator& op, const Vector& q, const Vector& v) {
    const auto& c = op.config();
    if (c.scheme == Scheme::Concat) {
        const auto w = op.params().values();
        std::vector<double> y(c.d_out, 0.0);
        for (std::size_t a = 0; a < c.d_out; ++a) {
            for (std::size_t i = 0; i < c.d_q; ++i) y[a] += w[a * (c.d_q + c.d_v) + i] * q[i];
            for (std::size_t j = 0; j < c.d_v; ++j) y[a] += w[a * (c.d_q + c.d_v) + c.d_q + j] * v[j];
        }
        return y;
    }
    if (c.scheme == Scheme::FullBilinear) {
        const auto t = op.params().values();
        std::vector<double> y(c.d_out, 0.0);
        for (std::size_t i = 0; i < c.d_q; ++i)
            for (std::size_t j = 0; j < c.d_v; ++j)
                for (std::size_t k = 0; k < c.d_out; ++k) y[k] += q[i] * v[j] * t[(i * c.d_v + j) * c.d_out + k];
        return y;
    }
    return tucker_reference(op.tucker_form(), q, v);
}

std::vector<Case> equiv_cases(const CheckOptions& o) {
    std::vector<Case> cases;
    for (Scheme s : all_schemes)
        for (std::uint64_t k = 0; k < 3; ++k) {
            const std::uint64_t seed = o.seed + k;
            cases.push_back([s, seed] {
                Rng rng(derive_seed(seed, 300 + static_cast<std::uint64_t>(s)));
                const FusionOperator op(random_config(s, rng, 8, seed));
                const Vector q(normals(op.config().d_q, rng)), v(normals(op.config().d_v, rng));
                const Vector y = op.forward(q, v);
                return CheckRow{"equiv", std::string(to_string(s)) + ".forward_vs_tensor", seed,
                                max_rel(y.raw(), reference_forward(op, q, v)), 1e-10};
            });
        }
    return cases;
}

double gradient_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-4});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
    }
    return worst;
}

std::vector<Case> grad_cases(const CheckOptions& o) {
    std::vector<Case> cases;
    for (Scheme s : all_schemes)
        for (std::uint64_t k = 0; k < 3; ++k) {
            const std::uint64_t seed = o.seed + k;
            const bool fault = o.inject_fault;
            cases.push_back([s, seed, fault] {
                Rng rng(derive_seed(seed, 400 + static_cast<std::uint64_t>(s)));
                FusionConfig cfg = random_config(s, rng, 6, seed);
                cfg.use_tanh = true;
                FusionOperator op(cfg);
                op.set_fault_injection(fault);
                const Vector q(normals(cfg.d_q, rng)), v(normals(cfg.d_v, rng)), c(normals(cfg.d_out, rng));
                auto loss = [&](const FusionOperator& f, const Vector& qq, const Vector& vv) {
                    const Vector y = f.forward(qq, vv);
                    double l = 0.0;
                    for (std::size_t a = 0; a < y.dim(); ++a) l += c[a] * y[a];
                    return l;
                };
                FusionCache cache;
                op.forward(q, v, &cache);
                const FusionGradients g = op.backward(cache, c);

                constexpr double h = 1e-5;
                auto numeric = [&](std::vector<double> x, const std::function<double(const std::vector<double>&)>& f) {
                    std::vector<double> out(x.size());
                    for (std::size_t i = 0; i < x.size(); ++i) {
                        const double saved = x[i];
                        x[i] = saved + h;
                        const double up = f(x);
                        x[i] = saved - h;
                        const double down = f(x);
                        x[i] = saved;
                        out[i] = (up - down) / (2 * h);
                    }
                    return out;
                };
                FusionOperator probe(op);
                const auto p0 = op.params().values();
                const double e_params = gradient_error(
                    {g.params.values().begin(), g.params.values().end()},
                    numeric({p0.begin(), p0.end()}, [&](const std::vector<double>& p) {
                        probe.set_params(p);
                        return loss(probe, q, v);
                    }));
                const double e_q = gradient_error(
                    g.dq.raw(), numeric(q.raw(), [&](const std::vector<double>& x) { return loss(op, Vector(x), v); }));
                const double e_v = gradient_error(
                    g.dv.raw(), numeric(v.raw(), [&](const std::vector<double>& x) { return loss(op, q, Vector(x)); }));
                return CheckRow{"grad", std::string(to_string(s)) + ".central_differences", seed,
                                std::max({e_params, e_q, e_v}), 1e-5};
            });
        }
    return cases;
}

std::vector<Case> sketch_cases(const CheckOptions& o) {
    std::vector<Case> cases;
    for (std::uint64_t k = 0; k < 20; ++k) {
        const std::uint64_t seed = o.seed + k;
        cases.push_back([seed] {
            const CountSketchPlan pq(8, 16, derive_seed(seed, 501)), pv(8, 16, derive_seed(seed, 502));
            Rng rng(derive_seed(seed, 503));
            const Vector q(normals(8, rng)), v(normals(8, rng));
            // Sketch of the flattened outer product under the joint hash/sign.
            std::vector<double> joint(16, 0.0);
            for (std::size_t i = 0; i < 8; ++i)
                for (std::size_t j = 0; j < 8; ++j)
                    joint[(pq.hash()[i] + pv.hash()[j]) % 16] += pq.sign()[i] * pv.sign()[j] * q[i] * v[j];
            const Vector conv = circular_convolution(sketch(pq, q), sketch(pv, v));
            return CheckRow{"sketch", "outer_product_identity", seed, max_rel(conv.raw(), joint), 1e-9};
        });
    }
    for (std::uint64_t k = 0; k < 5; ++k) {
        const std::uint64_t seed = o.seed + k;
        cases.push_back([seed] {
            Rng rng(derive_seed(seed, 504));
            const FusionOperator op(random_config(Scheme::MCB, rng, 8, seed));
            const auto& c = op.config();
            const Vector q(normals(c.d_q, rng)), v(normals(c.d_v, rng));
            std::vector<double> joint(c.sketch_dim, 0.0);
            for (std::size_t i = 0; i < c.d_q; ++i)
                for (std::size_t j = 0; j < c.d_v; ++j)
                    joint[(op.plan_q().hash()[i] + op.plan_v().hash()[j]) % c.sketch_dim] +=
                        op.plan_q().sign()[i] * op.plan_v().sign()[j] * q[i] * v[j];
            const auto wo = op.params().values();
            std::vector<double> y(c.d_out, 0.0);
            for (std::size_t a = 0; a < c.d_out; ++a)
                for (std::size_t k2 = 0; k2 < c.sketch_dim; ++k2) y[a] += wo[a * c.sketch_dim + k2] * joint[k2];
            return CheckRow{"sketch", "MCB.forward_vs_joint_sketch", seed, max_rel(op.forward(q, v).raw(), y), 1e-9};
        });
    }
    return cases;
}

std::vector<Case> ablate_cases(const CheckOptions& o) {
    std::vector<Case> cases;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const std::uint64_t seed = o.seed + k;
        for (const char* what : {"z_sum", "y_sum"}) {
            const bool on_z = std::string(what) == "z_sum";
            cases.push_back([seed, on_z, what] {
                Rng rng(derive_seed(seed, 600));
                FusionConfig c = random_config(Scheme::Mutan, rng, 8, seed);
                c.t_q = c.t_v = std::max<std::size_t>(4, c.t_q);
                c.rank = 1 + rng.below(4);
                c.use_tanh = true;
                const FusionOperator op(c);
                const Vector q(normals(c.d_q, rng)), v(normals(c.d_v, rng));
                const Vector full = on_z ? op.latent(q, v) : op.forward(q, v);
                std::vector<double> sum(full.dim(), 0.0);
                if (on_z) {
                    for (const Vector& zr : op.rank_terms(q, v))
                        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += zr[i];
                } else {
                    for (std::size_t r = 0; r < c.rank; ++r) {
                        const Vector yr = op.forward_rank(q, v, r);
                        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += yr[i];
                    }
                }
                double err = 0.0;
                for (std::size_t i = 0; i < sum.size(); ++i)
                    err = std::max(err, std::abs(sum[i] - full[i]) / std::max(1.0, std::abs(full[i])));
                return CheckRow{"ablate-linearity", std::string("Mutan.") + what, seed, err, 1e-14};
            });
        }
    }
    return cases;
}

}  // namespace

std::vector<CheckRow> run_suite(const std::string& suite, const CheckOptions& options) {
    if (suite == "equiv") return run_cases(equiv_cases(options), options.threads);
    if (suite == "grad") return run_cases(grad_cases(options), options.threads);
    if (suite == "sketch") return run_cases(sketch_cases(options), options.threads);
    if (suite == "ablate-linearity") return run_cases(ablate_cases(options), options.threads);
    throw std::invalid_argument("unknown suite: " + suite);
}

}  // namespace mutan::cli
