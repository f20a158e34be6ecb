#include "experiments.hpp"

#include <gxr/inversion.hpp>

namespace gxr::cli {

namespace {

int box(const Config& c, const std::string& s) {
    const long b = c.integer(s, "box", 0);
    if (b < 0) throw ConfigError("'box' must be nonnegative", c.line_of(s, "box"));
    return static_cast<int>(b);
}

TikhonovOptions cg_options(const Config& c, const std::string& s) {
    TikhonovOptions o;
    o.rel_tol = c.positive(s, "rel_tol", o.rel_tol);
    o.max_iter = static_cast<int>(c.integer(s, "max_iter", o.max_iter));
    if (o.max_iter < 1) throw ConfigError("'max_iter' must be positive", c.line_of(s, "max_iter"));
    return o;
}

/// Grid phantom from [phantom]: gaussian bumps or a seeded H^q field.
template <int N> ScalarGrid<N> grid_phantom(const Config& c, const ScalarGrid<N>& like, double q_default) {
    c.require_section("phantom");
    const std::string kind = c.choice("phantom", "kind", {"gaussian", "sobolev"});
    if (kind == "gaussian") {
        const auto f = gaussian_phantom<N>(c);
        return sample(like, [&](const Vec<N>& x) { return f(x); });
    }
    const double q = c.num("phantom", "q", q_default);
    if (!(q >= 0)) throw ConfigError("'q' must be nonnegative", c.line_of("phantom", "q"));
    const double ri = c.positive("phantom", "r_inner", 0.45), ro = c.positive("phantom", "r_outer", 0.75);
    if (!(ro > ri)) throw ConfigError("'r_outer' must exceed 'r_inner'", c.line_of("phantom", "r_outer"));
    return sobolev_phantom<N>(like, q, seed(c), vec<N>(c, "phantom", "center", Vec<N>::Zero()), ri, ro, box(c, "phantom"));
}

template <int N> void problem_plan(const Config& c, Plan& p) {
    const auto d = domain<N>(c);
    const auto rays = ray_grid<N>(c, d, "rays");
    const auto g = make_grid(d, grid_size<N>(c));
    p.add("field grid", std::to_string(g.n) + "^" + std::to_string(N) + ", spacing " + fmt(g.h));
    p.add("unknowns", static_cast<double>(g.masked_nodes().size()));
    p.add("rays", static_cast<double>(rays.size()));
    p.work += rays.size() * d.diameter() / xray_options(c).flow.step;
    weight<N>(c);
}

struct InvertSpec {
    double omega, p, noise;
    TikhonovOptions cg;
};

InvertSpec invert_spec(const Config& c) {
    c.require_section("invert");
    InvertSpec s{c.positive("invert", "omega", 1e-4), c.num("invert", "p", 0.5), c.num("invert", "noise", 0.0),
                 cg_options(c, "invert")};
    if (!(s.p >= 0)) throw ConfigError("'p' must be nonnegative", c.line_of("invert", "p"));
    if (!(s.noise >= 0)) throw ConfigError("'noise' must be nonnegative", c.line_of("invert", "noise"));
    return s;
}

template <int N> void invert_plan(const Config& c, Plan& p) {
    problem_plan<N>(c, p);
    const auto s = invert_spec(c);
    p.add("omega", s.omega);
    p.add("penalty exponent", s.p);
    p.add("relative noise", s.noise);
    const auto g = make_grid(domain<N>(c), grid_size<N>(c));
    grid_phantom<N>(c, g, 1.0);
    box(c, "invert");
}

template <int N> int invert_run(const Config& c, Context& ctx) {
    const auto d = domain<N>(c);
    const auto rays = ray_grid<N>(c, d, "rays");
    const auto like = make_grid(d, grid_size<N>(c));
    const auto s = invert_spec(c);
    const auto phi = weight<N>(c);
    const auto o = xray_options(c);
    const auto f0 = grid_phantom<N>(c, like, 1.0);
    with_metric<N>(c, [&](const auto& m) {
        const DiscreteProblem<N> P(m, d, phi, rays, like, o, box(c, "invert"));
        const Eigen::VectorXd x0 = P.gather(f0.values);
        Eigen::VectorXd g = P.forward(x0);
        if (s.noise > 0) {
            std::mt19937_64 rng(seed(c) + 7919);
            std::normal_distribution<double> gauss(0.0, 1.0);
            Eigen::VectorXd e(g.size());
            for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = gauss(rng);
            e *= s.noise * P.data_norm(g) / P.data_norm(e);
            g += e;
        }
        const auto r = tikhonov_solve(P, g, s.omega, s.p, s.cg);
        if (!r.converged) ctx.warn("conjugate gradients stopped at max_iter");
        std::FILE* fp = std::fopen(ctx.file("reconstruction.csv").c_str(), "w");
        if (!fp) throw Error("cannot write reconstruction.csv");
        for (int k = 0; k < N; ++k) std::fprintf(fp, "x%d,", k);
        std::fprintf(fp, "truth,reconstruction\n");
        const auto nodes = like.masked_nodes();
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            const auto x = like.node(nodes[k]);
            for (int j = 0; j < N; ++j) std::fprintf(fp, "%.17g,", x[j]);
            std::fprintf(fp, "%.17g,%.17g\n", x0[k], r.f[k]);
        }
        std::fclose(fp);
        ctx.summary["relative_error"] = P.l2(r.f - x0) / P.l2(x0);
        ctx.summary["misfit"] = r.misfit;
        ctx.summary["iterations"] = r.iterations;
        ctx.summary["converged"] = r.converged;
        ctx.say("tikhonov: relative error " + fmt(P.l2(r.f - x0) / P.l2(x0)));
    });
    return 0;
}

RateSpec rate_spec(const Config& c) {
    c.require_section("rate");
    RateSpec s;
    s.q = c.num("rate", "q", s.q);
    s.p = c.num("rate", "p", s.p);
    s.noise = c.list("rate", "noise", s.noise);
    s.relative = c.integer("rate", "relative", 1) != 0;
    s.factor = c.positive("rate", "factor", s.factor);
    s.omega_lo = c.positive("rate", "omega_lo", s.omega_lo);
    s.omega_hi = c.positive("rate", "omega_hi", s.omega_hi);
    if (!(s.omega_hi > s.omega_lo)) throw ConfigError("'omega_hi' must exceed 'omega_lo'", c.line_of("rate", "omega_hi"));
    s.seed = seed(c);
    s.cg = cg_options(c, "rate");
    try {
        s.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what(), c.section_line("rate"));
    }
    return s;
}

template <int N> void rate_plan(const Config& c, Plan& p) {
    problem_plan<N>(c, p);
    const auto s = rate_spec(c);
    p.add("q", s.q);
    p.add("penalty exponent", s.p);
    p.add("noise levels", static_cast<double>(s.noise.size()));
    p.add("expected slope", 2 * s.q / (1 + 2 * s.q));
    const auto g = make_grid(domain<N>(c), grid_size<N>(c));
    grid_phantom<N>(c, g, s.q);
    box(c, "rate");
}

template <int N> int rate_run(const Config& c, Context& ctx) {
    const auto d = domain<N>(c);
    const auto rays = ray_grid<N>(c, d, "rays");
    const auto like = make_grid(d, grid_size<N>(c));
    const auto s = rate_spec(c);
    const auto phi = weight<N>(c);
    const auto o = xray_options(c);
    const auto f0 = grid_phantom<N>(c, like, s.q);
    with_metric<N>(c, [&](const auto& m) {
        const DiscreteProblem<N> P(m, d, phi, rays, like, o, box(c, "rate"));
        const auto r = rate_experiment(P, f0, s);
        write_rate_csv(r, ctx.file("rate.csv"));
        int flagged = 0;
        for (bool f : r.flagged) flagged += f;
        if (flagged) ctx.warn("discrepancy fallback used at " + std::to_string(flagged) + " noise levels");
        ctx.summary["slope"] = r.slope;
        ctx.summary["expected"] = r.expected;
        ctx.summary["baseline_error"] = r.baseline_error;
        ctx.summary["phantom_spectral_decay"] = c.num("phantom", "q", s.q) + N / 2.0 + 0.05;
        ctx.say("rate slope " + fmt(r.slope) + " (expected " + fmt(r.expected) + ")");
    });
    return 0;
}

struct SpectrumSpec {
    std::vector<int> ladder;
    std::string op;
    double ray_factor;
    SpectrumOptions opts;
    int box;
};

SpectrumSpec spectrum_spec(const Config& c) {
    c.require_section("spectrum");
    SpectrumSpec s;
    for (double v : c.list("spectrum", "ladder")) {
        if (v != std::floor(v) || v < 4) throw ConfigError("ladder entries must be integers >= 4", c.line_of("spectrum", "ladder"));
        s.ladder.push_back(static_cast<int>(v));
    }
    s.op = c.choice("spectrum", "operator", {"rays", "kernel"}, "rays");
    s.ray_factor = c.positive("spectrum", "ray_factor", 4.0);
    s.opts.random_fields = static_cast<int>(c.integer("spectrum", "random_fields", s.opts.random_fields));
    s.opts.lobpcg.block = static_cast<int>(c.integer("spectrum", "block", s.opts.lobpcg.block));
    s.opts.lobpcg.max_iter = static_cast<int>(c.integer("spectrum", "max_iter", s.opts.lobpcg.max_iter));
    s.opts.lobpcg.tol = c.positive("spectrum", "tol", s.opts.lobpcg.tol);
    s.opts.seed = seed(c);
    s.box = box(c, "spectrum");
    if (s.opts.random_fields < 0) throw ConfigError("'random_fields' must be nonnegative", c.line_of("spectrum", "random_fields"));
    if (s.opts.lobpcg.block < 1) throw ConfigError("'block' must be positive", c.line_of("spectrum", "block"));
    if (s.op == "kernel") {
        if (c.str("metric", "family") != "euclidean")
            throw ConfigError("operator = kernel needs the euclidean metric", c.line_of("spectrum", "operator"));
    }
    return s;
}

template <int N> RayGrid<N> ladder_rays(const DomainModel<N>& d, int n, double f, double mu_min) {
    auto k = [&](double a) { return std::max(2, static_cast<int>(std::lround(a * f * n))); };
    if constexpr (N == 2) return make_ray_grid(d, k(1), k(1), mu_min);
    else return make_ray_grid(d, k(0.5), k(1), k(0.25), k(1), mu_min);
}

template <int N> void spectrum_plan(const Config& c, Plan& p) {
    const auto s = spectrum_spec(c);
    const auto d = domain<N>(c);
    const double mu = c.positive("flow", "mu_min", 1e-3);
    weight<N>(c);
    p.add("operator", s.op);
    for (int n : s.ladder) {
        const auto g = make_grid(d, n);
        std::string line = std::to_string(g.masked_nodes().size()) + " unknowns";
        if (s.op == "rays") {
            const auto rays = ladder_rays<N>(d, n, s.ray_factor, mu);
            line += ", " + std::to_string(rays.size()) + " rays";
            p.work += rays.size() * d.diameter() / xray_options(c).flow.step;
        }
        p.add("grid " + std::to_string(n), line);
    }
}

template <int N> int spectrum_run(const Config& c, Context& ctx) {
    const auto s = spectrum_spec(c);
    const auto d = domain<N>(c);
    const auto phi = weight<N>(c);
    const auto o = xray_options(c);
    std::vector<SpectrumRow> rows;
    with_metric<N>(c, [&](const auto& m) {
        for (int n : s.ladder) {
            const auto like = make_grid(d, n);
            SpectrumRow row;
            if (s.op == "kernel") {
                const EuclideanNormal<N> P(like, phi, s.box);
                row = stability_row(P, s.opts);
            } else {
                const auto rays = ladder_rays<N>(d, n, s.ray_factor, o.flow.mu_min);
                const DiscreteProblem<N> P(m, d, phi, rays, like, o, s.box);
                row = stability_row(P, s.opts);
            }
            if (!row.converged) ctx.warn("extremal search not converged on grid " + std::to_string(n));
            ctx.say("grid " + std::to_string(n) + ": min ratio " + fmt(row.min_ratio) + ", max ratio " + fmt(row.max_ratio));
            rows.push_back(row);
        }
    });
    write_spectrum_csv(rows, ctx.file("spectrum.csv"));
    Json mins = Json::array();
    for (const auto& r : rows) mins.push_back(r.min_ratio);
    ctx.summary["min_ratios"] = mins;
    return 0;
}

}  // namespace

void plan_invert(const Config& c, Plan& p) { dimension(c) == 2 ? invert_plan<2>(c, p) : invert_plan<3>(c, p); }
int run_invert(const Config& c, Context& x) { return dimension(c) == 2 ? invert_run<2>(c, x) : invert_run<3>(c, x); }
void plan_rate(const Config& c, Plan& p) { dimension(c) == 2 ? rate_plan<2>(c, p) : rate_plan<3>(c, p); }
int run_rate(const Config& c, Context& x) { return dimension(c) == 2 ? rate_run<2>(c, x) : rate_run<3>(c, x); }
void plan_spectrum(const Config& c, Plan& p) { dimension(c) == 2 ? spectrum_plan<2>(c, p) : spectrum_plan<3>(c, p); }
int run_spectrum(const Config& c, Context& x) {
    return dimension(c) == 2 ? spectrum_run<2>(c, x) : spectrum_run<3>(c, x);
}

}  // namespace gxr::cli
