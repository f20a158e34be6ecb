#include "experiments.hpp"

#include <gxr/microlocal.hpp>

#include <cstdio>

namespace gxr::cli {

namespace {

template <int N> double steps_per_ray(const Config& c) {
    const auto d = domain<N>(c);
    return d.diameter() / xray_options(c).flow.step;
}

template <int N> void plan_rays(const Config& c, Plan& p) {
    const auto rays = ray_grid<N>(c, domain<N>(c), "rays");
    std::string dims;
    for (const auto& a : rays.axes) dims += (dims.empty() ? "" : " x ") + std::to_string(a.count);
    p.add("ray grid", dims);
    p.add("rays", static_cast<double>(rays.size()));
    p.work += rays.size() * steps_per_ray<N>(c);
}

template <int N> void plan_field_grid(const Config& c, Plan& p) {
    const auto g = make_grid(domain<N>(c), grid_size<N>(c));
    p.add("field grid", std::to_string(g.n) + "^" + std::to_string(N) + ", spacing " + fmt(g.h));
    p.add("masked nodes", static_cast<double>(g.masked_nodes().size()));
}

template <int N> void plan_sphere(const Config& c, Plan& p) {
    const auto o = xray_options(c);
    p.add("sphere rule nodes", static_cast<double>(o.sphere_nodes));
    if (o.coarse_nodes > 0) p.add("coarse sphere nodes", static_cast<double>(o.coarse_nodes));
}

/// Field selected by [phantom] kind, passed to fn.
template <int N, class Fn> void with_phantom(const Config& c, Fn&& fn) {
    c.require_section("phantom");
    const std::string kind = c.choice("phantom", "kind", {"gaussian", "indicator"});
    if (kind == "indicator") {
        fn(BallIndicator<N>{vec<N>(c, "phantom", "center", Vec<N>::Zero()), c.positive("phantom", "radius", 0.5)});
    } else {
        fn(gaussian_phantom<N>(c));
    }
}

template <int N> void forward_plan(const Config& c, Plan& p) {
    plan_rays<N>(c, p);
    with_phantom<N>(c, [](const auto&) {});
    weight<N>(c);
}

template <int N> int forward_run(const Config& c, Context& ctx) {
    const auto d = domain<N>(c);
    const auto rays = ray_grid<N>(c, d, "rays");
    const auto o = xray_options(c);
    const auto phi = weight<N>(c);
    with_metric<N>(c, [&](const auto& m) {
        with_phantom<N>(c, [&](const auto& f) {
            Diagnostics diag;
            const auto s = forward(m, d, f, phi, rays, o, &diag);
            ctx.note(diag);
            write_sinogram_csv(s, ctx.file("sinogram.csv"));
            double mx = 0;
            for (double v : s.values) mx = std::max(mx, std::abs(v));
            ctx.summary["rays"] = rays.size();
            ctx.summary["max_abs"] = mx;
            ctx.summary["l2_mu"] = l2_norm(s);
        });
    });
    return 0;
}

template <int N> GaussianField<N> random_field(std::mt19937_64& rng, double reach) {
    std::uniform_real_distribution<double> u(-1, 1), s(0.12, 0.25);
    GaussianField<N> f;
    for (int k = 0; k < 4; ++k) {
        Vec<N> x;
        for (int j = 0; j < N; ++j) x[j] = u(rng);
        x *= reach / std::max(1.0, x.norm());
        f.bumps.push_back({u(rng), x, s(rng) * reach / 0.45});
    }
    return f;
}

template <int N> Sinogram<N> random_sinogram(const Sinogram<N>& like, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    const double a0 = u(rng), a1 = u(rng), a2 = u(rng), a3 = u(rng), b1 = u(rng), b2 = u(rng), c = u(rng);
    Sinogram<N> s = like;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        const auto p = s.grid.params(i);
        s.values[i] = a0 + a1 * std::cos(p[0] + b1) + a2 * std::sin(2 * p[0] + b2) + a3 * std::cos(3 * p[0]) + c * p[1];
    }
    return s;
}

struct AdjointSpec {
    int pairs;
    double tolerance;
};

AdjointSpec adjoint_spec(const Config& c) {
    const long pairs = c.integer("adjoint", "pairs", 20);
    if (pairs < 1) throw ConfigError("'pairs' must be positive", c.line_of("adjoint", "pairs"));
    return {static_cast<int>(pairs), c.positive("adjoint", "tolerance", 1e-3)};
}

template <int N> void adjoint_plan(const Config& c, Plan& p) {
    plan_rays<N>(c, p);
    plan_field_grid<N>(c, p);
    plan_sphere<N>(c, p);
    const auto a = adjoint_spec(c);
    p.add("random pairs", static_cast<double>(a.pairs));
    p.add("tolerance", a.tolerance);
    const auto g = make_grid(domain<N>(c), grid_size<N>(c));
    p.work += g.masked_nodes().size() * xray_options(c).sphere_nodes * steps_per_ray<N>(c) / 2;
    weight<N>(c);
}

template <int N> int adjoint_run(const Config& c, Context& ctx) {
    const auto d = domain<N>(c);
    const auto rays = ray_grid<N>(c, d, "rays");
    const auto like = make_grid(d, grid_size<N>(c));
    const auto o = xray_options(c);
    const auto phi = weight<N>(c);
    const auto spec = adjoint_spec(c);
    std::mt19937_64 rng(seed(c));
    double worst = 0;
    with_metric<N>(c, [&](const auto& m) {
        const auto plan = plan_adjoint(m, d, phi, like, rays.mu_min, o);
        ctx.note(plan.diag);
        const auto base = make_sinogram(m, rays);
        const auto a = assemble_forward(m, d, phi, rays, like, o);
        std::FILE* fp = std::fopen(ctx.file("adjoint.csv").c_str(), "w");
        if (!fp) throw Error("cannot write adjoint.csv");
        std::fprintf(fp, "pair,lhs,rhs,relative_error\n");
        const double reach = 0.45 * d.axes.minCoeff();
        for (int k = 0; k < spec.pairs; ++k) {
            const auto fld = random_field<N>(rng, reach);
            GaussianField<N> shifted = fld;
            for (auto& b : shifted.bumps) b.center += d.center;
            const auto f = sample(like, [&](const Vec<N>& x) { return shifted(x); });
            const auto h = random_sinogram(base, rng);
            auto xf = base;
            Eigen::Map<Eigen::VectorXd>(xf.values.data(), static_cast<Eigen::Index>(xf.values.size())) =
                a * Eigen::Map<const Eigen::VectorXd>(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
            const auto xth = apply_adjoint(plan, h, like);
            const double lhs = inner_product(xf, h), rhs = inner_product(m, f, xth);
            const double rel = std::abs(lhs - rhs) / (l2_norm(m, f) * l2_norm(h));
            worst = std::max(worst, rel);
            std::fprintf(fp, "%d,%.17g,%.17g,%.17g\n", k, lhs, rhs, rel);
        }
        std::fclose(fp);
    });
    ctx.summary["pairs"] = spec.pairs;
    ctx.summary["max_relative_error"] = worst;
    ctx.summary["tolerance"] = spec.tolerance;
    ctx.say("adjoint identity: max relative error " + fmt(worst) + " (tolerance " + fmt(spec.tolerance) + ")");
    return worst < spec.tolerance ? 0 : 1;
}

template <int N> void normal_plan(const Config& c, Plan& p) {
    plan_rays<N>(c, p);
    plan_field_grid<N>(c, p);
    plan_sphere<N>(c, p);
    gaussian_phantom<N>(c);
    weight<N>(c);
    const auto g = make_grid(domain<N>(c), grid_size<N>(c));
    p.work += 2 * g.masked_nodes().size() * xray_options(c).sphere_nodes * steps_per_ray<N>(c);
}

template <int N> int normal_run(const Config& c, Context& ctx) {
    const auto d = domain<N>(c);
    const auto rays = ray_grid<N>(c, d, "rays");
    const auto like = make_grid(d, grid_size<N>(c));
    const auto o = xray_options(c);
    const auto phi = weight<N>(c);
    const auto f = gaussian_phantom<N>(c);
    with_metric<N>(c, [&](const auto& m) {
        Diagnostics diag;
        const auto nd = normal_direct(m, d, f, phi, like, o, &diag);
        const auto nc = normal_composed(m, d, f, phi, rays, like, o, &diag);
        ctx.note(diag);
        auto diff = nd;
        for (std::size_t i = 0; i < diff.size(); ++i) diff.values[i] -= nc.values[i];
        const double rel = l2_norm(m, diff) / l2_norm(m, nd);
        std::FILE* fp = std::fopen(ctx.file("normal.csv").c_str(), "w");
        if (!fp) throw Error("cannot write normal.csv");
        for (int k = 0; k < N; ++k) std::fprintf(fp, "x%d,", k);
        std::fprintf(fp, "direct,composed\n");
        for (auto i : like.masked_nodes()) {
            const auto x = like.node(i);
            for (int k = 0; k < N; ++k) std::fprintf(fp, "%.17g,", x[k]);
            std::fprintf(fp, "%.17g,%.17g\n", nd.values[i], nc.values[i]);
        }
        std::fclose(fp);
        ctx.summary["relative_discrepancy"] = rel;
        ctx.say("normal operator: relative L2 discrepancy " + fmt(rel));
    });
    return 0;
}

struct PsfSpec {
    double h, r_max;
    int radii, directions;
};

template <int N> PsfSpec psf_spec(const Config& c, Vec<N>& x0) {
    c.require_section("psf");
    x0 = vec<N>(c, "psf", "x0", Vec<N>::Zero());
    PsfSpec s;
    s.h = c.positive("psf", "h", 0.01);
    s.r_max = c.positive("psf", "r_max", 0.2);
    s.radii = static_cast<int>(c.integer("psf", "radii", 12));
    s.directions = static_cast<int>(c.integer("psf", "directions", 8));
    if (s.radii < 3) throw ConfigError("'radii' must be at least 3", c.line_of("psf", "radii"));
    if (s.directions < 1) throw ConfigError("'directions' must be positive", c.line_of("psf", "directions"));
    if (!(s.r_max > 4 * s.h)) throw ConfigError("'r_max' must exceed 4 h", c.line_of("psf", "r_max"));
    return s;
}

template <int N> void psf_plan(const Config& c, Plan& p) {
    Vec<N> x0;
    const auto s = psf_spec<N>(c, x0);
    plan_sphere<N>(c, p);
    p.add("window", "[" + fmt(4 * s.h) + ", " + fmt(s.r_max) + "]");
    p.add("samples", static_cast<double>(s.radii * s.directions));
    p.work += s.radii * s.directions * xray_options(c).sphere_nodes * steps_per_ray<N>(c);
    weight<N>(c);
}

template <int N> int psf_run(const Config& c, Context& ctx) {
    const auto d = domain<N>(c);
    Vec<N> x0;
    const auto s = psf_spec<N>(c, x0);
    const auto o = xray_options(c);
    const auto phi = weight<N>(c);
    with_metric<N>(c, [&](const auto& m) {
        const auto r = psf_fit(m, d, phi, x0, s.h, o, s.r_max, s.radii, s.directions);
        write_fit_csv(ctx.file("psf.csv"), r.radii, {{"profile", r.profile}}, {{"decay", r.fit}});
        ctx.summary["slope"] = r.fit.slope;
        ctx.summary["expected"] = -(N - 1.0);
        ctx.summary["residual"] = r.fit.residual;
        if (!r.fit.conclusive) ctx.warn("psf fit inconclusive");
        ctx.say("psf exponent " + fmt(r.fit.slope));
    });
    return 0;
}

}  // namespace

void plan_forward(const Config& c, Plan& p) { dimension(c) == 2 ? forward_plan<2>(c, p) : forward_plan<3>(c, p); }
int run_forward(const Config& c, Context& x) { return dimension(c) == 2 ? forward_run<2>(c, x) : forward_run<3>(c, x); }
void plan_adjoint_check(const Config& c, Plan& p) { dimension(c) == 2 ? adjoint_plan<2>(c, p) : adjoint_plan<3>(c, p); }
int run_adjoint_check(const Config& c, Context& x) {
    return dimension(c) == 2 ? adjoint_run<2>(c, x) : adjoint_run<3>(c, x);
}
void plan_normal(const Config& c, Plan& p) { dimension(c) == 2 ? normal_plan<2>(c, p) : normal_plan<3>(c, p); }
int run_normal(const Config& c, Context& x) { return dimension(c) == 2 ? normal_run<2>(c, x) : normal_run<3>(c, x); }
void plan_psf(const Config& c, Plan& p) { dimension(c) == 2 ? psf_plan<2>(c, p) : psf_plan<3>(c, p); }
int run_psf(const Config& c, Context& x) { return dimension(c) == 2 ? psf_run<2>(c, x) : psf_run<3>(c, x); }

}  // namespace gxr::cli
