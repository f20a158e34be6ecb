#include <gxr/xray.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace gxr;

namespace {

XrayOptions xopts(double h, int sphere = 256, int sub = 1) {
    XrayOptions o;
    o.flow.step = h;
    o.sphere_nodes = sphere;
    o.substeps = sub;
    return o;
}

struct Indicator {
    double r;
    double operator()(const Vec<2>& x, Diagnostics&) const { return x.norm() < r ? 1.0 : 0.0; }
};

GaussianField<2> random_field(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1), s(0.12, 0.25);
    GaussianField<2> f;
    for (int k = 0; k < 4; ++k) {
        Vec<2> c(u(rng), u(rng));
        c *= 0.45 / std::max(1.0, c.norm());
        f.bumps.push_back({u(rng), c, s(rng)});
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

// N f(x) = integral of 2 f(x + r e) dr dtheta for the euclidean plane (polar coordinates).
double polar_oracle(const GaussianField<2>& f, const Vec<2>& x) {
    const int nt = 720, nr = 4000;
    const double rmax = 2.5;
    double s = 0;
    for (int i = 0; i < nt; ++i) {
        const double t = 2 * pi * (i + 0.5) / nt;
        const Vec<2> e(std::cos(t), std::sin(t));
        for (int j = 0; j < nr; ++j) s += f(Vec<2>(x + (rmax * (j + 0.5) / nr) * e));
    }
    return 2.0 * s * (rmax / nr) * (2 * pi / nt);
}

}  // namespace

TEST(Forward, IndicatorDiameter) {
    const auto d = ball_domain<2>(1.0);
    const double h = 1.0 / 256;
    const auto grid = make_ray_grid(d, 4, 1);  // alpha = 0 midpoint: diameter rays
    const auto s = forward(Euclidean<2>{}, d, Indicator{0.5}, WeightField<2>::constant(), grid, xopts(h));
    for (double v : s.values) EXPECT_NEAR(v, 1.0, 2 * h);
    const auto g = sample(make_grid(d, 513), [](const Vec<2>& x) { return x.norm() < 0.5 ? 1.0 : 0.0; });
    const auto sg = forward(Euclidean<2>{}, d, g, WeightField<2>::constant(), grid, xopts(h));
    for (double v : sg.values) EXPECT_NEAR(v, 1.0, 2 * h);
}

TEST(Forward, GaussianDiameter) {
    const auto d = ball_domain<2>(1.0);
    GaussianField<2> f;
    f.bumps.push_back({1.0, Vec<2>::Zero(), 0.2});
    const auto grid = make_ray_grid(d, 8, 1);
    const auto s = forward(Euclidean<2>{}, d, f, WeightField<2>::constant(), grid, xopts(1.0 / 128));
    const double expect = 0.2 * std::sqrt(2 * pi) * std::erf(1.0 / (0.2 * std::sqrt(2.0)));
    for (double v : s.values) EXPECT_NEAR(v, expect, 1e-3);
}

TEST(Forward, LensMatchesRefinedQuadrature) {
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25);
    GaussianField<2> f;
    f.bumps.push_back({1.0, Vec<2>(0.2, -0.1), 0.2});
    const auto grid = make_ray_grid(d, 16, 8);
    const auto a = forward(m, d, f, WeightField<2>::constant(), grid, xopts(0.01));
    const auto b = forward(m, d, f, WeightField<2>::constant(), grid, xopts(0.001));
    for (std::size_t i = 0; i < a.values.size(); ++i)
        EXPECT_LT(std::abs(a.values[i] - b.values[i]), 1e-4 * std::max(1e-2, std::abs(b.values[i])));
}

TEST(Forward, LinearAndMonotone) {
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(0.3, Vec<2>::Zero(), 0.3);
    std::mt19937_64 rng(2);
    const auto grid = make_ray_grid(d, 32, 16);
    const auto like = make_grid(d, 48);
    const auto f1 = sample(like, [&](const Vec<2>& x) { return std::exp(-4 * x.squaredNorm()); });
    auto f2 = f1;
    for (auto& v : f2.values) v *= 1.5;
    const auto o = xopts(0.02);
    const auto s1 = forward(m, d, f1, WeightField<2>::constant(), grid, o);
    const auto s2 = forward(m, d, f2, WeightField<2>::constant(), grid, o);
    for (std::size_t i = 0; i < s1.values.size(); ++i) {
        EXPECT_NEAR(s2.values[i], 1.5 * s1.values[i], 1e-12);
        EXPECT_GE(s1.values[i], 0.0);
    }
}

TEST(Forward, AssembledMatrixMatchesStreaming) {
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(0.4, Vec<2>(0.1, 0), 0.3);
    const auto grid = make_ray_grid(d, 24, 12);
    const auto g = sample(make_grid(d, 40), [](const Vec<2>& x) { return std::cos(3 * x[0]) + x[1]; });
    const auto o = xopts(0.03, 64, 2);
    const auto phi = WeightField<2>::directional(Vec<2>(1, 1), 0.3, 0.6);
    const auto s = forward(m, d, g, phi, grid, o);
    const auto a = assemble_forward(m, d, phi, grid, g, o);
    Eigen::Map<const Eigen::VectorXd> fv(g.values.data(), g.values.size());
    const Eigen::VectorXd y = a * fv;
    for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_NEAR(y[i], s.values[i], 1e-12);
    std::vector<double> r(grid.size());
    for (auto& v : r) v = std::sin(7.0 * (&v - r.data()));
    const auto t = forward_transpose(m, d, r, phi, grid, g, o);
    Eigen::Map<const Eigen::VectorXd> rv(r.data(), r.size());
    const Eigen::VectorXd tt = a.transpose() * rv;
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], tt[i], 1e-11);
}

TEST(Adjoint, ConstantGivesFullCircle) {
    const auto d = ball_domain<2>(1.0);
    auto s = make_sinogram(Euclidean<2>{}, make_ray_grid(d, 64, 64));
    std::fill(s.values.begin(), s.values.end(), 1.0);
    const auto like = make_grid(d, 24);
    const auto a = adjoint(Euclidean<2>{}, d, s, WeightField<2>::constant(), like, xopts(0.02, 128));
    for (auto i : like.masked_nodes()) EXPECT_NEAR(a.values[i], 2 * pi, 1e-2);
    const auto half = adjoint(Euclidean<2>{}, d, s, WeightField<2>::halfspace(Vec<2>(0.3, 1)), like, xopts(0.02, 128));
    for (auto i : like.masked_nodes()) EXPECT_NEAR(half.values[i], pi, 1e-2 * pi + 2 * pi / 128);
}

TEST(Adjoint, IdentityRandomPairs) {
    const auto d = ball_domain<2>(1.0);
    std::mt19937_64 rng(9);
    for (const bool lens : {false, true}) {
        const auto rays = make_ray_grid(d, 128, 128);
        const auto like = make_grid(d, 64);
        const auto o = xopts(1.0 / 64, 192);
        auto run = [&](const auto& m) {
            const auto plan = plan_adjoint(m, d, WeightField<2>::constant(), like, rays.mu_min, o);
            const auto base = make_sinogram(m, rays);
            for (int k = 0; k < 4; ++k) {
                const auto f = sample(like, [&, fld = random_field(rng)](const Vec<2>& x) { return fld(x); });
                const auto h = random_sinogram(base, rng);
                const auto xf = forward(m, d, f, WeightField<2>::constant(), rays, o);
                const auto xth = apply_adjoint(plan, h, like);
                const double lhs = inner_product(xf, h), rhs = inner_product(m, f, xth);
                EXPECT_LT(std::abs(lhs - rhs) / (l2_norm(m, f) * l2_norm(h)), 1e-3) << (lens ? "lens" : "euclid");
            }
        };
        if (lens) run(gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25));
        else run(Euclidean<2>{});
    }
}

TEST(Normal, PolarOracle) {
    const auto d = ball_domain<2>(1.0);
    GaussianField<2> f;
    f.bumps.push_back({1.0, Vec<2>(0.1, 0.05), 0.15});
    const std::vector<Vec<2>> pts{Vec<2>(0.1, 0.05), Vec<2>(0.4, -0.2), Vec<2>(-0.5, 0.3)};
    const auto n = normal_direct_at(Euclidean<2>{}, d, f, WeightField<2>::constant(), pts, xopts(0.01, 720, 4));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double ref = polar_oracle(f, pts[i]);
        EXPECT_NEAR(n[i] / ref, 1.0, 1e-3) << i;
    }
}

TEST(Normal, ZeroAndLinearity) {
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25);
    const auto like = make_grid(d, 16);
    const auto o = xopts(0.03, 64);
    const auto z = normal_direct(m, d, like, WeightField<2>::constant(), like, o);
    for (double v : z.values) EXPECT_EQ(v, 0.0);
    const auto f = sample(like, [](const Vec<2>& x) { return std::exp(-5 * x.squaredNorm()); });
    auto f3 = f;
    for (auto& v : f3.values) v *= -2.5;
    const auto a = normal_direct(m, d, f, WeightField<2>::constant(), like, o);
    const auto b = normal_direct(m, d, f3, WeightField<2>::constant(), like, o);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.values[i], -2.5 * a.values[i], 1e-12 * (1 + std::abs(a.values[i])));
}

TEST(Normal, ComposedMatchesDirectAndSymmetric) {
    const auto d = ball_domain<2>(1.0);
    GaussianField<2> f;
    f.bumps.push_back({1.0, Vec<2>(0.15, -0.1), 0.18});
    GaussianField<2> g;
    g.bumps.push_back({1.0, Vec<2>(-0.2, 0.2), 0.2});
    const auto like = make_grid(d, 32);
    const auto rays = make_ray_grid(d, 192, 192);
    const auto o = xopts(1.0 / 64, 256);
    auto check = [&](const auto& m) {
        const auto fg = sample(like, [&](const Vec<2>& x) { return f(x); });
        const auto gg = sample(like, [&](const Vec<2>& x) { return g(x); });
        const auto nd = normal_direct(m, d, f, WeightField<2>::constant(), like, o);
        const auto nc = normal_composed(m, d, f, WeightField<2>::constant(), rays, like, o);
        auto diff = nd;
        for (std::size_t i = 0; i < diff.size(); ++i) diff.values[i] -= nc.values[i];
        EXPECT_LT(l2_norm(m, diff) / l2_norm(m, nd), 1e-2);
        const auto ng = normal_direct(m, d, g, WeightField<2>::constant(), like, o);
        const double lhs = inner_product(m, nd, gg), rhs = inner_product(m, fg, ng);
        EXPECT_LT(std::abs(lhs - rhs) / std::abs(rhs), 1e-3);
    };
    check(Euclidean<2>{});
    check(gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25));
}

TEST(Nsm, ChordLengths) {
    const auto d = ball_domain<2>(1.0);
    const std::vector<PhaseState<2>> probes{{Vec<2>(0, 0), Vec<2>(1, 0)}, {Vec<2>(0, 0), Vec<2>(0.6, 0.8)},
                                            {Vec<2>(0.3, 0.2), Vec<2>(0, 1)}};
    auto one = [](const PhaseState<2>&) { return 1.0; };
    auto chi = [](const PhaseState<2>&, const PhaseState<2>&) { return 1.0; };
    const auto r = nsm_apply(Euclidean<2>{}, d, probes, one, chi, xopts(0.01));
    EXPECT_NEAR(r[0], 2.0, 1e-12);
    EXPECT_NEAR(r[1], 2.0, 1e-12);
    EXPECT_NEAR(r[2], 2 * std::sqrt(1 - 0.09), 1e-12);
    const auto m = gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25);
    std::vector<PhaseState<2>> lp;
    for (const auto& p : probes) lp.push_back({p.x, p.v * m.speed.value(p.x)});
    auto h = [](const PhaseState<2>& s) { return 1.0 + s.x[0] * s.v[1]; };
    auto chi2 = [](const PhaseState<2>& a, const PhaseState<2>& b) { return std::exp(-(a.x - b.x).squaredNorm()); };
    const auto a = nsm_apply(m, d, lp, h, chi2, xopts(0.01));
    const auto b = nsm_apply(m, d, lp, h, chi2, xopts(0.001));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4 * std::abs(b[i]));
    const auto taus = nsm_apply(m, d, lp, one, chi, xopts(0.01));
    for (std::size_t i = 0; i < lp.size(); ++i)
        EXPECT_NEAR(taus[i], exit_time(m, d, lp[i], +1, xopts(0.01).flow) - exit_time(m, d, lp[i], -1, xopts(0.01).flow), 1e-12);
}

TEST(GridIo, RoundTrip) {
    const auto d = ball_domain<2>(1.0);
    const auto g = sample(make_grid(d, 17), [](const Vec<2>& x) { return x[0] - 2 * x[1]; });
    const auto path = (std::filesystem::temp_directory_path() / "gxr_grid_test.bin").string();
    write_grid(g, path);
    EXPECT_EQ(std::filesystem::file_size(path), 16u + 17 * 17 * 5);
    const auto r = read_grid<2>(path);
    EXPECT_EQ(r.n, 17);
    EXPECT_EQ(r.h, g.h);
    EXPECT_EQ(r.mask, g.mask);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(r.values[i], static_cast<float>(g.values[i]));
    std::filesystem::remove(path);
}
