#include "runner.hpp"

#include <gxr/conjugacy.hpp>
#include <gxr/inversion.hpp>
#include <gxr/microlocal.hpp>
#include <gxr/xray.hpp>

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace gxr;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget;
    std::function<Outcome()> body;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

XrayOptions xopts(double h, int sphere = 256, int sub = 1, int coarse = 0) {
    XrayOptions o;
    o.flow.step = h;
    o.sphere_nodes = sphere;
    o.substeps = sub;
    o.coarse_nodes = coarse;
    return o;
}

FlowOptions fopts(double h = 0.01) {
    FlowOptions o;
    o.step = h;
    return o;
}

struct Indicator {
    double r;
    double operator()(const Vec<2>& x, Diagnostics&) const { return x.norm() < r ? 1.0 : 0.0; }
};

Outcome euclidean_exactness() {
    const auto d = ball_domain<2>(1.0);
    const double h = 1.0 / 256;
    const auto rays = make_ray_grid(d, 16, 1);
    const auto s = forward(Euclidean<2>{}, d, Indicator{0.5}, WeightField<2>::constant(), rays, xopts(h));
    const auto g = sample(make_grid(d, 513), [](const Vec<2>& x) { return x.norm() < 0.5 ? 1.0 : 0.0; });
    const auto sg = forward(Euclidean<2>{}, d, g, WeightField<2>::constant(), rays, xopts(h));
    double worst = 0;
    for (double v : s.values) worst = std::max(worst, std::abs(v - 1.0));
    for (double v : sg.values) worst = std::max(worst, std::abs(v - 1.0));
    return {worst <= 2 * h, "max |X f - 1| = " + fmt("%.3g", worst) + " over 16 diameters, bound 2h = " + fmt("%.3g", 2 * h)};
}

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

Sinogram<2> random_sinogram(const Sinogram<2>& like, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    const double a0 = u(rng), a1 = u(rng), a2 = u(rng), b1 = u(rng), c = u(rng);
    Sinogram<2> s = like;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        const auto p = s.grid.params(i);
        s.values[i] = a0 + a1 * std::cos(p[0] + b1) + a2 * std::sin(2 * p[0]) + c * p[1];
    }
    return s;
}

Outcome adjoint_identity() {
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(-0.5, Vec<2>::Zero(), 0.25);
    const auto rays = make_ray_grid(d, 128, 128);
    const auto like = make_grid(d, 128);
    const auto o = xopts(0.02, 128);
    const auto phi = WeightField<2>::constant();
    const auto plan = plan_adjoint(m, d, phi, like, rays.mu_min, o);
    const auto a = assemble_forward(m, d, phi, rays, like, o);
    const auto base = make_sinogram(m, rays);
    std::mt19937_64 rng(2024);
    double worst = 0;
    for (int k = 0; k < 20; ++k) {
        const auto fld = random_field(rng);
        const auto f = sample(like, [&](const Vec<2>& x) { return fld(x); });
        const auto h = random_sinogram(base, rng);
        auto xf = base;
        Eigen::Map<Eigen::VectorXd>(xf.values.data(), xf.values.size()) =
            a * Eigen::Map<const Eigen::VectorXd>(f.values.data(), f.values.size());
        const auto xth = apply_adjoint(plan, h, like);
        const double lhs = inner_product(xf, h), rhs = inner_product(m, f, xth);
        worst = std::max(worst, std::abs(lhs - rhs) / (l2_norm(m, f) * l2_norm(h)));
    }
    return {worst < 1e-3, "lens metric, 128^2 grid, 20 pairs: max relative error " + fmt("%.3g", worst)};
}

Outcome normal_consistency() {
    const auto d = ball_domain<2>(1.0);
    const auto like = make_grid(d, 32);
    const auto rays = make_ray_grid(d, 192, 192);
    const auto o = xopts(1.0 / 64, 256);
    std::vector<GaussianField<2>> phantoms(2);
    phantoms[0].bumps.push_back({1.0, Vec<2>(0.15, -0.1), 0.18});
    phantoms[1].bumps = {{1.0, Vec<2>(-0.25, 0.2), 0.15}, {-0.6, Vec<2>(0.3, 0.25), 0.2}};
    double worst = 0;
    auto check = [&](const auto& m) {
        for (const auto& f : phantoms) {
            const auto nd = normal_direct(m, d, f, WeightField<2>::constant(), like, o);
            const auto nc = normal_composed(m, d, f, WeightField<2>::constant(), rays, like, o);
            auto diff = nd;
            for (std::size_t i = 0; i < diff.size(); ++i) diff.values[i] -= nc.values[i];
            worst = std::max(worst, l2_norm(m, diff) / l2_norm(m, nd));
        }
    };
    check(Euclidean<2>{});
    check(gaussian_lens<2>(-0.5, Vec<2>::Zero(), 0.25));
    check(gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25));
    return {worst < 1e-2, "euclidean and two lenses, 2 phantoms each: max relative L2 discrepancy " + fmt("%.3g", worst)};
}

Outcome operator_order() {
    const auto d = ball_domain<2>(3.0);
    ProbeSpec<2> s;
    s.x0 = Vec<2>::Zero();
    s.xi0 = Vec<2>(1, 0);
    s.width = 0.39;
    s.ladder = {8, 16, 32, 64};
    const auto probe = order_probe(Euclidean<2>{}, d, WeightField<2>::constant(), s, xopts(0.06, 256, 2, 256));
    const auto p2 = psf_fit(Euclidean<2>{}, ball_domain<2>(1.0), WeightField<2>::constant(), Vec<2>::Zero(), 0.01,
                            xopts(0.01, 512, 2));
    const auto p3 = psf_fit(Euclidean<3>{}, ball_domain<3>(1.0), WeightField<3>::constant(), Vec<3>::Zero(), 0.01,
                            xopts(0.01, 4096, 2));
    const bool pass = std::abs(probe.fit.slope + 1) <= 0.05 && std::abs(p2.fit.slope + 1) <= 0.05 &&
                      std::abs(p3.fit.slope + 2) <= 0.2;
    return {pass, "order probe slope " + fmt("%.4f", probe.fit.slope) + ", psf exponent 2D " + fmt("%.4f", p2.fit.slope) +
                      ", 3D " + fmt("%.4f", p3.fit.slope)};
}

// Hamiltonian flow of H = c^2 |p|^2 / 2 with the scalar Jacobi equation j'' + K j = 0,
// K = c^2 Laplacian(ln c) by finite differences; first sign change of j.
struct LensOracle {
    double a, sigma;
    double c(const Vec<2>& x) const { return 1 + a * std::exp(-x.squaredNorm() / (2 * sigma * sigma)); }
    Vec<2> grad_c(const Vec<2>& x) const {
        return -a * std::exp(-x.squaredNorm() / (2 * sigma * sigma)) * x / (sigma * sigma);
    }
    double curvature(const Vec<2>& x) const {
        const double e = 1e-4;
        double lap = -4 * std::log(c(x));
        for (int k = 0; k < 2; ++k) {
            Vec<2> d = Vec<2>::Zero();
            d[k] = e;
            lap += std::log(c(x + d)) + std::log(c(x - d));
        }
        return c(x) * c(x) * lap / (e * e);
    }
    using S = Eigen::Matrix<double, 6, 1>;
    S rhs(const S& y) const {
        const Vec<2> x = y.head<2>(), p = y.segment<2>(2);
        const double cc = c(x);
        S out;
        out.head<2>() = cc * cc * p;
        out.segment<2>(2) = -cc * grad_c(x) * p.squaredNorm();
        out[4] = y[5];
        out[5] = -curvature(x) * y[4];
        return out;
    }
    double first(const PhaseState<2>& s, double dt) const {
        S y;
        const double c0 = c(s.x);
        y << s.x, s.v / (c0 * c0), 0, 1;
        double t = 0;
        for (;;) {
            const S k1 = rhs(y), k2 = rhs(y + 0.5 * dt * k1), k3 = rhs(y + 0.5 * dt * k2), k4 = rhs(y + dt * k3);
            const S n = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
            if (n.head<2>().squaredNorm() >= 1) return -1;
            if (t > 0 && y[4] > 0 && n[4] <= 0) return t + dt * y[4] / (y[4] - n[4]);
            y = n;
            t += dt;
        }
    }
};

constexpr double kLensA = -0.5, kLensSigma = 0.25;

Outcome conjugate_detection() {
    const Vec<2> x2(0.5, 0);
    const auto r2 = first_conjugate(round_sphere<2>(), PhaseState<2>{x2, Vec<2>(0, 0.5 * (1 + x2.squaredNorm()))}, 4.0, 0.01);
    const Vec<3> x3(0.5, 0, 0);
    const auto r3 =
        first_conjugate(round_sphere<3>(), PhaseState<3>{x3, Vec<3>(0, 0.5 * (1 + x3.squaredNorm()), 0)}, 4.0, 0.01);
    const bool sphere_ok = r2 && r3 && std::abs(r2->s - pi) < 1e-4 && std::abs(r3->s - pi) < 1e-4 && r2->k == 1 && r3->k == 2;

    const auto m = gaussian_lens<2>(kLensA, Vec<2>::Zero(), kLensSigma);
    const auto d = ball_domain<2>(1.0);
    const auto fan = make_ray_grid(d, 8, 64, 1e-3);
    const LensOracle oracle{kLensA, kLensSigma};
    const ConjugacyOptions co;
    const auto scan = locus_scan(m, d, fan, fopts(), co);
    std::size_t matched = 0, expected = 0;
    double worst = 0;
    for (std::size_t i = 0; i < fan.size(); ++i) {
        const auto p = fan.params(i);
        const double so = oracle.first(fan_base(m, d, p, co.base_offset, fopts()), 1e-3);
        if (so < 0) continue;
        ++expected;
        for (const auto& e : scan.entries)
            if ((e.params - p).norm() < 1e-12) {
                ++matched;
                worst = std::max(worst, std::abs(e.record.s - so));
            }
    }
    const bool lens_ok = expected > 0 && matched == expected && scan.entries.size() == expected && worst < 1e-4;
    std::string detail = "sphere s - pi: 2D " + (r2 ? fmt("%.2e", r2->s - pi) : "none") + " k=" + (r2 ? std::to_string(r2->k) : "-") +
                         ", 3D " + (r3 ? fmt("%.2e", r3->s - pi) : "none") + " k=" + (r3 ? std::to_string(r3->k) : "-") +
                         "; lens " + std::to_string(matched) + "/" + std::to_string(expected) + " records matched, max |ds| " +
                         fmt("%.2e", worst);
    return {sphere_ok && lens_ok, detail};
}

Outcome lemma_residuals() {
    const auto m = gaussian_lens<2>(kLensA, Vec<2>::Zero(), kLensSigma);
    const auto d = ball_domain<2>(1.0);
    const auto scan = locus_scan(m, d, make_ray_grid(d, 8, 64, 1e-3), fopts());
    double worst = 0;
    std::size_t checked = 0, failed = 0;
    for (const auto& e : scan.entries) {
        if (!e.regular) continue;
        const auto rep = etalem_check(m, d, e.record, fopts());
        ++checked;
        if (!rep.ok) {
            ++failed;
            continue;
        }
        worst = std::max({worst, rep.residual_base, rep.residual_conj});
    }
    std::mt19937 rng(7);
    std::normal_distribution<double> nd;
    double weakest = std::numeric_limits<double>::infinity();
    std::size_t controls = 0;
    for (std::size_t i = 0; i < scan.entries.size(); i += 5) {
        const auto& r = scan.entries[i].record;
        const PhaseState<2> v = r.base;
        const PhaseState<2> vt = flow_for_time(m, v, 0.5 * r.s, 0.01);
        auto annihilator = [&](const PhaseState<2>& s) {
            const Vec<2> perp(-s.v[1], s.v[0]);
            return Vec<2>(m.metric(s.x) * perp * (nd(rng) > 0 ? 1.0 : -1.0) * (1 + std::abs(nd(rng))));
        };
        const auto rep = etalem_check(m, d, v, vt, annihilator(v), annihilator(vt), fopts());
        if (!rep.ok) continue;
        ++controls;
        weakest = std::min(weakest, std::max(rep.residual_base, rep.residual_conj));
    }
    const bool pass = checked > 0 && failed == 0 && worst < 5e-3 && controls > 0 && weakest > 0.1;
    return {pass, std::to_string(checked) + " regular records, max residual " + fmt("%.2e", worst) + ", " +
                      std::to_string(controls) + " controls, min control residual " + fmt("%.3f", weakest)};
}

template <int N> ArtifactResult<N> artifact_run(const Vec<N>& x0, const Vec<N>& xi0, const XrayOptions& o, double roi = 0,
                                                double art = 0) {
    const auto m = gaussian_lens<N>(-0.5, Vec<N>::Zero(), 0.75);
    const auto d = ball_domain<N>(3.0);
    ProbeSpec<N> s;
    s.x0 = x0;
    s.xi0 = xi0;
    s.width = 0.39;
    s.ladder = {8, 16, 32, 64};
    s.roi_spacing = roi;
    s.artifact_spacing = art;
    return artifact_probe(m, d, WeightField<N>::constant(), s, o);
}

Outcome artifact_gap() {
    const auto a2 = artifact_run<2>(Vec<2>(-1.65, 0), Vec<2>(0, 1), xopts(0.06, 256, 2, 256));
    const auto a3 = artifact_run<3>(Vec<3>(-1.65, 0.6, 0), Vec<3>(0, 1, 0), xopts(0.24, 256, 4, 1024), 0.2553, 0.17);
    const bool pass = std::abs(a2.ratio.slope) <= 0.15 && std::abs(a3.ratio.slope + 0.5) <= 0.15;
    return {pass, "ratio slope 2D " + fmt("%.4f", a2.ratio.slope) + " (primary " + fmt("%.3f", a2.primary.fit.slope) +
                      "), 3D " + fmt("%.4f", a3.ratio.slope) + " (primary " + fmt("%.3f", a3.primary.fit.slope) + ")"};
}

Outcome tikhonov_rate() {
    const auto d = ball_domain<2>(1.0);
    const auto like = make_grid(d, 64);
    const DiscreteProblem<2> P(Euclidean<2>{}, d, WeightField<2>::constant(), make_ray_grid(d, 128, 128), like,
                               xopts(0.02, 256, 2));
    bool pass = true;
    std::string detail;
    for (double q : {0.5, 1.0}) {
        RateSpec s;
        s.q = q;
        s.p = 0.5;
        const auto f0 = sobolev_phantom(like, q, 42, Vec<2>::Zero(), 0.6, 0.9);
        const auto r = rate_experiment(P, f0, s);
        pass = pass && std::abs(r.slope - r.expected) <= 0.1;
        detail += (detail.empty() ? "" : ", ") + std::string("q=") + fmt("%.1f", q) + " slope " + fmt("%.4f", r.slope) +
                  " (expected " + fmt("%.4f", r.expected) + ")";
    }
    return {pass, detail};
}

Outcome stability_dichotomy() {
    SpectrumOptions so;
    std::vector<double> mins3, mins2;
    for (int n : {16, 32, 48}) {
        const EuclideanNormal<3> P(make_grid(ball_domain<3>(1.0), n), WeightField<3>::constant());
        mins3.push_back(stability_row(P, so).min_ratio);
    }
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(kLensA, Vec<2>::Zero(), kLensSigma);
    for (int n : {16, 32, 48}) {
        const DiscreteProblem<2> P(m, d, WeightField<2>::constant(), make_ray_grid(d, 4 * n, 4 * n), make_grid(d, n),
                                   xopts(0.01));
        mins2.push_back(stability_row(P, so).min_ratio);
    }
    const auto [lo, hi] = std::minmax_element(mins3.begin(), mins3.end());
    const double variation = (*hi - *lo) / *lo;
    const bool decreasing = mins2[1] < mins2[0] && mins2[2] < mins2[1];
    std::string detail = "3D euclidean min ratios";
    for (double v : mins3) detail += " " + fmt("%.4f", v);
    detail += " (variation " + fmt("%.2f%%", 100 * variation) + "); 2D lens min ratios";
    for (double v : mins2) detail += " " + fmt("%.4f", v);
    return {variation < 0.2 && decreasing, detail};
}

std::map<std::string, std::string> output_hashes(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& dir : std::filesystem::directory_iterator(root)) {
        std::ifstream is(dir.path() / "manifest.json");
        const auto m = nlohmann::json::parse(is);
        for (const auto& o : m["outputs"]) out[m["selector"].get<std::string>() + "/" + o["file"].get<std::string>()] = o["sha256"];
    }
    return out;
}

Outcome determinism() {
    const std::string common = "[metric]\nfamily = lens\namplitude = -0.5\nsigma = 0.25\n[domain]\ndim = 2\nradius = 1\n";
    const std::vector<std::string> configs{
        "[experiment]\nselector = adjoint-check\n[run]\nseed = 5\nworkers = 2\n" + common +
            "[flow]\nstep = 0.03\n[sphere]\nnodes = 64\n[grid]\nn = 24\n[rays]\nboundary = 32\nangles = 32\n[adjoint]\npairs = 4\ntolerance = 1\n",
        "[experiment]\nselector = invert\n[run]\nseed = 9\n" + common +
            "[flow]\nstep = 0.03\n[grid]\nn = 20\n[rays]\nboundary = 48\nangles = 48\n[phantom]\nkind = sobolev\nq = 1\n"
            "[invert]\nomega = 1e-4\nnoise = 0.05\n",
        "[experiment]\nselector = spectrum\n[run]\nseed = 3\n" + common +
            "[flow]\nstep = 0.03\n[spectrum]\nladder = 12, 16\nrandom_fields = 4\n",
        "[experiment]\nselector = conjugates\n" + common + "[conjugates]\nboundary = 4\nangles = 16\n",
    };
    const auto base = std::filesystem::temp_directory_path() / ("gxr_determinism_" + std::to_string(::getpid()));
    std::filesystem::remove_all(base);
    std::vector<std::map<std::string, std::string>> hashes;
    std::ostringstream sink;
    int failures = 0;
    for (int rep = 0; rep < 2; ++rep) {
        const auto root = base / std::to_string(rep);
        std::filesystem::create_directories(root);
        ::setenv("GXR_RUNS_DIR", root.c_str(), 1);
        for (std::size_t k = 0; k < configs.size(); ++k) {
            const auto path = base / ("c" + std::to_string(k) + ".cfg");
            std::ofstream(path) << configs[k];
            if (gxr::cli::run(path.string(), sink, sink) != 0) ++failures;
        }
        hashes.push_back(output_hashes(root));
    }
    std::filesystem::remove_all(base);
    const bool same = hashes[0] == hashes[1] && hashes[0].size() == configs.size();
    return {failures == 0 && same, std::to_string(hashes[0].size()) + " CSV outputs, hashes " + (same ? "identical" : "differ") +
                                       ", failed runs " + std::to_string(failures)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "euclidean_exactness", 1, euclidean_exactness},
        {2, "adjoint_identity", 30, adjoint_identity},
        {3, "normal_consistency", 120, normal_consistency},
        {4, "operator_order", 300, operator_order},
        {5, "conjugate_detection", 120, conjugate_detection},
        {6, "lemma_residuals", 120, lemma_residuals},
        {7, "artifact_order_gap", 1800, artifact_gap},
        {8, "tikhonov_rate", 900, tikhonov_rate},
        {9, "stability_dichotomy", 1800, stability_dichotomy},
        {10, "determinism", 600, determinism},
    };
    std::vector<int> chosen;
    for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!chosen.empty() && std::find(chosen.begin(), chosen.end(), c.id) == chosen.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = c.body();
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget;
        const bool pass = r.pass && in_time;
        if (!pass) ++failed;
        std::printf("%s criterion %d %s: %s; %.1f s (budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                    r.detail.c_str(), secs, c.budget, in_time ? "" : ", exceeded");
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
