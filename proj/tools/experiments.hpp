#pragma once

#include "config.hpp"

#include <gxr/conjugacy.hpp>
#include <gxr/xray.hpp>

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <ostream>
#include <random>

namespace gxr::cli {

using Json = nlohmann::ordered_json;

/// Output directory, produced files, warnings and summary values of one run.
struct Context {
    std::filesystem::path dir;
    std::vector<std::string> outputs;
    std::vector<std::string> warnings;
    Json summary = Json::object();
    std::ostream* log = nullptr;

    std::string file(const std::string& name) {
        outputs.push_back(name);
        return (dir / name).string();
    }
    void warn(const std::string& w) { warnings.push_back(w); }
    void note(const Diagnostics& d) {
        if (d.grazing_dropped) warn("grazing rays dropped: " + std::to_string(d.grazing_dropped));
        if (d.off_mask) warn("field queries off the grid mask: " + std::to_string(d.off_mask));
    }
    void say(const std::string& s) {
        if (log) *log << s << '\n';
    }
};

/// Resolved plan printed by describe.
struct Plan {
    std::vector<std::pair<std::string, std::string>> lines;
    double work = 0;
    void add(const std::string& k, const std::string& v) { lines.emplace_back(k, v); }
    void add(const std::string& k, double v);
};

std::string fmt(double v);

int dimension(const Config& c);
XrayOptions xray_options(const Config& c);
ConjugacyOptions conjugacy_options(const Config& c);
std::uint64_t seed(const Config& c);

template <int N> Vec<N> vec(const Config& c, const std::string& s, const std::string& k, const Vec<N>& fallback) {
    if (!c.has(s, k)) return fallback;
    const auto v = c.list(s, k);
    if (static_cast<int>(v.size()) != N)
        throw ConfigError("'" + k + "' needs " + std::to_string(N) + " components", c.line_of(s, k));
    Vec<N> out;
    for (int i = 0; i < N; ++i) out[i] = v[i];
    return out;
}

template <int N> DomainModel<N> domain(const Config& c) {
    c.require_section("domain");
    const std::string shape = c.choice("domain", "shape", {"ball", "ellipsoid"}, "ball");
    DomainModel<N> d;
    d.center = vec<N>(c, "domain", "center", Vec<N>::Zero());
    if (shape == "ball") {
        d.axes = Vec<N>::Constant(c.positive("domain", "radius", 1.0));
    } else {
        d.axes = vec<N>(c, "domain", "axes", Vec<N>::Ones());
        if (!(d.axes.array() > 0).all()) throw ConfigError("'axes' must be positive", c.line_of("domain", "axes"));
    }
    return d;
}

template <int N> WeightField<N> weight(const Config& c) {
    const std::string kind = c.choice("weight", "kind", {"constant", "position", "directional", "halfspace"}, "constant");
    WeightField<N> w;
    w.value = c.num("weight", "value", 1.0);
    if (kind == "position") {
        w.kind = WeightField<N>::Kind::position;
        w.center = vec<N>(c, "weight", "center", Vec<N>::Zero());
        w.r_inner = c.num("weight", "r_inner", w.r_inner);
        w.r_outer = c.num("weight", "r_outer", w.r_outer);
        if (!(w.r_outer > w.r_inner)) throw ConfigError("r_outer must exceed r_inner", c.line_of("weight", "r_outer"));
    } else if (kind == "directional") {
        w.kind = WeightField<N>::Kind::directional;
        w.axis = vec<N>(c, "weight", "axis", Vec<N>::UnitX());
        w.angle_inner = c.num("weight", "angle_inner", w.angle_inner);
        w.angle_outer = c.num("weight", "angle_outer", w.angle_outer);
        if (!(w.angle_outer > w.angle_inner))
            throw ConfigError("angle_outer must exceed angle_inner", c.line_of("weight", "angle_outer"));
    } else if (kind == "halfspace") {
        w.kind = WeightField<N>::Kind::halfspace;
        w.axis = vec<N>(c, "weight", "axis", Vec<N>::UnitX());
    }
    if (w.axis.norm() == 0) throw ConfigError("'axis' must be nonzero", c.line_of("weight", "axis"));
    return w;
}

/// Ray grid from a section: [boundary, angles] in 2D, [theta, phi, dtheta, dphi] in 3D.
template <int N> RayGrid<N> ray_grid(const Config& c, const DomainModel<N>& d, const std::string& s) {
    c.require_section(s);
    const double mu_min = c.positive("flow", "mu_min", 1e-3);
    auto count = [&](const std::string& k) {
        const long v = c.integer(s, k, -1);
        if (v < 1) throw ConfigError("'" + k + "' must be a positive integer", v == -1 ? c.section_line(s) : c.line_of(s, k));
        return static_cast<int>(v);
    };
    if constexpr (N == 2) {
        return make_ray_grid(d, count("boundary"), count("angles"), mu_min);
    } else {
        return make_ray_grid(d, count("theta"), count("phi"), count("dtheta"), count("dphi"), mu_min);
    }
}

template <int N> int grid_size(const Config& c, const std::string& s = "grid") {
    c.require_section(s);
    const long n = c.integer(s, "n", -1);
    if (n < 4) throw ConfigError("'n' must be an integer >= 4", n == -1 ? c.section_line(s) : c.line_of(s, "n"));
    return static_cast<int>(n);
}

/// Calls fn with the metric selected by [metric].
template <int N, class Fn> decltype(auto) with_metric(const Config& c, Fn&& fn) {
    c.require_section("metric");
    const std::string family = c.choice("metric", "family", {"euclidean", "lens", "sphere", "constant"});
    if (family == "lens") {
        const double a = c.num("metric", "amplitude");
        const double sigma = c.positive("metric", "sigma", 0.25);
        if (!(a > -1)) throw ConfigError("lens amplitude must exceed -1", c.line_of("metric", "amplitude"));
        return fn(gaussian_lens<N>(a, vec<N>(c, "metric", "center", Vec<N>::Zero()), sigma));
    }
    if (family == "sphere") return fn(round_sphere<N>());
    if (family == "constant") return fn(constant_speed<N>(c.positive("metric", "speed", 1.0)));
    return fn(Euclidean<N>{});
}

/// Indicator of a ball.
template <int N> struct BallIndicator {
    Vec<N> center;
    double radius;
    double operator()(const Vec<N>& x, Diagnostics&) const { return (x - center).norm() < radius ? 1.0 : 0.0; }
    std::optional<SupportBall<N>> support() const { return SupportBall<N>{center, radius}; }
};

/// Gaussian bumps from [phantom] centers / sigma / amplitude lists.
template <int N> GaussianField<N> gaussian_phantom(const Config& c) {
    const auto centers = c.list("phantom", "centers", std::vector<double>(N, 0.0));
    if (centers.size() % N) throw ConfigError("'centers' must hold whole points", c.line_of("phantom", "centers"));
    const std::size_t k = centers.size() / N;
    auto expand = [&](const std::string& key, double fallback) {
        auto v = c.list("phantom", key, {fallback});
        if (v.size() == 1) v.assign(k, v[0]);
        if (v.size() != k) throw ConfigError("'" + key + "' must have one entry per center", c.line_of("phantom", key));
        return v;
    };
    const auto sig = expand("sigma", 0.15), amp = expand("amplitude", 1.0);
    GaussianField<N> f;
    for (std::size_t i = 0; i < k; ++i) {
        if (!(sig[i] > 0)) throw ConfigError("'sigma' must be positive", c.line_of("phantom", "sigma"));
        Vec<N> x;
        for (int j = 0; j < N; ++j) x[j] = centers[i * N + j];
        f.bumps.push_back({amp[i], x, sig[i]});
    }
    return f;
}

// experiments
void plan_forward(const Config&, Plan&);
int run_forward(const Config&, Context&);
void plan_adjoint_check(const Config&, Plan&);
int run_adjoint_check(const Config&, Context&);
void plan_normal(const Config&, Plan&);
int run_normal(const Config&, Context&);
void plan_psf(const Config&, Plan&);
int run_psf(const Config&, Context&);
void plan_conjugates(const Config&, Plan&);
int run_conjugates(const Config&, Context&);
void plan_graph_test(const Config&, Plan&);
int run_graph_test(const Config&, Context&);
void plan_probe(const Config&, Plan&);
int run_probe(const Config&, Context&);
void plan_invert(const Config&, Plan&);
int run_invert(const Config&, Context&);
void plan_rate(const Config&, Plan&);
int run_rate(const Config&, Context&);
void plan_spectrum(const Config&, Plan&);
int run_spectrum(const Config&, Context&);

}  // namespace gxr::cli
