#pragma once

#include "conjugacy.hpp"
#include "xray.hpp"

#include <boost/math/distributions/students_t.hpp>

namespace gxr {

/// Complex wave packet exp(-|x - center|^2 / (2 width^2)) * exp(i lambda x . xi).
template <int N> struct WavePacket {
    Vec<N> center;
    Vec<N> xi;
    double width;
    double lambda;
    double cutoff = 6.0;

    std::complex<double> operator()(const Vec<N>& x, Diagnostics&) const { return (*this)(x); }
    std::complex<double> operator()(const Vec<N>& x) const {
        const double env = std::exp(-(x - center).squaredNorm() / (2 * width * width));
        if (env < 1e-300) return 0.0;
        return std::polar(env, lambda * x.dot(xi));
    }
    std::optional<SupportBall<N>> support() const { return SupportBall<N>{center, cutoff * width}; }
};

template <int N> struct ProbeSpec {
    Vec<N> x0 = Vec<N>::Zero();
    Vec<N> xi0 = Vec<N>::UnitX();
    std::vector<double> ladder{8, 16, 32, 64};
    double width = 0.1;
    double roi_factor = 3.0;
    double cutoff = 6.0;
    double roi_spacing = 0;
    double artifact_spacing = 0;
    int sphere_nodes = 0;
    double nodes_per_radian = 0;

    double spacing() const { return roi_spacing > 0 ? roi_spacing : width / 2; }
    double image_spacing() const { return artifact_spacing > 0 ? artifact_spacing : spacing(); }
    double roi_radius() const { return roi_factor * width; }

    /// Sphere-rule size resolving the angular width 1/(lambda width) of the packet's fiber integrand.
    int nodes_for(double lambda) const {
        if (sphere_nodes > 0) return sphere_nodes;
        const double per_rad = nodes_per_radian > 0 ? nodes_per_radian : 8 * lambda * width;
        const double spacing = 1.0 / std::max(per_rad, 1.0);
        auto even = [](double c) { return 2 * static_cast<int>(std::ceil(c / 2)); };
        if constexpr (N == 2) return std::max(256, even(2 * pi / spacing));
        else {
            const double lw = lambda * width;
            const double count = nodes_per_radian > 0 ? 4 * pi / (spacing * spacing) : 32 * lw * lw;
            return std::max(1024, even(count));
        }
    }

    /// Throws on invalid specs; returns warnings for admissible but weak ones.
    std::vector<std::string> validate(const DomainModel<N>& d) const {
        std::vector<std::string> warn;
        if (ladder.size() < 2) throw PreconditionError("probe: ladder needs at least two frequencies");
        for (std::size_t i = 0; i < ladder.size(); ++i) {
            if (!(ladder[i] > 0)) throw PreconditionError("probe: frequencies must be positive");
            if (i && !(ladder[i] > ladder[i - 1])) throw PreconditionError("probe: ladder must be increasing");
        }
        if (!(width > 0)) throw PreconditionError("probe: envelope width must be positive");
        if (roi_spacing < 0 || artifact_spacing < 0) throw PreconditionError("probe: lattice spacings must be nonnegative");
        if (std::abs(xi0.norm() - 1) > 1e-12) throw PreconditionError("probe: xi0 must be a unit covector");
        if (!(d.rho(x0) < 0)) throw PreconditionError("probe: carrier point outside the domain");
        for (int k = 0; k < N; ++k)
            for (int sgn : {-1, 1}) {
                Vec<N> e = Vec<N>::Zero();
                e[k] = sgn * roi_radius();
                if (!(d.rho(x0 + e) < 0)) throw PreconditionError("probe: envelope region leaves the domain");
            }
        if (ladder.back() / ladder.front() < 10) warn.push_back("probe: frequency ladder spans less than one decade");
        return warn;
    }
};

/// Log-log least squares fit amplitude ~ C lambda^slope.
struct ExponentFit {
    std::vector<double> lambdas;
    std::vector<double> amplitudes;
    double slope = 0;
    double intercept = 0;
    double residual = 0;
    double half_width = 0;
    bool conclusive = false;
    static constexpr double residual_limit = 0.05;
};

inline ExponentFit fit_exponent(const std::vector<double>& lambdas, const std::vector<double>& amps) {
    if (lambdas.size() != amps.size() || lambdas.size() < 2) throw PreconditionError("fit_exponent: need >= 2 samples");
    ExponentFit f;
    f.lambdas = lambdas;
    f.amplitudes = amps;
    const std::size_t n = lambdas.size();
    double mx = 0, my = 0;
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(amps[i] > 0)) {
            f.slope = -std::numeric_limits<double>::infinity();
            f.residual = std::numeric_limits<double>::infinity();
            return f;
        }
        lx[i] = std::log(lambdas[i]);
        ly[i] = std::log(amps[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (f.intercept + f.slope * lx[i]);
        sse += r * r;
    }
    f.residual = std::sqrt(sse / n);
    if (n > 2) {
        const boost::math::students_t dist(static_cast<double>(n - 2));
        const double se = std::sqrt(sse / (n - 2) / sxx);
        f.half_width = boost::math::quantile(boost::math::complement(dist, 0.025)) * se;
    } else {
        f.half_width = std::numeric_limits<double>::infinity();
    }
    f.conclusive = f.residual < ExponentFit::residual_limit;
    return f;
}

/// Lattice points with the given spacing inside the ball, clipped to the domain interior.
template <int N>
std::vector<Vec<N>> roi_lattice(const DomainModel<N>& d, const Vec<N>& center, double radius, double spacing) {
    std::vector<Vec<N>> out;
    const int r = static_cast<int>(std::floor(radius / spacing));
    std::array<int, N> idx;
    idx.fill(-r);
    for (;;) {
        Vec<N> x = center;
        for (int k = 0; k < N; ++k) x[k] += idx[k] * spacing;
        if ((x - center).norm() <= radius && d.rho(x) < 0) out.push_back(x);
        int k = 0;
        while (k < N && ++idx[k] > r) idx[k++] = -r;
        if (k == N) break;
    }
    return out;
}

struct RoiMeasure {
    double amplitude = 0;
    std::vector<double> centroid;
    std::size_t points = 0;
};

/// L^2(g) norm of N_phi f over lattice points and the |N f|^2-weighted centroid.
template <class M, class F, int N = M::dim>
RoiMeasure roi_measure(const M& m, const DomainModel<N>& d, const F& f, const WeightField<N>& phi,
                       const std::vector<Vec<N>>& pts, double spacing, const XrayOptions& o,
                       Diagnostics* diag = nullptr) {
    const auto vals = normal_direct_at(m, d, f, phi, pts, o, diag);
    RoiMeasure r;
    r.points = pts.size();
    Vec<N> c = Vec<N>::Zero();
    double s = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double w = std::norm(vals[i]) * m.volume_density(pts[i]);
        s += w;
        c += w * pts[i];
    }
    r.amplitude = std::sqrt(s * std::pow(spacing, N));
    if (s > 0) c /= s;
    r.centroid.assign(c.data(), c.data() + N);
    return r;
}

template <int N> struct ProbeResult {
    ExponentFit fit;
    std::vector<RoiMeasure> measures;
    std::vector<std::string> warnings;
};

/// Decay of N_phi applied to wave packets at x0, measured on the 3-width ball.
template <class M, int N = M::dim>
ProbeResult<N> order_probe(const M& m, const DomainModel<N>& d, const WeightField<N>& phi, const ProbeSpec<N>& spec,
                           const XrayOptions& o) {
    ProbeResult<N> res;
    res.warnings = spec.validate(d);
    const auto pts = roi_lattice(d, spec.x0, spec.roi_radius(), spec.spacing());
    std::vector<double> amps;
    for (double lam : spec.ladder) {
        XrayOptions oo = o;
        oo.sphere_nodes = spec.nodes_for(lam);
        const WavePacket<N> f{spec.x0, spec.xi0, spec.width, lam, spec.cutoff};
        res.measures.push_back(roi_measure(m, d, f, phi, pts, spec.spacing(), oo));
        amps.push_back(res.measures.back().amplitude);
    }
    res.fit = fit_exponent(spec.ladder, amps);
    if (!res.fit.conclusive) res.warnings.push_back("probe: fit residual above threshold, slope inconclusive");
    return res;
}

/// Predicted location of the conjugate image of (x0, xi0).
template <int N> struct ArtifactTarget {
    PhaseState<N> base;
    ConjugateRecord<N> record;
    double alignment = 0;
};

template <class M, int N = M::dim>
std::optional<ArtifactTarget<N>> predict_artifact(const M& m, const DomainModel<N>& d, const Vec<N>& x0, const Vec<N>& xi0,
                                                  const FlowOptions& fo, const ConjugacyOptions& co = {}) {
    const Mat<N> g = m.metric(x0);
    auto record_for = [&](const Vec<N>& dir) -> std::optional<ArtifactTarget<N>> {
        const Vec<N> v = dir / g_norm<N>(g, dir);
        const PhaseState<N> s{x0, v};
        ConjugacyOptions all = co;
        all.first_only = false;
        std::optional<ArtifactTarget<N>> out;
        for (const auto& r : records_from_trace(m, trace_to_exit(m, d, s, fo), all)) {
            if (r.k != 1) continue;
            const Vec<N> eta = r.eta.col(0);
            const double a = std::abs(eta.normalized().dot(xi0.normalized()));
            if (!out || a > out->alignment + 1e-12) out = ArtifactTarget<N>{s, r, a};
        }
        return out;
    };
    std::optional<ArtifactTarget<N>> best;
    auto consider = [&](const std::optional<ArtifactTarget<N>>& c) {
        if (c && (!best || c->alignment > best->alignment + 1e-12 ||
                  (std::abs(c->alignment - best->alignment) <= 1e-12 && c->record.s < best->record.s)))
            best = c;
    };
    if constexpr (N == 2) {
        const Vec<2> perp(-xi0[1], xi0[0]);
        consider(record_for(perp));
        consider(record_for(-perp));
    } else {
        // directions annihilated by xi0 form a circle; maximize alignment of the kernel covector with xi0
        const Vec<3> n = xi0.normalized();
        Vec<3> e1 = n.unitOrthogonal();
        Vec<3> e2 = n.cross(e1);
        auto dir = [&](double a) { return Vec<3>(std::cos(a) * e1 + std::sin(a) * e2); };
        const int samples = 360;
        std::vector<double> score(samples, -1);
        for (int i = 0; i < samples; ++i) {
            const auto c = record_for(dir(2 * pi * i / samples));
            if (c) score[i] = c->alignment;
        }
        for (int i = 0; i < samples; ++i) {
            const double s0 = score[i], sl = score[(i + samples - 1) % samples], sr = score[(i + 1) % samples];
            if (s0 < 0 || s0 < sl || s0 < sr) continue;
            std::uintmax_t iters = 100;
            const double a0 = 2 * pi * (i - 1) / samples, a1 = 2 * pi * (i + 1) / samples;
            const auto opt = boost::math::tools::brent_find_minima(
                [&](double a) {
                    const auto c = record_for(dir(a));
                    return c ? -c->alignment : 1.0;
                },
                a0, a1, 40, iters);
            consider(record_for(dir(opt.first)));
        }
    }
    return best;
}

template <int N> struct ArtifactResult {
    ProbeResult<N> primary;
    ProbeResult<N> artifact;
    ExponentFit ratio;
    ArtifactTarget<N> target;
    std::vector<double> centroid_offsets;
};

/// Primary (at x0) and artifact (at the predicted conjugate image) decay, and their ratio.
template <class M, int N = M::dim>
ArtifactResult<N> artifact_probe(const M& m, const DomainModel<N>& d, const WeightField<N>& phi, const ProbeSpec<N>& spec,
                                 const XrayOptions& o, const ConjugacyOptions& co = {}) {
    ArtifactResult<N> res;
    res.primary.warnings = spec.validate(d);
    const auto target = predict_artifact(m, d, spec.x0, spec.xi0, o.flow, co);
    if (!target || target->alignment < 0.999)
        throw PreconditionError("artifact_probe: no order-1 conjugate image of (x0, xi0) inside the domain");
    res.target = *target;
    const Vec<N> xt = target->record.conj.x;
    if ((xt - spec.x0).norm() < 2 * spec.roi_radius())
        throw PreconditionError("artifact_probe: conjugate image region overlaps the probe support");
    const auto p_pts = roi_lattice(d, spec.x0, spec.roi_radius(), spec.spacing());
    const auto a_pts = roi_lattice(d, xt, spec.roi_radius(), spec.image_spacing());
    std::vector<double> pa, aa, ratio;
    for (double lam : spec.ladder) {
        XrayOptions oo = o;
        oo.sphere_nodes = spec.nodes_for(lam);
        const WavePacket<N> f{spec.x0, spec.xi0, spec.width, lam, spec.cutoff};
        res.primary.measures.push_back(roi_measure(m, d, f, phi, p_pts, spec.spacing(), oo));
        res.artifact.measures.push_back(roi_measure(m, d, f, phi, a_pts, spec.image_spacing(), oo));
        pa.push_back(res.primary.measures.back().amplitude);
        aa.push_back(res.artifact.measures.back().amplitude);
        ratio.push_back(aa.back() / pa.back());
        Vec<N> c;
        for (int k = 0; k < N; ++k) c[k] = res.artifact.measures.back().centroid[k];
        res.centroid_offsets.push_back((c - xt).norm());
    }
    res.primary.fit = fit_exponent(spec.ladder, pa);
    res.artifact.fit = fit_exponent(spec.ladder, aa);
    res.ratio = fit_exponent(spec.ladder, ratio);
    return res;
}

struct PsfFit {
    std::vector<double> radii;
    std::vector<double> profile;
    ExponentFit fit;
};

/// Radial decay of N_phi applied to a bump of width h at x0, fitted over [4h, r_max].
template <class M, int N = M::dim>
PsfFit psf_fit(const M& m, const DomainModel<N>& d, const WeightField<N>& phi, const std::type_identity_t<Vec<N>>& x0, double h,
               const XrayOptions& o, double r_max = 0.2, int radii = 12, int directions = 8) {
    const double r_min = 4 * h;
    if (!(r_max >= 2 * r_min)) throw PreconditionError("psf_fit: fit window [4h, r_max] too small");
    GaussianField<N> f;
    f.bumps.push_back({1.0, x0, h});
    const SphereRule<N> dirs = sphere_rule<N>(directions, 0.25);
    PsfFit out;
    std::vector<Vec<N>> pts;
    for (int i = 0; i < radii; ++i) {
        const double r = r_min * std::pow(r_max / r_min, static_cast<double>(i) / (radii - 1));
        out.radii.push_back(r);
        for (const auto& u : dirs.nodes) {
            const Vec<N> x = x0 + r * u;
            if (!(d.rho(x) < 0)) throw PreconditionError("psf_fit: sampling circle leaves the domain");
            pts.push_back(x);
        }
    }
    const auto vals = normal_direct_at(m, d, f, phi, pts, o);
    for (int i = 0; i < radii; ++i) {
        double s = 0;
        for (int j = 0; j < directions; ++j) s += vals[i * directions + j];
        out.profile.push_back(s / directions);
    }
    out.fit = fit_exponent(out.radii, out.profile);
    return out;
}

inline void write_fit_csv(const std::string& path, const std::vector<double>& lambdas,
                          const std::vector<std::pair<std::string, std::vector<double>>>& cols,
                          const std::vector<std::pair<std::string, ExponentFit>>& fits) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw Error("cannot open " + path);
    std::fprintf(fp, "lambda");
    for (const auto& c : cols) std::fprintf(fp, ",%s", c.first.c_str());
    for (const auto& f : fits) std::fprintf(fp, ",%s_slope,%s_residual,%s_halfwidth", f.first.c_str(), f.first.c_str(), f.first.c_str());
    std::fprintf(fp, "\n");
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        std::fprintf(fp, "%.17g", lambdas[i]);
        for (const auto& c : cols) std::fprintf(fp, ",%.17g", c.second[i]);
        for (const auto& f : fits)
            std::fprintf(fp, ",%.17g,%.17g,%.17g", f.second.slope, f.second.residual, f.second.half_width);
        std::fprintf(fp, "\n");
    }
    std::fclose(fp);
}

}  // namespace gxr
