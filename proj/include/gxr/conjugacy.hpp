#pragma once

#include "flow.hpp"
#include "grid.hpp"

#include <boost/math/tools/minima.hpp>

#include <optional>

namespace gxr {

struct ConjugacyOptions {
    double tol_rank = 1e-6;
    double dip_threshold = 0.05;
    double flag_threshold = 1e-3;
    int brent_bits = 52;
    bool first_only = true;
    double stencil_radius = 0.25;
    double base_offset = 0.05;
    double fd_step = 1e-5;
    double tol_graph = 1e-4;
    int workers = 1;
};

template <int N> using KernelBasis = Eigen::Matrix<double, N, Eigen::Dynamic>;

/// Zero of the reduced Jacobi block along a trace.
template <int N> struct ConjugateTime {
    double s = 0;
    int k = 0;
    bool converged = true;
    Vec<N - 1> singular;
    double scale = 1;
    KernelBasis<N> kernel;
    AugmentedState<N> state;
};

template <int N> struct ConjugateRecord {
    PhaseState<N> base;
    PhaseState<N> conj;
    double s = 0;
    int k = 0;
    bool converged = true;
    Vec<N - 1> singular;
    double scale = 1;
    KernelBasis<N> kernel;
    KernelBasis<N> eta;
    KernelBasis<N> eta_tilde;
};

/// g-orthonormal basis of the g-orthogonal complement of v at a point with metric g.
template <int N> Eigen::Matrix<double, N, N - 1> normal_basis(const Mat<N>& g, const Vec<N>& v) {
    const Mat<N> e = orthonormal_frame<N>(g);
    const Vec<N> u = (e.inverse() * v).normalized();
    Eigen::HouseholderQR<Mat<N>> qr(Mat<N>(u * Eigen::Matrix<double, 1, N>::Unit(0)));
    const Mat<N> q = qr.householderQ();
    return e * q.template rightCols<N - 1>();
}

namespace detail {

template <class M, int N = M::dim> struct Reduced {
    Eigen::Matrix<double, N - 1, N - 1> mat;
    double scale;
};

template <class M, int N = M::dim>
Reduced<M, N> reduced_block(const M& m, const Eigen::Matrix<double, N, N - 1>& p0, const Mat<N>& e0,
                            const AugmentedState<N>& a, double t) {
    Mat<N> ja, dja, jb, djb;
    jacobi_from_raw(m, a, ja, dja, jb, djb);
    const Mat<N> g = m.metric(a.s.x);
    const auto pt = normal_basis<N>(g, a.s.v);
    Reduced<M, N> r;
    r.mat = pt.transpose() * g * ja * p0;
    const Mat<N> et = orthonormal_frame<N>(g);
    const Mat<N> full = et.inverse() * ja * e0;
    r.scale = std::max(std::abs(t), Eigen::JacobiSVD<Mat<N>>(full).singularValues()[0]);
    return r;
}

template <class M, int N = M::dim>
double sigma_min(const M& m, const Eigen::Matrix<double, N, N - 1>& p0, const Mat<N>& e0,
                 const AugmentedState<N>& a, double t) {
    const auto r = reduced_block<M, N>(m, p0, e0, a, t);
    return Eigen::JacobiSVD<Eigen::Matrix<double, N - 1, N - 1>>(r.mat).singularValues()[N - 2] / r.scale;
}

}  // namespace detail

/// Conjugate times along a trace: zeros of the smallest singular value of the J(0)=0 block
/// restricted to the orthogonal complement of the velocity.
template <class M, int N = M::dim>
std::vector<ConjugateTime<N>> conjugate_times(const M& m, const GeodesicTrace<N>& tr, const JacobiFrame<N>& f,
                                              const ConjugacyOptions& o = {}) {
    std::vector<ConjugateTime<N>> out;
    const std::size_t n = f.t.size();
    if (n < 3) return out;
    const PhaseState<N>& s0 = tr.states[0];
    const Mat<N> g0 = m.metric(s0.x);
    const Mat<N> e0 = orthonormal_frame<N>(g0);
    const auto p0 = normal_basis<N>(g0, s0.v);
    std::vector<double> sig(n, 1.0);
    for (std::size_t k = 1; k < n; ++k) sig[k] = detail::sigma_min<M, N>(m, p0, e0, f.raw[k], f.t[k]);
    auto state_at = [&](std::size_t k, double t) {
        // restep from the nearest sample not after t
        std::size_t j = k;
        while (j > 0 && f.t[j] > t) --j;
        while (j + 1 < n && f.t[j + 1] <= t) ++j;
        return t == f.t[j] ? f.raw[j] : augmented_step(m, f.raw[j], t - f.t[j]);
    };
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (!(sig[k] <= sig[k - 1] && sig[k] <= sig[k + 1] && sig[k] < o.dip_threshold)) continue;
        const double a = f.t[k - 1], b = f.t[k + 1];
        std::uintmax_t iters = 200;
        const auto best = boost::math::tools::brent_find_minima(
            [&](double t) { return detail::sigma_min<M, N>(m, p0, e0, state_at(k, t), t); }, a, b, o.brent_bits, iters);
        const double ts = best.first;
        ConjugateTime<N> c;
        c.s = ts;
        c.state = state_at(k, ts);
        const auto red = detail::reduced_block<M, N>(m, p0, e0, c.state, ts);
        Eigen::JacobiSVD<Eigen::Matrix<double, N - 1, N - 1>> svd(red.mat, Eigen::ComputeFullV);
        c.singular = svd.singularValues();
        c.scale = red.scale;
        int k_rank = 0;
        for (int i = 0; i < N - 1; ++i) k_rank += c.singular[i] < o.tol_rank * c.scale;
        if (k_rank == 0) {
            int k_flag = 0;
            for (int i = 0; i < N - 1; ++i) k_flag += c.singular[i] < o.flag_threshold * c.scale;
            if (k_flag == 0) continue;
            k_rank = k_flag;
            c.converged = false;
        }
        c.k = k_rank;
        c.kernel = p0 * svd.matrixV().rightCols(k_rank);
        out.push_back(c);
        if (o.first_only) break;
        ++k;
    }
    return out;
}

/// eta = g(x) a at the base, eta~ = g(x~) DJ(s) a at the conjugate point.
template <class M, int N = M::dim> void covector_map(const M& m, ConjugateRecord<N>& r, const AugmentedState<N>& at_s) {
    Mat<N> ja, dja, jb, djb;
    jacobi_from_raw(m, at_s, ja, dja, jb, djb);
    r.eta = m.metric(r.base.x) * r.kernel;
    r.eta_tilde = m.metric(r.conj.x) * (dja * r.kernel);
}

template <class M, int N = M::dim>
std::vector<ConjugateRecord<N>> records_from_trace(const M& m, const GeodesicTrace<N>& tr, const ConjugacyOptions& o) {
    const auto f = jacobi_propagate(m, tr);
    std::vector<ConjugateRecord<N>> out;
    for (const auto& c : conjugate_times(m, tr, f, o)) {
        ConjugateRecord<N> r;
        r.base = tr.states[0];
        r.conj = c.state.s;
        r.s = c.s;
        r.k = c.k;
        r.converged = c.converged;
        r.singular = c.singular;
        r.scale = c.scale;
        r.kernel = c.kernel;
        covector_map(m, r, c.state);
        out.push_back(r);
    }
    return out;
}

/// First conjugate record within time t_max, ignoring any domain.
template <class M, int N = M::dim>
std::optional<ConjugateRecord<N>> first_conjugate(const M& m, const PhaseState<N>& s, double t_max, double h,
                                                  ConjugacyOptions o = {}) {
    o.first_only = true;
    const auto recs = records_from_trace(m, trace_for_time(m, s, t_max, h), o);
    if (recs.empty()) return std::nullopt;
    return recs.front();
}

/// First conjugate record before the geodesic exits the domain.
template <class M, int N = M::dim>
std::optional<ConjugateRecord<N>> first_conjugate(const M& m, const DomainModel<N>& d, const PhaseState<N>& s,
                                                  const FlowOptions& fo, ConjugacyOptions o = {}) {
    o.first_only = true;
    const auto recs = records_from_trace(m, trace_to_exit(m, d, s, fo), o);
    if (recs.empty()) return std::nullopt;
    return recs.front();
}

/// Residuals of the common-xi least squares problem for a conjugate pair.
struct EtaLemmaReport {
    double residual_base = 0;
    double residual_conj = 0;
    double step = 0;
    bool ok = false;
    std::string message;
};

namespace detail {

template <class M, int N = M::dim>
Eigen::Matrix<double, 2 * N, 1> footpoint_ambient(const M& m, const DomainModel<N>& d, const Eigen::Matrix<double, 2 * N, 1>& z,
                                                  const FlowOptions& fo) {
    const Vec<N> x = z.template head<N>();
    Vec<N> w = z.template tail<N>();
    w /= g_norm<N>(m.metric(x), w);
    const BoundaryRay<N> r = footpoint(m, d, PhaseState<N>{x, w}, fo);
    Eigen::Matrix<double, 2 * N, 1> out;
    out << r.x, r.w;
    return out;
}

template <class M, int N = M::dim>
std::optional<Eigen::Matrix<double, 2 * N, 2 * N>> footpoint_jacobian(const M& m, const DomainModel<N>& d,
                                                                     const PhaseState<N>& s, double step,
                                                                     const FlowOptions& fo) {
    Eigen::Matrix<double, 2 * N, 1> z;
    z << s.x, s.v;
    for (int k = 0; k < N; ++k) {
        Vec<N> e = Vec<N>::Zero();
        e[k] = step;
        if (!(d.rho(s.x + e) < 0) || !(d.rho(s.x - e) < 0)) return std::nullopt;
    }
    Eigen::Matrix<double, 2 * N, 2 * N> j;
    for (int k = 0; k < 2 * N; ++k) {
        auto zp = z, zm = z;
        zp[k] += step;
        zm[k] -= step;
        j.col(k) = (footpoint_ambient(m, d, zp, fo) - footpoint_ambient(m, d, zm, fo)) / (2 * step);
    }
    return j;
}

}  // namespace detail

/// Checks whether a single xi satisfies D pi^T eta = DF^T xi at both ends of the pair.
template <class M, int N = M::dim>
EtaLemmaReport etalem_check(const M& m, const DomainModel<N>& d, const PhaseState<N>& v, const PhaseState<N>& vt,
                            const Vec<N>& eta, const Vec<N>& eta_tilde, const FlowOptions& fo,
                            const ConjugacyOptions& o = {}) {
    EtaLemmaReport rep;
    double step = o.fd_step;
    for (int attempt = 0; attempt <= 3; ++attempt, step *= 0.1) {
        const auto ja = detail::footpoint_jacobian(m, d, v, step, fo);
        const auto jb = detail::footpoint_jacobian(m, d, vt, step, fo);
        if (!ja || !jb) continue;
        Eigen::Matrix<double, 4 * N, 2 * N> a;
        a << ja->transpose(), jb->transpose();
        Eigen::Matrix<double, 4 * N, 1> b = Eigen::Matrix<double, 4 * N, 1>::Zero();
        b.template segment<N>(0) = eta;
        b.template segment<N>(2 * N) = eta_tilde;
        const Eigen::Matrix<double, 2 * N, 1> xi = a.completeOrthogonalDecomposition().solve(b);
        const Eigen::Matrix<double, 4 * N, 1> r = a * xi - b;
        rep.residual_base = r.template head<2 * N>().norm() / eta.norm();
        rep.residual_conj = r.template tail<2 * N>().norm() / eta_tilde.norm();
        rep.step = step;
        rep.ok = true;
        return rep;
    }
    rep.message = "finite-difference stencil leaves the domain after 3 shrinks";
    return rep;
}

template <class M, int N = M::dim>
EtaLemmaReport etalem_check(const M& m, const DomainModel<N>& d, const ConjugateRecord<N>& r, const FlowOptions& fo,
                            const ConjugacyOptions& o = {}) {
    return etalem_check(m, d, r.base, r.conj, Vec<N>(r.eta.col(0)), Vec<N>(r.eta_tilde.col(0)), fo, o);
}

template <int N> struct LocusEntry {
    RayParams<N> params;
    ConjugateRecord<N> record;
    bool regular = true;
    std::vector<int> neighbor_orders;
    EtaLemmaReport lemma;
    double graph_margin_left = -1;
    double graph_margin_right = -1;
    bool graph_pass = false;
};

template <int N> struct LocusSample {
    std::vector<LocusEntry<N>> entries;
    std::size_t rays_scanned = 0;
    bool partial = false;
    double singular_rate() const {
        if (entries.empty()) return 0;
        std::size_t s = 0;
        for (const auto& e : entries) s += !e.regular;
        return static_cast<double>(s) / entries.size();
    }
};

/// Base phase state of a fan ray: the inward boundary ray advanced by a fixed offset.
template <class M, int N = M::dim>
PhaseState<N> fan_base(const M& m, const DomainModel<N>& d, const RayParams<N>& p, double offset, const FlowOptions& fo) {
    const BoundaryRay<N> r = make_boundary_ray(m, d, p);
    return flow_for_time(m, PhaseState<N>{r.x, r.w}, offset, fo.step);
}

/// First conjugate records over a fan of inward rays, with a neighbor stencil probing regularity.
template <class M, int N = M::dim>
LocusSample<N> locus_scan(const M& m, const DomainModel<N>& d, const RayGrid<N>& fan, const FlowOptions& fo,
                          const ConjugacyOptions& o = {}, std::size_t max_rays = 0) {
    LocusSample<N> out;
    std::size_t total = fan.size();
    if (max_rays && total > max_rays) {
        total = max_rays;
        out.partial = true;
    }
    out.rays_scanned = total;
    auto order_at = [&](const RayParams<N>& p) {
        const auto r = first_conjugate(m, d, fan_base(m, d, p, o.base_offset, fo), fo, o);
        return r ? r->k : 0;
    };
    std::vector<std::optional<LocusEntry<N>>> found(total);
    parallel_for(total, o.workers, [&](std::size_t i, Diagnostics&) {
        const RayParams<N> p = fan.params(i);
        const auto r = first_conjugate(m, d, fan_base(m, d, p, o.base_offset, fo), fo, o);
        if (!r) return;
        LocusEntry<N> e;
        e.params = p;
        e.record = *r;
        for (int k = 0; k < 2 * N - 2; ++k)
            for (int sgn : {-1, 1}) {
                RayParams<N> q = p;
                q[k] += sgn * o.stencil_radius * fan.axes[k].step();
                const int kk = order_at(q);
                e.neighbor_orders.push_back(kk);
                if (kk != r->k) e.regular = false;
            }
        found[i] = e;
    });
    for (auto& f : found)
        if (f) out.entries.push_back(std::move(*f));
    return out;
}

namespace detail {

/// (x, direction angles, log scale) -> left (x, eta) and right (x~, eta~) for order-1 records.
template <class M, int N = M::dim> struct GraphChart {
    const M& m;
    ConjugateRecord<N> base;
    double h;
    Eigen::Matrix<double, N, N - 1> q;
    Vec<N> u0;
    Vec<N> a0;

    GraphChart(const M& mm, const ConjugateRecord<N>& b, double hh) : m(mm), base(b), h(hh) {
        const Mat<N> e = orthonormal_frame<N>(m.metric(b.base.x));
        u0 = (e.inverse() * b.base.v).normalized();
        Eigen::HouseholderQR<Mat<N>> qr(Mat<N>(u0 * Eigen::Matrix<double, 1, N>::Unit(0)));
        const Mat<N> qq = qr.householderQ();
        q = qq.template rightCols<N - 1>();
        a0 = b.kernel.col(0);
    }

    std::optional<std::pair<Eigen::Matrix<double, 2 * N, 1>, Eigen::Matrix<double, 2 * N, 1>>> eval(
        const Eigen::Matrix<double, 2 * N, 1>& p, const ConjugacyOptions& o) const {
        const Vec<N> x = p.template head<N>();
        const Vec<N - 1> th = p.template segment<N - 1>(N);
        const double lam = p[2 * N - 1];
        const Vec<N> u = (u0 + q * th).normalized();
        const Vec<N> v = orthonormal_frame<N>(m.metric(x)) * u;
        ConjugacyOptions all = o;
        all.first_only = false;
        std::optional<ConjugateRecord<N>> r;
        for (const auto& c : records_from_trace(m, trace_for_time(m, PhaseState<N>{x, v}, base.s * 1.5 + 4 * h, h), all))
            if (!r || std::abs(c.s - base.s) < std::abs(r->s - base.s)) r = c;
        if (!r || r->k != 1) return std::nullopt;
        const double sgn = r->kernel.col(0).dot(a0) >= 0 ? 1.0 : -1.0;
        Eigen::Matrix<double, 2 * N, 1> left, right;
        left << x, sgn * std::exp(lam) * r->eta.col(0);
        right << r->conj.x, sgn * std::exp(lam) * r->eta_tilde.col(0);
        return std::make_pair(left, right);
    }
};

}  // namespace detail

struct GraphReport {
    double margin_left = 0;
    double margin_right = 0;
    bool pass = false;
    bool degenerate = false;
};

/// Finite-difference Jacobians of the two projections of the order-1 canonical relation.
template <class M, int N = M::dim>
GraphReport graph_test(const M& m, const ConjugateRecord<N>& rec, double h, const ConjugacyOptions& o = {},
                       double log_scale = 0.0) {
    GraphReport rep;
    if (rec.k != 1) {
        rep.degenerate = true;
        return rep;
    }
    detail::GraphChart<M, N> chart(m, rec, h);
    Eigen::Matrix<double, 2 * N, 1> p0 = Eigen::Matrix<double, 2 * N, 1>::Zero();
    p0.template head<N>() = rec.base.x;
    p0[2 * N - 1] = log_scale;
    Eigen::Matrix<double, 2 * N, 2 * N> jl, jr;
    const double step = o.fd_step * 10;
    for (int k = 0; k < 2 * N; ++k) {
        auto pp = p0, pm = p0;
        pp[k] += step;
        pm[k] -= step;
        const auto a = chart.eval(pp, o), b = chart.eval(pm, o);
        if (!a || !b) {
            rep.degenerate = true;
            return rep;
        }
        jl.col(k) = (a->first - b->first) / (2 * step);
        jr.col(k) = (a->second - b->second) / (2 * step);
    }
    const auto sl = Eigen::JacobiSVD<Eigen::Matrix<double, 2 * N, 2 * N>>(jl).singularValues();
    const auto sr = Eigen::JacobiSVD<Eigen::Matrix<double, 2 * N, 2 * N>>(jr).singularValues();
    rep.margin_left = sl[2 * N - 1] / sl[0];
    rep.margin_right = sr[2 * N - 1] / sr[0];
    rep.pass = rep.margin_left > o.tol_graph && rep.margin_right > o.tol_graph;
    return rep;
}

/// Runs the canonical-graph test on every order-1 entry of a locus sample.
template <class M, int N = M::dim>
void graph_test(const M& m, LocusSample<N>& sample, double h, const ConjugacyOptions& o = {}) {
    parallel_for(sample.entries.size(), o.workers, [&](std::size_t i, Diagnostics&) {
        auto& e = sample.entries[i];
        const GraphReport r = graph_test(m, e.record, h, o);
        e.graph_margin_left = r.margin_left;
        e.graph_margin_right = r.margin_right;
        e.graph_pass = r.pass;
    });
}

template <int N> void write_locus_csv(const LocusSample<N>& s, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw Error("cannot open " + path);
    auto cols = [&](const char* p, int n) {
        for (int i = 0; i < n; ++i) std::fprintf(fp, "%s%d,", p, i);
    };
    cols("ray", 2 * N - 2);
    cols("x", N);
    cols("v", N);
    cols("xt", N);
    cols("vt", N);
    std::fprintf(fp, "s,k,regular,converged,");
    cols("sigma", N - 1);
    cols("eta", N);
    cols("etat", N);
    std::fprintf(fp, "residual_base,residual_conj,graph_left,graph_right,graph_pass\n");
    for (const auto& e : s.entries) {
        const auto& r = e.record;
        auto put = [&](const auto& v) {
            for (int i = 0; i < v.size(); ++i) std::fprintf(fp, "%.17g,", v[i]);
        };
        put(e.params);
        put(r.base.x);
        put(r.base.v);
        put(r.conj.x);
        put(r.conj.v);
        std::fprintf(fp, "%.17g,%d,%d,%d,", r.s, r.k, e.regular ? 1 : 0, r.converged ? 1 : 0);
        put(r.singular);
        put(Vec<N>(r.eta.col(0)));
        put(Vec<N>(r.eta_tilde.col(0)));
        std::fprintf(fp, "%.17g,%.17g,%.17g,%.17g,%d\n", e.lemma.residual_base, e.lemma.residual_conj, e.graph_margin_left,
                     e.graph_margin_right, e.graph_pass ? 1 : 0);
    }
    std::fclose(fp);
}

}  // namespace gxr
