#pragma once

#include "boundary.hpp"

#include <boost/math/tools/roots.hpp>

#include <vector>

namespace gxr {

/// Point of the unit sphere bundle: chart position and g-unit velocity.
template <int N> struct PhaseState {
    Vec<N> x;
    Vec<N> v;
};

struct FlowOptions {
    double step = 1e-2;
    double rho_pad = 0.05;
    double mu_min = 1e-3;
    double max_time_factor = 50;
    double unit_speed_tol = 1e-8;
};

template <class M, int N = M::dim>
PhaseState<N> rk4_step(const M& m, const PhaseState<N>& s, double dt) {
    const Vec<N> k1x = s.v, k1v = m.acceleration(s.x, s.v);
    const Vec<N> x2 = s.x + 0.5 * dt * k1x, v2 = s.v + 0.5 * dt * k1v;
    const Vec<N> k2v = m.acceleration(x2, v2);
    const Vec<N> x3 = s.x + 0.5 * dt * v2, v3 = s.v + 0.5 * dt * k2v;
    const Vec<N> k3v = m.acceleration(x3, v3);
    const Vec<N> x4 = s.x + dt * v3, v4 = s.v + dt * k3v;
    const Vec<N> k4v = m.acceleration(x4, v4);
    PhaseState<N> out;
    out.x = s.x + dt / 6.0 * (k1x + 2.0 * v2 + 2.0 * v3 + v4);
    out.v = s.v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    return out;
}

template <class M, int N = M::dim> PhaseState<N> normalize(const M& m, PhaseState<N> s) {
    s.v /= g_norm<N>(m.metric(s.x), s.v);
    return s;
}

/// One RK4 step of the geodesic flow followed by unit-speed renormalization.
template <class M, int N = M::dim>
PhaseState<N> flow_step(const M& m, const PhaseState<N>& s, double dt) {
    return normalize(m, rk4_step(m, s, dt));
}

template <int N> struct StepResult {
    PhaseState<N> state;
    bool outside_extended = false;
};

/// Domain-aware step: flags a result outside the extended domain {rho < rho_pad}.
template <class M, int N = M::dim>
StepResult<N> flow_step(const M& m, const DomainModel<N>& d, const PhaseState<N>& s, double dt,
                        const FlowOptions& o) {
    StepResult<N> r{flow_step(m, s, dt), false};
    r.outside_extended = !(d.rho(r.state.x) < o.rho_pad);
    return r;
}

/// Flows for a fixed time with steps no longer than h, without domain checks.
template <class M, int N = M::dim>
PhaseState<N> flow_for_time(const M& m, PhaseState<N> s, double t, double h) {
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t) / h - 1e-12)));
    const double dt = t / n;
    for (int i = 0; i < n; ++i) s = flow_step(m, s, dt);
    return s;
}

/// Marches from s in direction sign (+1 forward, -1 backward) until the boundary, calling
/// seg(t0, s0, t1, s1) for each step; the final segment ends exactly on the boundary.
/// Returns the signed exit time.
template <class M, class Seg, int N = M::dim>
double march_to_exit(const M& m, const DomainModel<N>& d, const PhaseState<N>& s, int sign,
                     const FlowOptions& o, Seg&& seg) {
    const double h = o.step * sign;
    const double budget = o.max_time_factor * d.diameter();
    const double tol = d.boundary_tol;
    const double r0 = d.rho(s.x);
    if (r0 > tol) throw DomainError("geodesic start lies outside the domain");

    auto rho_after = [&](const PhaseState<N>& base, double tau) {
        return d.rho(rk4_step(m, base, sign * tau).x);
    };
    auto polish = [&](const PhaseState<N>& base, double a, double fa, double b, double fb) {
        if (fb <= tol && fb >= 0) return b;
        std::uintmax_t iters = 200;
        const auto root = boost::math::tools::toms748_solve(
            [&](double tau) { return rho_after(base, tau); }, a, b, fa, fb,
            boost::math::tools::eps_tolerance<double>(50), iters);
        const double lo = root.first, hi = root.second;
        return std::abs(rho_after(base, lo)) < std::abs(rho_after(base, hi)) ? lo : hi;
    };

    PhaseState<N> cur = s;
    double t = 0;
    if (r0 >= -tol) {
        // starting on the boundary: need an interior point before the first full step
        double probe = o.step;
        bool found = false;
        for (int j = 0; j < 40; ++j, probe *= 0.5) {
            if (rho_after(cur, probe) < 0) {
                found = true;
                break;
            }
        }
        if (!found) return 0.0;
        const double rh = rho_after(cur, o.step);
        if (rh >= 0) {
            const double tau = polish(cur, probe, rho_after(cur, probe), o.step, rh);
            const PhaseState<N> ex = normalize(m, rk4_step(m, cur, sign * tau));
            seg(0.0, cur, sign * tau, ex);
            return sign * tau;
        }
    }
    for (;;) {
        const PhaseState<N> next = flow_step(m, cur, h);
        const double rn = d.rho(next.x);
        if (rn >= 0) {
            const double r_cur = d.rho(cur.x);
            double tau;
            if (r_cur >= 0) {
                tau = 0;
            } else {
                tau = polish(cur, 0.0, r_cur, o.step, rho_after(cur, o.step));
            }
            const PhaseState<N> ex = normalize(m, rk4_step(m, cur, sign * tau));
            if (tau > 0) seg(t, cur, t + sign * tau, ex);
            return t + sign * tau;
        }
        seg(t, cur, t + h, next);
        cur = next;
        t += h;
        if (std::abs(t) > budget)
            throw TrappedGeodesicError("geodesic exceeded the trapped-ray time budget");
    }
}

/// tau_+ (forward, > 0) or tau_- (backward, < 0).
template <class M, int N = M::dim>
double exit_time(const M& m, const DomainModel<N>& d, const PhaseState<N>& s, int direction,
                 const FlowOptions& o) {
    return march_to_exit(m, d, s, direction >= 0 ? 1 : -1, o,
                         [](double, const PhaseState<N>&, double, const PhaseState<N>&) {});
}

template <int N> struct GeodesicTrace {
    std::vector<double> t;
    std::vector<PhaseState<N>> states;
    bool start_on_boundary = false;
    bool end_on_boundary = false;
};

/// Samples the geodesic from s forward to its exit time.
template <class M, int N = M::dim>
GeodesicTrace<N> trace_to_exit(const M& m, const DomainModel<N>& d, const PhaseState<N>& s,
                               const FlowOptions& o) {
    GeodesicTrace<N> tr;
    tr.t.push_back(0.0);
    tr.states.push_back(s);
    tr.start_on_boundary = std::abs(d.rho(s.x)) < d.boundary_tol;
    march_to_exit(m, d, s, 1, o, [&](double, const PhaseState<N>&, double t1, const PhaseState<N>& s1) {
        tr.t.push_back(t1);
        tr.states.push_back(s1);
    });
    tr.end_on_boundary = tr.states.size() > 1 && std::abs(d.rho(tr.states.back().x)) < d.boundary_tol;
    return tr;
}

/// Samples the geodesic for a fixed time span [0, t_end] with steps no longer than h.
template <class M, int N = M::dim>
GeodesicTrace<N> trace_for_time(const M& m, const PhaseState<N>& s, double t_end, double h) {
    const int n = std::max(1, static_cast<int>(std::ceil(t_end / h - 1e-12)));
    const double dt = t_end / n;
    GeodesicTrace<N> tr;
    tr.t.reserve(n + 1);
    tr.states.reserve(n + 1);
    tr.t.push_back(0.0);
    tr.states.push_back(s);
    PhaseState<N> cur = s;
    for (int i = 1; i <= n; ++i) {
        cur = flow_step(m, cur, dt);
        tr.t.push_back(i * dt);
        tr.states.push_back(cur);
    }
    return tr;
}

/// F(v): the inward boundary ray reached by flowing backward to tau_-.
template <class M, int N = M::dim>
BoundaryRay<N> footpoint(const M& m, const DomainModel<N>& d, const PhaseState<N>& s, const FlowOptions& o) {
    PhaseState<N> ex = s;
    march_to_exit(m, d, s, -1, o, [&](double, const PhaseState<N>&, double, const PhaseState<N>& s1) { ex = s1; });
    BoundaryRay<N> r;
    r.x = ex.x;
    r.w = ex.v;
    const Mat<N> g = m.metric(ex.x);
    Vec<N> n = g.ldlt().solve(d.grad_rho(ex.x));
    n /= g_norm<N>(g, n);
    r.mu = -r.w.dot(g * n);
    r.params = ray_params(m, d, r.x, r.w);
    return r;
}

/// exp_x(w) = gamma_{x, w/|w|}(|w|_g); throws RangeError when leaving the extended domain.
template <class M, int N = M::dim>
Vec<N> exp_map(const M& m, const DomainModel<N>& d, const Vec<N>& x, const Vec<N>& w, const FlowOptions& o) {
    const double len = g_norm<N>(m.metric(x), w);
    if (len == 0) return x;
    PhaseState<N> s{x, w / len};
    const int n = std::max(1, static_cast<int>(std::ceil(len / o.step - 1e-12)));
    const double dt = len / n;
    for (int i = 0; i < n; ++i) {
        const StepResult<N> r = flow_step(m, d, s, dt, o);
        if (r.outside_extended) throw RangeError("exp_map: geodesic left the extended domain");
        s = r.state;
    }
    return s.x;
}

/// Position and velocity on a step segment by cubic Hermite interpolation, theta in [0, 1].
template <int N>
void hermite(const PhaseState<N>& a, const PhaseState<N>& b, double len, double theta, Vec<N>& x, Vec<N>& v) {
    const double t2 = theta * theta, t3 = t2 * theta;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + theta, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    x = h00 * a.x + h10 * len * a.v + h01 * b.x + h11 * len * b.v;
    const double d00 = 6 * t2 - 6 * theta, d10 = 3 * t2 - 4 * theta + 1, d01 = -d00, d11 = 3 * t2 - 2 * theta;
    v = (d00 * a.x + d01 * b.x) / len + d10 * a.v + d11 * b.v;
}

/// Phase state plus the two variational blocks (position / velocity perturbations).
template <int N> struct AugmentedState {
    PhaseState<N> s;
    Eigen::Matrix<double, N, 2 * N> dx;
    Eigen::Matrix<double, N, 2 * N> dv;
};

template <class M, int N = M::dim>
AugmentedState<N> augmented_step(const M& m, const AugmentedState<N>& a, double dt) {
    using Blk = Eigen::Matrix<double, N, 2 * N>;
    auto rhs = [&](const Vec<N>& x, const Vec<N>& v, const Blk& dx, const Blk& dv, Vec<N>& ax, Blk& ddv) {
        Mat<N> jx, jv;
        m.acceleration_jacobian(x, v, jx, jv);
        ax = m.acceleration(x, v);
        ddv = jx * dx + jv * dv;
    };
    Vec<N> a1, a2, a3, a4;
    Blk q1, q2, q3, q4;
    const auto& s = a.s;
    rhs(s.x, s.v, a.dx, a.dv, a1, q1);
    const Vec<N> x2 = s.x + 0.5 * dt * s.v, v2 = s.v + 0.5 * dt * a1;
    const Blk dx2 = a.dx + 0.5 * dt * a.dv, dv2 = a.dv + 0.5 * dt * q1;
    rhs(x2, v2, dx2, dv2, a2, q2);
    const Vec<N> x3 = s.x + 0.5 * dt * v2, v3 = s.v + 0.5 * dt * a2;
    const Blk dx3 = a.dx + 0.5 * dt * dv2, dv3 = a.dv + 0.5 * dt * q2;
    rhs(x3, v3, dx3, dv3, a3, q3);
    const Vec<N> x4 = s.x + dt * v3, v4 = s.v + dt * a3;
    const Blk dx4 = a.dx + dt * dv3, dv4 = a.dv + dt * q3;
    rhs(x4, v4, dx4, dv4, a4, q4);
    AugmentedState<N> out;
    out.s.x = s.x + dt / 6.0 * (s.v + 2.0 * v2 + 2.0 * v3 + v4);
    out.s.v = s.v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    out.s = normalize(m, out.s);
    out.dx = a.dx + dt / 6.0 * (a.dv + 2.0 * dv2 + 2.0 * dv3 + dv4);
    out.dv = a.dv + dt / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
    return out;
}

/// Gamma^k_ij v^i w^j at x.
template <class M, int N = M::dim> Mat<N> christoffel_apply(const M& m, const Vec<N>& x, const Vec<N>& v, const Mat<N>& w) {
    const Christoffel<N> gam = christoffel_from_jet<N>(m.jet(x, 1));
    Mat<N> out;
    for (int c = 0; c < N; ++c) out.col(c) = contract<N>(gam, v, w.col(c));
    return out;
}

/// Jacobi fields along a trace. Block A: J(0) = 0, DJ(0) = I. Block B: J(0) = I, DJ(0) = 0.
template <int N> struct JacobiFrame {
    std::vector<double> t;
    std::vector<AugmentedState<N>> raw;
    std::vector<Mat<N>> JA, dJA, JB, dJB;
};

template <class M, int N = M::dim>
void jacobi_from_raw(const M& m, const AugmentedState<N>& a, Mat<N>& ja, Mat<N>& dja, Mat<N>& jb, Mat<N>& djb) {
    const Mat<N> dxa = a.dx.template leftCols<N>(), dxb = a.dx.template rightCols<N>();
    const Mat<N> dva = a.dv.template leftCols<N>(), dvb = a.dv.template rightCols<N>();
    ja = dxa;
    jb = dxb;
    dja = dva + christoffel_apply(m, a.s.x, a.s.v, dxa);
    djb = dvb + christoffel_apply(m, a.s.x, a.s.v, dxb);
}

template <class M, int N = M::dim> AugmentedState<N> jacobi_initial(const M& m, const PhaseState<N>& s) {
    AugmentedState<N> a;
    a.s = s;
    a.dx.setZero();
    a.dx.template rightCols<N>().setIdentity();
    a.dv.template leftCols<N>().setIdentity();
    a.dv.template rightCols<N>() = -christoffel_apply(m, s.x, s.v, Mat<N>(Mat<N>::Identity()));
    return a;
}

template <class M, int N = M::dim> JacobiFrame<N> jacobi_propagate(const M& m, const GeodesicTrace<N>& tr) {
    if (tr.states.empty()) throw PreconditionError("jacobi_propagate: empty trace");
    JacobiFrame<N> f;
    const std::size_t n = tr.t.size();
    f.t = tr.t;
    f.raw.resize(n);
    f.JA.resize(n);
    f.dJA.resize(n);
    f.JB.resize(n);
    f.dJB.resize(n);
    f.raw[0] = jacobi_initial(m, tr.states[0]);
    for (std::size_t k = 1; k < n; ++k) f.raw[k] = augmented_step(m, f.raw[k - 1], tr.t[k] - tr.t[k - 1]);
    for (std::size_t k = 0; k < n; ++k) {
        if (!f.raw[k].s.x.allFinite()) throw DomainError("jacobi_propagate: non-finite curvature data");
        jacobi_from_raw(m, f.raw[k], f.JA[k], f.dJA[k], f.JB[k], f.dJB[k]);
    }
    return f;
}

/// Symplectic pairing of the two Jacobi blocks; constant in t and equal to g(x_0).
template <class M, int N = M::dim> Mat<N> wronskian(const M& m, const JacobiFrame<N>& f, std::size_t k) {
    const Mat<N> g = m.metric(f.raw[k].s.x);
    return f.dJA[k].transpose() * g * f.JB[k] - f.JA[k].transpose() * g * f.dJB[k];
}

}  // namespace gxr
