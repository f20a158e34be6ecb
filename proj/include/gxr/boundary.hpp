#pragma once

#include "manifold.hpp"

#include <vector>

namespace gxr {

/// Chart parameters of a boundary point: beta in 2D, (theta, phi) in 3D.
template <int N> using BoundaryParams = Vec<N - 1>;

/// Chart parameters of an inward ray: boundary params followed by direction angles.
template <int N> using RayParams = Vec<2 * N - 2>;

template <int N> Vec<N> boundary_point(const DomainModel<N>& d, const BoundaryParams<N>& b) {
    Vec<N> u;
    if constexpr (N == 2) {
        u << std::cos(b[0]), std::sin(b[0]);
    } else {
        u << std::sin(b[0]) * std::cos(b[1]), std::sin(b[0]) * std::sin(b[1]), std::cos(b[0]);
    }
    return d.center + (d.axes.array() * u.array()).matrix();
}

/// Columns are the coordinate tangent vectors d x / d b_i.
template <int N>
Eigen::Matrix<double, N, N - 1> boundary_tangents(const DomainModel<N>& d, const BoundaryParams<N>& b) {
    Eigen::Matrix<double, N, N - 1> t;
    if constexpr (N == 2) {
        t << -std::sin(b[0]), std::cos(b[0]);
    } else {
        const double st = std::sin(b[0]), ct = std::cos(b[0]), sp = std::sin(b[1]), cp = std::cos(b[1]);
        t.col(0) << ct * cp, ct * sp, -st;
        t.col(1) << -st * sp, st * cp, 0.0;
    }
    return d.axes.asDiagonal() * t;
}

template <int N> BoundaryParams<N> boundary_params(const DomainModel<N>& d, const Vec<N>& x) {
    const Vec<N> u = ((x - d.center).array() / d.axes.array()).matrix();
    BoundaryParams<N> b;
    auto wrap = [](double a) { return a < 0 ? a + 2 * pi : a; };
    if constexpr (N == 2) {
        b[0] = wrap(std::atan2(u[1], u[0]));
    } else {
        b[0] = std::atan2(std::hypot(u[0], u[1]), u[2]);
        b[1] = wrap(std::atan2(u[1], u[0]));
    }
    return b;
}

/// g-orthonormal frame at a boundary point: column 0 is the inward normal, the rest span
/// the tangent space.
template <class M, int N = M::dim>
Mat<N> inward_frame(const M& m, const DomainModel<N>& d, const BoundaryParams<N>& b) {
    const Vec<N> x = boundary_point(d, b);
    const Mat<N> g = m.metric(x);
    Vec<N> n = g.ldlt().solve(d.grad_rho(x));
    n /= g_norm<N>(g, n);
    Mat<N> e;
    e.col(0) = -n;
    const auto t = boundary_tangents(d, b);
    Vec<N> t1 = t.col(0) - t.col(0).dot(g * n) * n;
    t1 /= g_norm<N>(g, t1);
    e.col(1) = t1;
    if constexpr (N == 3) {
        const Vec<3> a = g * e.col(0), c = g * t1;
        Vec<3> t2 = g.ldlt().solve(Vec<3>(a.cross(c)));
        t2 /= g_norm<3>(g, t2);
        e.col(2) = t2;
    }
    return e;
}

/// Unit direction in the inward frame from direction angles: alpha in 2D, (theta, phi) in 3D.
template <int N> Vec<N> frame_direction(const Vec<N - 1>& a) {
    Vec<N> u;
    if constexpr (N == 2) {
        u << std::cos(a[0]), std::sin(a[0]);
    } else {
        u << std::cos(a[0]), std::sin(a[0]) * std::cos(a[1]), std::sin(a[0]) * std::sin(a[1]);
    }
    return u;
}

template <int N> Vec<N - 1> frame_angles(const Vec<N>& u) {
    Vec<N - 1> a;
    if constexpr (N == 2) {
        a[0] = std::atan2(u[1], u[0]);
    } else {
        a[0] = std::atan2(std::hypot(u[1], u[2]), u[0]);
        const double p = std::atan2(u[2], u[1]);
        a[1] = p < 0 ? p + 2 * pi : p;
    }
    return a;
}

/// Boundary g-area (length in 2D) density with respect to d b.
template <class M, int N = M::dim>
double boundary_area_density(const M& m, const DomainModel<N>& d, const BoundaryParams<N>& b) {
    const auto t = boundary_tangents(d, b);
    const Mat<N> g = m.metric(boundary_point(d, b));
    return std::sqrt((t.transpose() * g * t).determinant());
}

/// Inward boundary ray w in the inward-pointing part of the boundary sphere bundle.
template <int N> struct BoundaryRay {
    Vec<N> x;
    Vec<N> w;
    double mu = 0;
    RayParams<N> params;
};

template <class M, int N = M::dim>
BoundaryRay<N> make_boundary_ray(const M& m, const DomainModel<N>& d, const RayParams<N>& p) {
    BoundaryRay<N> r;
    const BoundaryParams<N> b = p.template head<N - 1>();
    const Vec<N - 1> a = p.template tail<N - 1>();
    r.x = boundary_point(d, b);
    const Vec<N> u = frame_direction<N>(a);
    r.w = inward_frame(m, d, b) * u;
    r.mu = u[0];
    r.params = p;
    return r;
}

/// Recovers chart parameters of an inward unit vector at a boundary point.
template <class M, int N = M::dim>
RayParams<N> ray_params(const M& m, const DomainModel<N>& d, const Vec<N>& x, const Vec<N>& w) {
    const BoundaryParams<N> b = boundary_params(d, x);
    const Mat<N> e = inward_frame(m, d, b);
    const Vec<N> u = e.transpose() * m.metric(boundary_point(d, b)) * w;
    RayParams<N> p;
    p.template head<N - 1>() = b;
    p.template tail<N - 1>() = frame_angles<N>(u);
    return p;
}

/// One axis of a midpoint parameter grid.
struct Axis {
    double lo = 0, hi = 1;
    int count = 1;
    bool periodic = false;
    double step() const { return (hi - lo) / count; }
    double node(int i) const { return lo + (i + 0.5) * step(); }
};

/// Midpoint grid over the inward boundary bundle minus the grazing band mu < mu_min.
template <int N> struct RayGrid {
    static constexpr int P = 2 * N - 2;
    DomainModel<N> domain;
    std::array<Axis, P> axes;
    double mu_min = 1e-3;

    std::size_t size() const {
        std::size_t s = 1;
        for (const auto& a : axes) s *= a.count;
        return s;
    }

    RayParams<N> params(std::size_t index) const {
        RayParams<N> p;
        for (int k = P - 1; k >= 0; --k) {
            p[k] = axes[k].node(static_cast<int>(index % axes[k].count));
            index /= axes[k].count;
        }
        return p;
    }

    std::size_t flat_index(const std::array<int, P>& idx) const {
        std::size_t s = 0;
        for (int k = 0; k < P; ++k) s = s * axes[k].count + idx[k];
        return s;
    }

    /// Santalo quadrature weight mu d(boundary area) d(direction) of a node.
    template <class M> double weight(const M& m, const RayParams<N>& p) const {
        const BoundaryParams<N> b = p.template head<N - 1>();
        double w = boundary_area_density(m, domain, b);
        for (const auto& a : axes) w *= a.step();
        if constexpr (N == 2) {
            w *= std::cos(p[1]);
        } else {
            w *= std::cos(p[2]) * std::sin(p[2]);
        }
        return w;
    }

    /// Multilinear interpolation stencil: fills flat indices and weights, returns stencil size.
    int stencil(const RayParams<N>& p, std::array<std::size_t, (1 << P)>& idx,
                std::array<double, (1 << P)>& wt) const {
        std::array<int, P> i0, i1;
        std::array<double, P> t;
        for (int k = 0; k < P; ++k) {
            const Axis& a = axes[k];
            double u = (p[k] - a.lo) / a.step() - 0.5;
            if (a.periodic) {
                const double fl = std::floor(u);
                int j = static_cast<int>(fl);
                t[k] = u - fl;
                j %= a.count;
                if (j < 0) j += a.count;
                i0[k] = j;
                i1[k] = (j + 1) % a.count;
            } else {
                u = std::clamp(u, 0.0, static_cast<double>(a.count - 1));
                int j = std::min(static_cast<int>(u), a.count - 2 < 0 ? 0 : a.count - 2);
                t[k] = a.count == 1 ? 0.0 : u - j;
                i0[k] = j;
                i1[k] = std::min(j + 1, a.count - 1);
            }
        }
        for (int c = 0; c < (1 << P); ++c) {
            std::array<int, P> ii;
            double w = 1;
            for (int k = 0; k < P; ++k) {
                const bool hi = (c >> k) & 1;
                ii[k] = hi ? i1[k] : i0[k];
                w *= hi ? t[k] : 1 - t[k];
            }
            idx[c] = flat_index(ii);
            wt[c] = w;
        }
        return 1 << P;
    }
};

/// Standard ray grid: boundary params uniform, direction angles covering mu >= mu_min.
inline RayGrid<2> make_ray_grid(const DomainModel<2>& d, int n_boundary, int n_angle, double mu_min = 1e-3) {
    RayGrid<2> r;
    r.domain = d;
    r.mu_min = mu_min;
    const double amax = std::acos(mu_min);
    r.axes[0] = {0.0, 2 * pi, n_boundary, true};
    r.axes[1] = {-amax, amax, n_angle, false};
    return r;
}

inline RayGrid<3> make_ray_grid(const DomainModel<3>& d, int n_theta, int n_phi, int n_dtheta, int n_dphi,
                                double mu_min = 1e-3) {
    RayGrid<3> r;
    r.domain = d;
    r.mu_min = mu_min;
    r.axes[0] = {0.0, pi, n_theta, false};
    r.axes[1] = {0.0, 2 * pi, n_phi, true};
    r.axes[2] = {0.0, std::acos(mu_min), n_dtheta, false};
    r.axes[3] = {0.0, 2 * pi, n_dphi, true};
    return r;
}

}  // namespace gxr
