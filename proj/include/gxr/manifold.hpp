#pragma once

#include "core.hpp"

#include <functional>
#include <string>
#include <vector>

namespace gxr {

/// Metric tensor with first and (optionally) second coordinate derivatives.
/// dg[k] = d g / d x^k, d2g[k][l] = d^2 g / d x^k d x^l.
template <int N> struct MetricJet {
    Mat<N> g;
    std::array<Mat<N>, N> dg;
    std::array<std::array<Mat<N>, N>, N> d2g;
};

/// gamma[k](i, j) = Gamma^k_ij.
template <int N> using Christoffel = std::array<Mat<N>, N>;

/// dgamma[m][k](i, j) = d Gamma^k_ij / d x^m.
template <int N> using ChristoffelDerivative = std::array<Christoffel<N>, N>;

template <int N> Christoffel<N> christoffel_from_jet(const MetricJet<N>& j) {
    const Mat<N> ginv = j.g.inverse();
    Christoffel<N> gam;
    for (int k = 0; k < N; ++k) {
        gam[k].setZero();
        for (int i = 0; i < N; ++i)
            for (int jj = 0; jj < N; ++jj) {
                double s = 0;
                for (int l = 0; l < N; ++l)
                    s += ginv(k, l) * (j.dg[i](l, jj) + j.dg[jj](l, i) - j.dg[l](i, jj));
                gam[k](i, jj) = 0.5 * s;
            }
    }
    return gam;
}

template <int N> ChristoffelDerivative<N> christoffel_derivative_from_jet(const MetricJet<N>& j) {
    const Mat<N> ginv = j.g.inverse();
    ChristoffelDerivative<N> out;
    for (int m = 0; m < N; ++m) {
        const Mat<N> dginv = -ginv * j.dg[m] * ginv;
        for (int k = 0; k < N; ++k) {
            out[m][k].setZero();
            for (int i = 0; i < N; ++i)
                for (int jj = 0; jj < N; ++jj) {
                    double s = 0;
                    for (int l = 0; l < N; ++l) {
                        const double first = j.dg[i](l, jj) + j.dg[jj](l, i) - j.dg[l](i, jj);
                        const double second =
                            j.d2g[m][i](l, jj) + j.d2g[m][jj](l, i) - j.d2g[m][l](i, jj);
                        s += dginv(k, l) * first + ginv(k, l) * second;
                    }
                    out[m][k](i, jj) = 0.5 * s;
                }
        }
    }
    return out;
}

/// Contraction Gamma^k_ij a^i b^j.
template <int N> Vec<N> contract(const Christoffel<N>& gam, const Vec<N>& a, const Vec<N>& b) {
    Vec<N> out;
    for (int k = 0; k < N; ++k) out[k] = a.dot(gam[k] * b);
    return out;
}

/// Flat metric g = identity.
template <int N> struct Euclidean {
    static constexpr int dim = N;

    std::string family() const { return "euclidean"; }
    Mat<N> metric(const Vec<N>&) const { return Mat<N>::Identity(); }
    double volume_density(const Vec<N>&) const { return 1.0; }

    MetricJet<N> jet(const Vec<N>&, int = 2) const {
        MetricJet<N> j;
        j.g.setIdentity();
        for (auto& d : j.dg) d.setZero();
        for (auto& row : j.d2g)
            for (auto& d : row) d.setZero();
        return j;
    }

    Vec<N> acceleration(const Vec<N>&, const Vec<N>&) const { return Vec<N>::Zero(); }

    void acceleration_jacobian(const Vec<N>&, const Vec<N>&, Mat<N>& ax, Mat<N>& av) const {
        ax.setZero();
        av.setZero();
    }
};

/// Sound speed c(x) = 1 + sum_j A_j exp(-|x - x0_j|^2 / (2 sigma_j^2)).
template <int N> struct GaussianLens {
    struct Bump {
        double amplitude;
        Vec<N> center;
        double sigma;
    };
    std::vector<Bump> bumps;

    void evaluate(const Vec<N>& x, double& c, Vec<N>& grad, Mat<N>& hess) const {
        c = 1.0;
        grad.setZero();
        hess.setZero();
        for (const auto& b : bumps) {
            const Vec<N> r = x - b.center;
            const double s2 = b.sigma * b.sigma;
            const double e = b.amplitude * std::exp(-r.squaredNorm() / (2 * s2));
            c += e;
            grad -= e * r / s2;
            hess += e * (r * r.transpose() / (s2 * s2) - Mat<N>::Identity() / s2);
        }
    }
    double value(const Vec<N>& x) const {
        double c = 1.0;
        for (const auto& b : bumps)
            c += b.amplitude * std::exp(-(x - b.center).squaredNorm() / (2 * b.sigma * b.sigma));
        return c;
    }
};

/// Constant sound speed c0.
template <int N> struct ConstantSpeed {
    double c0 = 1.0;
    void evaluate(const Vec<N>&, double& c, Vec<N>& grad, Mat<N>& hess) const {
        c = c0;
        grad.setZero();
        hess.setZero();
    }
    double value(const Vec<N>&) const { return c0; }
};

/// c(x) = (1 + |x|^2) / 2, i.e. the stereographic round sphere g = 4 / (1 + |x|^2)^2 delta.
template <int N> struct RoundSphereSpeed {
    void evaluate(const Vec<N>& x, double& c, Vec<N>& grad, Mat<N>& hess) const {
        c = 0.5 * (1.0 + x.squaredNorm());
        grad = x;
        hess.setIdentity();
    }
    double value(const Vec<N>& x) const { return 0.5 * (1.0 + x.squaredNorm()); }
};

/// Conformal metric g = c(x)^{-2} delta for a speed field c > 0.
template <int N, class Speed> struct Conformal {
    static constexpr int dim = N;
    Speed speed;

    std::string family() const { return "conformal"; }

    Mat<N> metric(const Vec<N>& x) const {
        const double c = speed.value(x);
        return Mat<N>::Identity() / (c * c);
    }

    double volume_density(const Vec<N>& x) const { return std::pow(speed.value(x), -N); }

    MetricJet<N> jet(const Vec<N>& x, int order = 2) const {
        double c;
        Vec<N> gc;
        Mat<N> hc;
        speed.evaluate(x, c, gc, hc);
        MetricJet<N> j;
        const Mat<N> id = Mat<N>::Identity();
        j.g = id / (c * c);
        for (int k = 0; k < N; ++k) j.dg[k] = -2.0 * gc[k] / (c * c * c) * id;
        for (int k = 0; k < N; ++k)
            for (int l = 0; l < N; ++l)
                j.d2g[k][l] = order < 2 ? Mat<N>::Zero()
                                        : ((6.0 * gc[k] * gc[l] / (c * c * c * c) -
                                            2.0 * hc(k, l) / (c * c * c)) *
                                           id).eval();
        return j;
    }

    /// u = -log c gives g = e^{2u} delta and  x'' = -2 (du.v) v + |v|^2 du.
    Vec<N> acceleration(const Vec<N>& x, const Vec<N>& v) const {
        double c;
        Vec<N> gc;
        Mat<N> hc;
        speed.evaluate(x, c, gc, hc);
        const Vec<N> du = -gc / c;
        return -2.0 * du.dot(v) * v + v.squaredNorm() * du;
    }

    void acceleration_jacobian(const Vec<N>& x, const Vec<N>& v, Mat<N>& ax, Mat<N>& av) const {
        double c;
        Vec<N> gc;
        Mat<N> hc;
        speed.evaluate(x, c, gc, hc);
        const Vec<N> du = -gc / c;
        const Mat<N> hu = -hc / c + gc * gc.transpose() / (c * c);
        const double vv = v.squaredNorm();
        ax = -2.0 * v * (hu * v).transpose() + vv * hu;
        av = -2.0 * (du.dot(v) * Mat<N>::Identity() + v * du.transpose()) +
             2.0 * du * v.transpose();
    }
};

/// Metric given by a user callback returning the jet up to the requested order.
template <int N> struct GeneralMetric {
    static constexpr int dim = N;
    std::function<MetricJet<N>(const Vec<N>&, int)> field;

    std::string family() const { return "general"; }
    Mat<N> metric(const Vec<N>& x) const { return field(x, 0).g; }
    double volume_density(const Vec<N>& x) const { return std::sqrt(metric(x).determinant()); }
    MetricJet<N> jet(const Vec<N>& x, int order = 2) const { return field(x, order); }

    Vec<N> acceleration(const Vec<N>& x, const Vec<N>& v) const {
        return -contract<N>(christoffel_from_jet<N>(field(x, 1)), v, v);
    }

    void acceleration_jacobian(const Vec<N>& x, const Vec<N>& v, Mat<N>& ax, Mat<N>& av) const {
        const MetricJet<N> j = field(x, 2);
        const Christoffel<N> gam = christoffel_from_jet<N>(j);
        const ChristoffelDerivative<N> dgam = christoffel_derivative_from_jet<N>(j);
        for (int k = 0; k < N; ++k) {
            av.row(k) = -2.0 * (gam[k] * v).transpose();
            for (int m = 0; m < N; ++m) ax(k, m) = -v.dot(dgam[m][k] * v);
        }
    }
};

template <int N> using LensMetric = Conformal<N, GaussianLens<N>>;
template <int N> using SphereMetric = Conformal<N, RoundSphereSpeed<N>>;
template <int N> using ConstantMetric = Conformal<N, ConstantSpeed<N>>;

template <int N> LensMetric<N> gaussian_lens(double amplitude, const Vec<N>& center, double sigma) {
    LensMetric<N> m;
    m.speed.bumps.push_back({amplitude, center, sigma});
    return m;
}

template <int N> SphereMetric<N> round_sphere() { return {}; }

template <int N> ConstantMetric<N> constant_speed(double c0) {
    ConstantMetric<N> m;
    m.speed.c0 = c0;
    return m;
}

/// Ellipsoidal domain {rho < 0} with rho(x) = sum ((x - c)_i / a_i)^2 - 1.
template <int N> struct DomainModel {
    Vec<N> center = Vec<N>::Zero();
    Vec<N> axes = Vec<N>::Ones();
    double boundary_tol = 1e-9;

    std::string shape() const {
        const bool round = (axes.array() == axes[0]).all();
        if (round) return N == 2 ? "disk" : "ball";
        return N == 2 ? "ellipse" : "ellipsoid";
    }

    double rho(const Vec<N>& x) const {
        return ((x - center).array() / axes.array()).square().sum() - 1.0;
    }
    Vec<N> grad_rho(const Vec<N>& x) const {
        return (2.0 * (x - center).array() / axes.array().square()).matrix();
    }
    Mat<N> hess_rho(const Vec<N>&) const {
        return (2.0 / axes.array().square()).matrix().asDiagonal();
    }
    bool inside(const Vec<N>& x) const { return rho(x) < 0; }
    bool on_boundary(const Vec<N>& x) const { return std::abs(rho(x)) < boundary_tol; }
    double diameter() const { return 2.0 * axes.maxCoeff(); }
    /// Largest half-extent of the bounding box about the chart origin.
    double half_extent() const { return (center.cwiseAbs() + axes).maxCoeff(); }
};

template <int N> DomainModel<N> ball_domain(double radius, const Vec<N>& center = Vec<N>::Zero()) {
    DomainModel<N> d;
    d.center = center;
    d.axes = Vec<N>::Constant(radius);
    return d;
}

inline DomainModel<2> ellipse_domain(double a, double b) {
    DomainModel<2> d;
    d.axes = Vec<2>(a, b);
    return d;
}

namespace detail {
template <int N, class M> void require_in_domain(const DomainModel<N>& d, const Vec<N>& x) {
    if (!(d.rho(x) <= d.boundary_tol))
        throw DomainError("point outside the closed domain");
}
}  // namespace detail

template <class M, int N = M::dim> Mat<N> metric_at(const M& m, const DomainModel<N>& d, const Vec<N>& x) {
    detail::require_in_domain<N, M>(d, x);
    return m.metric(x);
}

template <class M, int N = M::dim>
Christoffel<N> christoffel_at(const M& m, const DomainModel<N>& d, const Vec<N>& x) {
    detail::require_in_domain<N, M>(d, x);
    return christoffel_from_jet<N>(m.jet(x, 1));
}

/// Lowers an index: vector -> covector.
template <class M, int N = M::dim>
Vec<N> flat(const M& m, const DomainModel<N>& d, const Vec<N>& x, const Vec<N>& v) {
    return metric_at(m, d, x) * v;
}

/// Raises an index: covector -> vector.
template <class M, int N = M::dim>
Vec<N> sharp(const M& m, const DomainModel<N>& d, const Vec<N>& x, const Vec<N>& xi) {
    return metric_at(m, d, x).ldlt().solve(xi);
}

template <int N> double g_norm(const Mat<N>& g, const Vec<N>& v) { return std::sqrt(v.dot(g * v)); }

/// Outward g-unit normal at a boundary point.
template <class M, int N = M::dim>
Vec<N> boundary_normal(const DomainModel<N>& d, const M& m, const Vec<N>& x) {
    if (!d.on_boundary(x)) throw PreconditionError("boundary_normal: point is not on the boundary");
    const Mat<N> g = m.metric(x);
    const Vec<N> n = g.ldlt().solve(d.grad_rho(x));
    return n / g_norm<N>(g, n);
}

/// Symmetric square root inverse of g: columns form a g-orthonormal frame.
template <int N> Mat<N> orthonormal_frame(const Mat<N>& g) {
    Eigen::SelfAdjointEigenSolver<Mat<N>> es(g);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

struct ConvexityCertificate {
    bool pass = false;
    double min_curvature = 0;
    int samples = 0;
};

/// Samples the second fundamental form of the boundary via the covariant Hessian of rho
/// restricted to the tangent space; strict convexity needs it positive definite.
template <class M, int N = M::dim>
ConvexityCertificate convexity_certificate(const M& m, const DomainModel<N>& d, int samples = 1000) {
    ConvexityCertificate cert;
    cert.min_curvature = std::numeric_limits<double>::infinity();
    const int nphi = N == 2 ? samples : static_cast<int>(std::ceil(std::sqrt(samples * 2.0)));
    const int ntheta = N == 2 ? 1 : (samples + nphi - 1) / nphi;
    for (int it = 0; it < ntheta; ++it)
        for (int ip = 0; ip < nphi && cert.samples < samples; ++ip) {
            Vec<N> u;
            const double phi = 2 * pi * (ip + 0.5) / nphi;
            if constexpr (N == 2) {
                u << std::cos(phi), std::sin(phi);
            } else {
                const double th = pi * (it + 0.5) / ntheta;
                u << std::sin(th) * std::cos(phi), std::sin(th) * std::sin(phi), std::cos(th);
            }
            const Vec<N> x = d.center + (d.axes.array() * u.array()).matrix();
            const Christoffel<N> gam = christoffel_from_jet<N>(m.jet(x, 1));
            const Vec<N> dr = d.grad_rho(x);
            Mat<N> h = d.hess_rho(x);
            for (int k = 0; k < N; ++k) h -= dr[k] * gam[k];
            const Mat<N> g = m.metric(x);
            // g-orthonormal basis of the tangent space {v : dr . v = 0}
            Eigen::FullPivLU<Eigen::Matrix<double, 1, N>> lu(dr.transpose());
            Eigen::Matrix<double, N, N - 1> t = lu.kernel();
            const Eigen::Matrix<double, N - 1, N - 1> gt = t.transpose() * g * t;
            const Eigen::Matrix<double, N - 1, N - 1> ht = t.transpose() * h * t;
            Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix<double, N - 1, N - 1>> es(ht, gt);
            cert.min_curvature = std::min(cert.min_curvature, es.eigenvalues().minCoeff());
            ++cert.samples;
        }
    cert.pass = cert.min_curvature > 0;
    return cert;
}

}  // namespace gxr
