#include <gxr/manifold.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace gxr;

namespace {

template <int N> Vec<N> random_in_ball(std::mt19937_64& rng, double r) {
    std::uniform_real_distribution<double> u(-1, 1);
    for (;;) {
        Vec<N> x;
        for (int i = 0; i < N; ++i) x[i] = u(rng);
        if (x.norm() < 1) return r * x;
    }
}

LensMetric<2> lens2() {
    LensMetric<2> m;
    m.speed.bumps.push_back({0.3, Vec<2>(0.0, 0.0), 0.25});
    m.speed.bumps.push_back({-0.2, Vec<2>(0.4, -0.3), 0.2});
    return m;
}

LensMetric<3> lens3() {
    LensMetric<3> m;
    m.speed.bumps.push_back({0.4, Vec<3>(0.1, 0.0, -0.1), 0.3});
    return m;
}

// Central differences of metric_at as an independent source for Christoffel symbols.
template <class M, int N = M::dim> Christoffel<N> fd_christoffel(const M& m, const Vec<N>& x, double h) {
    std::array<Mat<N>, N> dg;
    for (int k = 0; k < N; ++k) {
        Vec<N> e = Vec<N>::Zero();
        e[k] = h;
        dg[k] = (m.metric(x + e) - m.metric(x - e)) / (2 * h);
    }
    const Mat<N> gi = m.metric(x).inverse();
    Christoffel<N> gam;
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                double s = 0;
                for (int l = 0; l < N; ++l) s += gi(k, l) * (dg[i](l, j) + dg[j](l, i) - dg[l](i, j));
                gam[k](i, j) = 0.5 * s;
            }
    return gam;
}

template <class M, int N = M::dim> double christoffel_fd_error(const M& m, std::mt19937_64& rng, int count) {
    const auto d = ball_domain<N>(1.0);
    double worst = 0;
    for (int s = 0; s < count; ++s) {
        const Vec<N> x = random_in_ball<N>(rng, 0.99);
        const auto a = christoffel_at(m, d, x);
        const auto b = fd_christoffel(m, x, 1e-5);
        double num = 0, den = 0;
        for (int k = 0; k < N; ++k) {
            num += (a[k] - b[k]).squaredNorm();
            den += b[k].squaredNorm();
        }
        worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
    }
    return worst;
}

}  // namespace

TEST(Metric, EuclideanIsIdentity) {
    const auto d = ball_domain<2>(1.0);
    EXPECT_EQ(metric_at(Euclidean<2>{}, d, Vec<2>(0.3, -0.2)), Mat<2>::Identity());
}

TEST(Metric, ConstantSpeedTwoGivesQuarterIdentity) {
    const auto d = ball_domain<2>(1.0);
    EXPECT_TRUE(metric_at(constant_speed<2>(2.0), d, Vec<2>(0.1, 0.1)).isApprox(0.25 * Mat<2>::Identity(), 1e-15));
}

TEST(Metric, LensMatchesClosedForm) {
    const auto d = ball_domain<2>(1.0);
    const auto m = gaussian_lens<2>(0.3, Vec<2>::Zero(), 0.25);
    const double c = 1.0 + 0.3 * std::exp(-0.01 / (2 * 0.0625));
    EXPECT_NEAR(metric_at(m, d, Vec<2>(0.1, 0.0))(0, 0), 1.0 / (c * c), 1e-15);
    EXPECT_NEAR(metric_at(m, d, Vec<2>(0.1, 0.0))(0, 1), 0.0, 1e-15);
}

TEST(Metric, OutsideDomainThrows) {
    const auto d = ball_domain<2>(1.0);
    EXPECT_THROW(metric_at(Euclidean<2>{}, d, Vec<2>(1.1, 0.0)), DomainError);
    EXPECT_THROW(christoffel_at(Euclidean<2>{}, d, Vec<2>(0.0, -1.01)), DomainError);
}

TEST(Metric, PositiveDefiniteAtRandomPoints) {
    std::mt19937_64 rng(7);
    const auto d2 = ball_domain<2>(1.0);
    const auto d3 = ball_domain<3>(1.0);
    auto check = [](const auto& g) {
        EXPECT_LT((g - g.transpose()).norm(), 1e-15);
        EXPECT_GT(g.ldlt().vectorD().minCoeff(), 0.0);
    };
    for (int s = 0; s < 10000; ++s) {
        const Vec<2> x = random_in_ball<2>(rng, 1.0);
        const Vec<3> y = random_in_ball<3>(rng, 1.0);
        check(metric_at(lens2(), d2, x));
        check(metric_at(round_sphere<2>(), d2, x));
        check(metric_at(constant_speed<2>(1.7), d2, x));
        check(metric_at(lens3(), d3, y));
        check(metric_at(round_sphere<3>(), d3, y));
    }
}

TEST(Christoffel, EuclideanAndSphereOriginVanish) {
    const auto d = ball_domain<2>(1.0);
    for (const auto& g : christoffel_at(Euclidean<2>{}, d, Vec<2>(0.2, 0.5))) EXPECT_EQ(g.norm(), 0.0);
    for (const auto& g : christoffel_at(round_sphere<2>(), d, Vec<2>(Vec<2>::Zero()))) EXPECT_EQ(g.norm(), 0.0);
}

TEST(Christoffel, MatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    EXPECT_LT(christoffel_fd_error(lens2(), rng, 1000), 1e-6);
    EXPECT_LT(christoffel_fd_error(round_sphere<2>(), rng, 1000), 1e-6);
    EXPECT_LT(christoffel_fd_error(lens3(), rng, 1000), 1e-6);
    EXPECT_LT(christoffel_fd_error(round_sphere<3>(), rng, 1000), 1e-6);
}

TEST(Christoffel, SymmetricInLowerIndices) {
    const auto d = ball_domain<3>(1.0);
    for (const auto& g : christoffel_at(lens3(), d, Vec<3>(0.2, -0.1, 0.3))) EXPECT_LT((g - g.transpose()).norm(), 1e-15);
}

TEST(Metric, ClosedFormAccelerationMatchesJetFormula) {
    // the conformal fast path against the generic jet-based path
    const auto lens = lens2();
    GeneralMetric<2> gen{[lens](const Vec<2>& x, int order) { return lens.jet(x, order); }};
    std::mt19937_64 rng(3);
    for (int s = 0; s < 200; ++s) {
        const Vec<2> x = random_in_ball<2>(rng, 0.9);
        const Vec<2> v = random_in_ball<2>(rng, 1.0);
        EXPECT_LT((lens.acceleration(x, v) - gen.acceleration(x, v)).norm(), 1e-12);
        Mat<2> ax1, av1, ax2, av2;
        lens.acceleration_jacobian(x, v, ax1, av1);
        gen.acceleration_jacobian(x, v, ax2, av2);
        EXPECT_LT((ax1 - ax2).norm(), 1e-10 * (1 + ax2.norm()));
        EXPECT_LT((av1 - av2).norm(), 1e-12 * (1 + av2.norm()));
    }
}

TEST(Metric, AccelerationJacobianMatchesFiniteDifferences) {
    const auto m = lens3();
    const Vec<3> x(0.1, 0.2, -0.15), v(0.3, -0.8, 0.5);
    Mat<3> ax, av;
    m.acceleration_jacobian(x, v, ax, av);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        Vec<3> e = Vec<3>::Zero();
        e[k] = h;
        const Vec<3> fx = (m.acceleration(x + e, v) - m.acceleration(x - e, v)) / (2 * h);
        const Vec<3> fv = (m.acceleration(x, v + e) - m.acceleration(x, v - e)) / (2 * h);
        EXPECT_LT((fx - ax.col(k)).norm(), 1e-7);
        EXPECT_LT((fv - av.col(k)).norm(), 1e-7);
    }
}

TEST(FlatSharp, KnownValuesAndRoundTrip) {
    const auto d = ball_domain<2>(1.0);
    EXPECT_EQ(flat(Euclidean<2>{}, d, Vec<2>(0.1, 0.1), Vec<2>(1, 0)), Vec<2>(1, 0));
    EXPECT_TRUE(flat(constant_speed<2>(2.0), d, Vec<2>(Vec<2>::Zero()), Vec<2>(1, 0)).isApprox(Vec<2>(0.25, 0)));
    std::mt19937_64 rng(5);
    const auto m = lens2();
    for (int s = 0; s < 1000; ++s) {
        const Vec<2> x = random_in_ball<2>(rng, 1.0);
        const Vec<2> v = random_in_ball<2>(rng, 3.0);
        EXPECT_LT((sharp(m, d, x, flat(m, d, x, v)) - v).norm(), 1e-12 * (1 + v.norm()));
    }
}

TEST(BoundaryNormal, KnownValues) {
    const auto d = ball_domain<2>(1.0);
    EXPECT_TRUE(boundary_normal(d, Euclidean<2>{}, Vec<2>(1, 0)).isApprox(Vec<2>(1, 0)));
    EXPECT_TRUE(boundary_normal(d, constant_speed<2>(3.0), Vec<2>(0, 1)).isApprox(Vec<2>(0, 3.0)));
    EXPECT_THROW(boundary_normal(d, Euclidean<2>{}, Vec<2>(0.5, 0)), PreconditionError);
}

TEST(BoundaryNormal, EllipseUnitLengthAndOutward) {
    const auto d = ellipse_domain(1.2, 0.7);
    const auto m = lens2();
    for (int i = 0; i < 100; ++i) {
        const double t = 2 * pi * i / 100.0;
        const Vec<2> x(1.2 * std::cos(t), 0.7 * std::sin(t));
        const Vec<2> n = boundary_normal(d, m, x);
        EXPECT_NEAR(g_norm<2>(m.metric(x), n), 1.0, 1e-12);
        EXPECT_GT(n.dot(d.grad_rho(x)), 0.0);
    }
}

TEST(Domain, ConvexityCertificate) {
    EXPECT_TRUE(convexity_certificate(Euclidean<2>{}, ball_domain<2>(1.0)).pass);
    EXPECT_TRUE(convexity_certificate(Euclidean<2>{}, ellipse_domain(1.5, 0.6)).pass);
    EXPECT_TRUE(convexity_certificate(lens2(), ball_domain<2>(1.0)).pass);
    EXPECT_TRUE(convexity_certificate(gaussian_lens<2>(0.5, Vec<2>::Zero(), 0.25), ball_domain<2>(1.0)).pass);
    EXPECT_TRUE(convexity_certificate(Euclidean<3>{}, ball_domain<3>(1.0)).pass);
    EXPECT_TRUE(convexity_certificate(lens3(), ball_domain<3>(1.0)).pass);
    EXPECT_EQ(convexity_certificate(lens3(), ball_domain<3>(1.0)).samples, 1000);
    // the stereographic disk of radius 1.5 is a cap larger than a hemisphere: not convex
    EXPECT_FALSE(convexity_certificate(round_sphere<2>(), ball_domain<2>(1.5)).pass);
    EXPECT_TRUE(convexity_certificate(round_sphere<2>(), ball_domain<2>(0.9)).pass);
}
