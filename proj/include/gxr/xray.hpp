#pragma once

#include "flow.hpp"
#include "grid.hpp"
#include "quadrature.hpp"
#include "weight.hpp"

#include <Eigen/Sparse>

#include <cstdio>
#include <optional>
#include <sstream>

namespace gxr {

struct XrayOptions {
    FlowOptions flow;
    int substeps = 1;
    int sphere_nodes = 256;
    int workers = 1;
    int coarse_nodes = 0;
};

/// Ball outside which a field is negligible; lets quadrature skip far segments.
template <int N> struct SupportBall {
    Vec<N> center;
    double radius;
};

template <class F, int N>
concept HasSupport = requires(const F& f) {
    { f.support() } -> std::convertible_to<std::optional<SupportBall<N>>>;
};

template <int N> std::optional<SupportBall<N>> support_of(const GaussianField<N>& f) {
    if (f.bumps.empty()) return std::nullopt;
    Vec<N> c = Vec<N>::Zero();
    for (const auto& b : f.bumps) c += b.center;
    c /= static_cast<double>(f.bumps.size());
    double r = 0;
    for (const auto& b : f.bumps) r = std::max(r, (b.center - c).norm() + 8 * b.sigma);
    return SupportBall<N>{c, r};
}

template <class F, int N> std::optional<SupportBall<N>> field_support(const F& f) {
    if constexpr (std::is_same_v<F, GaussianField<N>>) return support_of(f);
    else if constexpr (HasSupport<F, N>) return f.support();
    else return std::nullopt;
}

/// Integral over [0, tau] (sign = +1) or [tau_-, 0] (sign = -1) of integrand(x, v) using
/// midpoint samples on Hermite-interpolated flow steps.
template <class M, class G, int N = M::dim>
auto integrate_along(const M& m, const DomainModel<N>& d, const PhaseState<N>& s, int sign, const XrayOptions& o,
                     G&& integrand, const std::optional<SupportBall<N>>& sup = std::nullopt) {
    using T = std::decay_t<decltype(integrand(s.x, s.v))>;
    T acc{};
    const int sub = std::max(1, o.substeps);
    march_to_exit(m, d, s, sign, o.flow, [&](double t0, const PhaseState<N>& a, double t1, const PhaseState<N>& b) {
        const double len = t1 - t0;
        if (sup) {
            const double reach = sup->radius + std::abs(len);
            if ((a.x - sup->center).norm() > reach && (b.x - sup->center).norm() > reach) return;
        }
        Vec<N> x, v;
        for (int j = 0; j < sub; ++j) {
            hermite(a, b, len, (j + 0.5) / sub, x, v);
            acc += integrand(x, v) * (std::abs(len) / sub);
        }
    });
    return acc;
}

/// Samples on the inward boundary bundle with Santalo weights.
template <int N> struct Sinogram {
    RayGrid<N> grid;
    std::vector<double> values;
    std::vector<double> weights;

    /// Multilinear interpolation in ray parameters.
    double operator()(const RayParams<N>& p) const {
        std::array<std::size_t, (1 << (2 * N - 2))> idx;
        std::array<double, (1 << (2 * N - 2))> wt;
        const int c = grid.stencil(p, idx, wt);
        double s = 0;
        for (int k = 0; k < c; ++k) s += wt[k] * values[idx[k]];
        return s;
    }
};

template <class M, int N = M::dim> std::vector<double> santalo_weights(const M& m, const RayGrid<N>& grid) {
    std::vector<double> w(grid.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = grid.weight(m, grid.params(i));
    return w;
}

template <class M, int N = M::dim> Sinogram<N> make_sinogram(const M& m, const RayGrid<N>& grid) {
    return Sinogram<N>{grid, std::vector<double>(grid.size(), 0.0), santalo_weights(m, grid)};
}

template <int N> double inner_product(const Sinogram<N>& a, const Sinogram<N>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += a.weights[i] * a.values[i] * b.values[i];
    return s;
}

template <int N> double l2_norm(const Sinogram<N>& a) { return std::sqrt(inner_product(a, a)); }

/// X_phi f sampled on the ray grid.
template <class M, class F, int N = M::dim>
Sinogram<N> forward(const M& m, const DomainModel<N>& d, const F& f, const WeightField<N>& phi,
                    const RayGrid<N>& grid, const XrayOptions& o, Diagnostics* diag = nullptr) {
    Sinogram<N> out = make_sinogram(m, grid);
    const auto sup = field_support<F, N>(f);
    const Diagnostics dg = parallel_for(grid.size(), o.workers, [&](std::size_t i, Diagnostics& dd) {
        const BoundaryRay<N> r = make_boundary_ray(m, d, grid.params(i));
        out.values[i] = integrate_along(
            m, d, PhaseState<N>{r.x, r.w}, +1, o,
            [&](const Vec<N>& x, const Vec<N>& v) { return phi(x, v) * f(x, dd); }, sup);
    });
    if (diag) diag->merge(dg);
    return out;
}

/// Footpoint interpolation stencils of the sphere rule at every masked node.
template <int N> struct AdjointPlan {
    std::vector<std::size_t> nodes;
    std::vector<std::size_t> offsets;
    std::vector<RayParams<N>> params;
    std::vector<double> weights;
    Diagnostics diag;
};

template <class M, int N = M::dim>
AdjointPlan<N> plan_adjoint(const M& m, const DomainModel<N>& d, const WeightField<N>& phi, const ScalarGrid<N>& grid,
                            double mu_min, const XrayOptions& o) {
    AdjointPlan<N> plan;
    plan.nodes = grid.masked_nodes();
    const SphereRule<N> rule = sphere_rule<N>(o.sphere_nodes);
    std::vector<std::vector<std::pair<RayParams<N>, double>>> per(plan.nodes.size());
    plan.diag = parallel_for(plan.nodes.size(), o.workers, [&](std::size_t i, Diagnostics& dd) {
        const Vec<N> x = grid.node(plan.nodes[i]);
        const Mat<N> e = orthonormal_frame<N>(m.metric(x));
        for (const auto& u : rule.nodes) {
            const Vec<N> nu = e * u;
            const double ph = phi(x, nu);
            if (ph == 0) continue;
            const BoundaryRay<N> r = footpoint(m, d, PhaseState<N>{x, nu}, o.flow);
            if (r.mu < mu_min) {
                ++dd.grazing_dropped;
                continue;
            }
            per[i].emplace_back(r.params, ph * rule.weight);
        }
    });
    plan.offsets.push_back(0);
    for (auto& v : per) {
        for (auto& [p, w] : v) {
            plan.params.push_back(p);
            plan.weights.push_back(w);
        }
        plan.offsets.push_back(plan.params.size());
        v.clear();
        v.shrink_to_fit();
    }
    return plan;
}

template <int N> ScalarGrid<N> apply_adjoint(const AdjointPlan<N>& plan, const Sinogram<N>& s, const ScalarGrid<N>& like) {
    ScalarGrid<N> out = like;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (std::size_t i = 0; i < plan.nodes.size(); ++i) {
        double acc = 0;
        for (std::size_t k = plan.offsets[i]; k < plan.offsets[i + 1]; ++k) acc += plan.weights[k] * s(plan.params[k]);
        out.values[plan.nodes[i]] = acc;
    }
    return out;
}

/// X^t_phi h(x) = integral over S_x of phi(nu) h(F(nu)) by the sphere rule at each masked node.
template <class M, int N = M::dim>
ScalarGrid<N> adjoint(const M& m, const DomainModel<N>& d, const Sinogram<N>& s, const WeightField<N>& phi,
                      const ScalarGrid<N>& like, const XrayOptions& o, Diagnostics* diag = nullptr) {
    const AdjointPlan<N> plan = plan_adjoint(m, d, phi, like, s.grid.mu_min, o);
    if (diag) diag->merge(plan.diag);
    return apply_adjoint(plan, s, like);
}

/// Coarse-rule lines through x that pass near the support ball; the fine rule is then restricted to
/// directions within one coarse spacing of such a line.
template <class M, int N = M::dim>
std::vector<std::uint8_t> fiber_mask(const M& m, const DomainModel<N>& d, const Vec<N>& x, const Mat<N>& e,
                                     const SphereRule<N>& fine, const SupportBall<N>& sup, const XrayOptions& o) {
    const SphereRule<N> coarse = sphere_rule<N>(o.coarse_nodes);
    const double spacing = N == 2 ? 2 * pi / o.coarse_nodes : std::sqrt(4 * pi / o.coarse_nodes);
    std::vector<Vec<N>> hits;
    for (const auto& u : coarse.nodes) {
        const PhaseState<N> s{x, e * u};
        bool hit = false;
        auto seg = [&](double, const PhaseState<N>&, double t1, const PhaseState<N>& b) {
            const double reach = sup.radius + 1.5 * spacing * std::abs(t1) + 2 * o.flow.step;
            if ((b.x - sup.center).norm() <= reach) hit = true;
        };
        if ((x - sup.center).norm() <= sup.radius + 2 * o.flow.step) hit = true;
        if (!hit) march_to_exit(m, d, s, +1, o.flow, seg);
        if (!hit) march_to_exit(m, d, s, -1, o.flow, seg);
        if (hit) hits.push_back(u);
    }
    std::vector<std::uint8_t> keep(fine.nodes.size(), 0);
    const double cos_tol = std::cos(std::min(pi / 2, spacing));
    for (std::size_t j = 0; j < fine.nodes.size(); ++j)
        for (const auto& h : hits)
            if (std::abs(fine.nodes[j].dot(h)) >= cos_tol) {
                keep[j] = 1;
                break;
            }
    return keep;
}

/// N_phi f at the given points by the explicit fiber formula. With coarse_nodes > 0 and a known
/// support ball, points outside the ball integrate only over directions whose lines meet it. Even
/// weights integrate each line once.
template <class M, class F, int N = M::dim>
auto normal_direct_at(const M& m, const DomainModel<N>& d, const F& f, const WeightField<N>& phi,
                      const std::vector<Vec<N>>& points, const XrayOptions& o, Diagnostics* diag = nullptr) {
    Diagnostics scratch;
    using T = std::decay_t<decltype(f(points.front(), scratch))>;
    std::vector<T> out(points.size(), T{});
    const SphereRule<N> rule = sphere_rule<N>(o.sphere_nodes);
    const auto sup = field_support<F, N>(f);
    const bool adaptive = sup && o.coarse_nodes > 0 && 2 * o.coarse_nodes < o.sphere_nodes;
    const bool fold = N == 2 && phi.even() && rule.nodes.size() % 2 == 0;
    const std::size_t count = fold ? rule.nodes.size() / 2 : rule.nodes.size();
    const double weight = fold ? 2 * rule.weight : rule.weight;
    const Diagnostics dg = parallel_for(points.size(), o.workers, [&](std::size_t i, Diagnostics& dd) {
        const Vec<N>& x = points[i];
        const Mat<N> e = orthonormal_frame<N>(m.metric(x));
        std::vector<std::uint8_t> keep;
        if (adaptive && (x - sup->center).norm() > sup->radius) keep = fiber_mask(m, d, x, e, rule, *sup, o);
        T acc{};
        auto integrand = [&](const Vec<N>& y, const Vec<N>& v) { return phi(y, v) * f(y, dd); };
        for (std::size_t j = 0; j < count; ++j) {
            if (!keep.empty() && !keep[j]) continue;
            const Vec<N> nu = e * rule.nodes[j];
            const double ph = phi(x, nu);
            if (ph == 0) continue;
            const PhaseState<N> s{x, nu};
            acc += ph * (integrate_along(m, d, s, +1, o, integrand, sup) + integrate_along(m, d, s, -1, o, integrand, sup));
        }
        out[i] = acc * weight;
    });
    if (diag) diag->merge(dg);
    return out;
}

template <class M, class F, int N = M::dim>
ScalarGrid<N> normal_direct(const M& m, const DomainModel<N>& d, const F& f, const WeightField<N>& phi,
                            const ScalarGrid<N>& like, const XrayOptions& o, Diagnostics* diag = nullptr) {
    const auto nodes = like.masked_nodes();
    std::vector<Vec<N>> pts;
    pts.reserve(nodes.size());
    for (auto i : nodes) pts.push_back(like.node(i));
    const auto vals = normal_direct_at(m, d, f, phi, pts, o, diag);
    ScalarGrid<N> out = like;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (std::size_t k = 0; k < nodes.size(); ++k) out.values[nodes[k]] = vals[k];
    return out;
}

/// N_phi = X^t_phi X_phi on the standard grids.
template <class M, class F, int N = M::dim>
ScalarGrid<N> normal_composed(const M& m, const DomainModel<N>& d, const F& f, const WeightField<N>& phi,
                              const RayGrid<N>& rays, const ScalarGrid<N>& like, const XrayOptions& o,
                              Diagnostics* diag = nullptr) {
    return adjoint(m, d, forward(m, d, f, phi, rays, o, diag), phi, like, o, diag);
}

/// N_SM[h](nu) = integral over the maximal geodesic through nu of chi(nu, gamma') h(gamma').
template <class M, class H, class Chi, int N = M::dim>
std::vector<double> nsm_apply(const M& m, const DomainModel<N>& d, const std::vector<PhaseState<N>>& probes, H&& h,
                              Chi&& chi, const XrayOptions& o) {
    std::vector<double> out(probes.size());
    parallel_for(probes.size(), o.workers, [&](std::size_t i, Diagnostics&) {
        const PhaseState<N>& nu = probes[i];
        auto integrand = [&](const Vec<N>& x, const Vec<N>& v) {
            const PhaseState<N> mu{x, v};
            return chi(nu, mu) * h(mu);
        };
        out[i] = integrate_along(m, d, nu, +1, o, integrand) + integrate_along(m, d, nu, -1, o, integrand);
    });
    return out;
}

/// Exact transpose of the discretized forward map (as a matrix acting on node values).
template <class M, int N = M::dim>
std::vector<double> forward_transpose(const M& m, const DomainModel<N>& d, const std::vector<double>& y,
                                      const WeightField<N>& phi, const RayGrid<N>& rays, const ScalarGrid<N>& grid,
                                      const XrayOptions& o) {
    std::vector<double> out(grid.size(), 0.0);
    const int sub = std::max(1, o.substeps);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (y[i] == 0) continue;
        const BoundaryRay<N> r = make_boundary_ray(m, d, rays.params(i));
        march_to_exit(m, d, PhaseState<N>{r.x, r.w}, +1, o.flow,
                      [&](double t0, const PhaseState<N>& a, double t1, const PhaseState<N>& b) {
                          const double len = t1 - t0;
                          Vec<N> x, v;
                          for (int j = 0; j < sub; ++j) {
                              hermite(a, b, len, (j + 0.5) / sub, x, v);
                              grid.scatter(x, y[i] * phi(x, v) * std::abs(len) / sub, out);
                          }
                      });
    }
    return out;
}

/// Sparse matrix of the discretized forward map: rows = rays, columns = grid nodes.
template <class M, int N = M::dim>
Eigen::SparseMatrix<double, Eigen::RowMajor> assemble_forward(const M& m, const DomainModel<N>& d,
                                                              const WeightField<N>& phi, const RayGrid<N>& rays,
                                                              const ScalarGrid<N>& grid, const XrayOptions& o) {
    std::vector<std::vector<std::pair<int, double>>> rows(rays.size());
    const int sub = std::max(1, o.substeps);
    parallel_for(rays.size(), o.workers, [&](std::size_t i, Diagnostics&) {
        const BoundaryRay<N> r = make_boundary_ray(m, d, rays.params(i));
        std::vector<double> dummy;
        auto& row = rows[i];
        march_to_exit(m, d, PhaseState<N>{r.x, r.w}, +1, o.flow,
                      [&](double t0, const PhaseState<N>& a, double t1, const PhaseState<N>& b) {
                          const double len = t1 - t0;
                          Vec<N> x, v;
                          for (int j = 0; j < sub; ++j) {
                              hermite(a, b, len, (j + 0.5) / sub, x, v);
                              const double c = phi(x, v) * std::abs(len) / sub;
                              std::array<int, N> i0;
                              std::array<double, N> t;
                              bool inside = true;
                              for (int k = 0; k < N; ++k) {
                                  const double u = (x[k] - grid.origin()) / grid.h;
                                  const double fl = std::floor(u);
                                  if (fl < 0 || fl >= grid.n - 1) inside = false;
                                  i0[k] = static_cast<int>(fl);
                                  t[k] = u - fl;
                              }
                              if (!inside) continue;
                              for (int cc = 0; cc < (1 << N); ++cc) {
                                  std::array<int, N> ii;
                                  double w = 1;
                                  for (int k = 0; k < N; ++k) {
                                      const bool hi = (cc >> k) & 1;
                                      ii[k] = i0[k] + hi;
                                      w *= hi ? t[k] : 1 - t[k];
                                  }
                                  const std::size_t jn = grid.flat_index(ii);
                                  if (grid.mask[jn]) row.emplace_back(static_cast<int>(jn), c * w);
                              }
                          }
                      });
        std::sort(row.begin(), row.end());
        std::vector<std::pair<int, double>> merged;
        for (const auto& e : row) {
            if (!merged.empty() && merged.back().first == e.first) merged.back().second += e.second;
            else merged.push_back(e);
        }
        row.swap(merged);
    });
    std::vector<Eigen::Triplet<double>> trips;
    std::size_t nnz = 0;
    for (const auto& r : rows) nnz += r.size();
    trips.reserve(nnz);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (const auto& [j, v] : rows[i]) trips.emplace_back(static_cast<int>(i), j, v);
    Eigen::SparseMatrix<double, Eigen::RowMajor> a(static_cast<int>(rays.size()), static_cast<int>(grid.size()));
    a.setFromTriplets(trips.begin(), trips.end());
    return a;
}

template <int N> void write_sinogram_csv(const Sinogram<N>& s, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw Error("cannot open " + path);
    if constexpr (N == 2) std::fprintf(fp, "beta,alpha,mu,value\n");
    else std::fprintf(fp, "theta_b,phi_b,theta_d,phi_d,mu,value\n");
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        const auto p = s.grid.params(i);
        for (int k = 0; k < 2 * N - 2; ++k) std::fprintf(fp, "%.17g,", p[k]);
        const double mu = N == 2 ? std::cos(p[1]) : std::cos(p[2]);
        std::fprintf(fp, "%.17g,%.17g\n", mu, s.values[i]);
    }
    std::fclose(fp);
}

}  // namespace gxr
