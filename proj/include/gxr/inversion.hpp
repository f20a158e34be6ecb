#pragma once

#include "xray.hpp"

#include <Eigen/Sparse>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/roots.hpp>
#include <fftw3.h>

#include <cstdio>
#include <memory>
#include <mutex>
#include <random>

namespace gxr {

/// Sobolev exponent and enclosing torus for H^s norms of grid fields.
struct HilbertScaleSpec {
    double s = 0;
    int box = 0;

    int box_for(int n) const { return box > 0 ? box : 2 * n; }
    void validate(int n) const {
        if (!(s >= -2 && s <= 2)) throw PreconditionError("hilbert: exponent must lie in [-2, 2]");
        if (box_for(n) < n) throw PreconditionError("hilbert: box smaller than the field grid");
    }
};

namespace detail {
inline std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

/// Fourier multipliers (1 + |xi|^2)^{s/2} on a periodic box of b^N nodes with spacing h.
template <int N> class TorusSpectrum {
public:
    TorusSpectrum(int b, double h) : b_(b), h_(h) {
        if (b < 2) throw PreconditionError("torus: need at least two nodes per axis");
        real_count_ = 1;
        for (int k = 0; k < N; ++k) real_count_ *= b;
        half_count_ = real_count_ / b * (b / 2 + 1);
        real_ = fftw_alloc_real(real_count_);
        spec_ = fftw_alloc_complex(half_count_);
        int dims[N];
        for (int k = 0; k < N; ++k) dims[k] = b;
        std::lock_guard<std::mutex> lock(detail::fftw_mutex());
        fwd_ = fftw_plan_dft_r2c(N, dims, real_, spec_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r(N, dims, spec_, real_, FFTW_ESTIMATE);
        xi2_.resize(half_count_);
        for (std::size_t i = 0; i < half_count_; ++i) {
            std::size_t r = i;
            double q = 0;
            for (int k = N - 1; k >= 0; --k) {
                const int len = k == N - 1 ? b / 2 + 1 : b;
                int j = static_cast<int>(r % len);
                r /= len;
                if (j > b / 2) j -= b;
                const double xi = 2 * pi * j / (b * h);
                q += xi * xi;
            }
            xi2_[i] = q;
        }
    }
    TorusSpectrum(const TorusSpectrum&) = delete;
    TorusSpectrum& operator=(const TorusSpectrum&) = delete;
    ~TorusSpectrum() {
        std::lock_guard<std::mutex> lock(detail::fftw_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(real_);
        fftw_free(spec_);
    }

    int box() const { return b_; }
    double spacing() const { return h_; }
    std::size_t size() const { return real_count_; }

    /// Squared H^s norm of periodic samples: h^N / b^N * sum (1 + |xi|^2)^s |F|^2.
    double norm2(const std::vector<double>& torus, double s) const {
        std::copy(torus.begin(), torus.end(), real_);
        fftw_execute(fwd_);
        double acc = 0;
        for (std::size_t i = 0; i < half_count_; ++i) {
            const int last = static_cast<int>(i % (b_ / 2 + 1));
            const double mult = (last == 0 || (b_ % 2 == 0 && last == b_ / 2)) ? 1.0 : 2.0;
            const double a2 = spec_[i][0] * spec_[i][0] + spec_[i][1] * spec_[i][1];
            acc += mult * std::pow(1 + xi2_[i], s) * a2;
        }
        return acc * std::pow(h_, N) / static_cast<double>(real_count_);
    }

    /// torus <- (1 + |xi|^2)^{s/2} applied to torus, in place.
    void apply(std::vector<double>& torus, double s) const {
        std::copy(torus.begin(), torus.end(), real_);
        fftw_execute(fwd_);
        const double scale = 1.0 / static_cast<double>(real_count_);
        for (std::size_t i = 0; i < half_count_; ++i) {
            const double f = std::pow(1 + xi2_[i], s / 2) * scale;
            spec_[i][0] *= f;
            spec_[i][1] *= f;
        }
        fftw_execute(inv_);
        std::copy(real_, real_ + real_count_, torus.begin());
    }

    /// Real half spectrum of an even periodic kernel sampled at torus offsets.
    std::vector<double> symbol(const std::vector<double>& kernel) const {
        std::copy(kernel.begin(), kernel.end(), real_);
        fftw_execute(fwd_);
        std::vector<double> out(half_count_);
        for (std::size_t i = 0; i < half_count_; ++i) out[i] = spec_[i][0];
        return out;
    }

    /// torus <- circular convolution with the kernel whose symbol is given, in place.
    void apply_symbol(std::vector<double>& torus, const std::vector<double>& sym) const {
        std::copy(torus.begin(), torus.end(), real_);
        fftw_execute(fwd_);
        const double scale = 1.0 / static_cast<double>(real_count_);
        for (std::size_t i = 0; i < half_count_; ++i) {
            spec_[i][0] *= sym[i] * scale;
            spec_[i][1] *= sym[i] * scale;
        }
        fftw_execute(inv_);
        std::copy(real_, real_ + real_count_, torus.begin());
    }

    /// torus <- sum over modes of weight(|xi|) F, in place.
    template <class W> void filter(std::vector<double>& torus, W&& weight) const {
        std::copy(torus.begin(), torus.end(), real_);
        fftw_execute(fwd_);
        const double scale = 1.0 / static_cast<double>(real_count_);
        for (std::size_t i = 0; i < half_count_; ++i) {
            const double f = weight(std::sqrt(xi2_[i])) * scale;
            spec_[i][0] *= f;
            spec_[i][1] *= f;
        }
        fftw_execute(inv_);
        std::copy(real_, real_ + real_count_, torus.begin());
    }

private:
    int b_;
    double h_;
    std::size_t real_count_ = 0, half_count_ = 0;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_{}, inv_{};
    std::vector<double> xi2_;
};

/// Extension by zero of a grid into the centered torus, and restriction back.
template <int N> class TorusEmbedding {
public:
    TorusEmbedding(const ScalarGrid<N>& grid, int box) : n_(grid.n), b_(box), offset_((box - grid.n) / 2) {
        if (box < grid.n) throw PreconditionError("hilbert: box smaller than the field grid");
        std::size_t total = 1;
        for (int k = 0; k < N; ++k) total *= b_;
        total_ = total;
        map_.resize(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto idx = grid.multi_index(i);
            std::size_t t = 0;
            for (int k = 0; k < N; ++k) t = t * b_ + (idx[k] + offset_);
            map_[i] = t;
        }
    }

    std::size_t torus_size() const { return total_; }

    std::vector<double> extend(const std::vector<double>& values) const {
        std::vector<double> t(total_, 0.0);
        for (std::size_t i = 0; i < values.size(); ++i) t[map_[i]] = values[i];
        return t;
    }
    std::vector<double> restrict_to(const std::vector<double>& torus, const std::vector<std::uint8_t>& mask) const {
        std::vector<double> v(map_.size(), 0.0);
        for (std::size_t i = 0; i < map_.size(); ++i)
            if (mask[i]) v[i] = torus[map_[i]];
        return v;
    }

    /// True when some nonzero value sits on the outermost torus layer.
    bool touches_boundary(const std::vector<double>& values) const {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] == 0) continue;
            std::size_t t = map_[i];
            for (int k = 0; k < N; ++k) {
                const std::size_t j = t % b_;
                t /= b_;
                if (j == 0 || j + 1 == static_cast<std::size_t>(b_)) return true;
            }
        }
        return false;
    }

private:
    int n_, b_, offset_;
    std::size_t total_ = 0;
    std::vector<std::size_t> map_;
};

/// ||f||_{H^s} of the extension by zero of a grid field.
template <int N> double hilbert_norm(const HilbertScaleSpec& spec, const ScalarGrid<N>& f) {
    spec.validate(f.n);
    const int b = spec.box_for(f.n);
    const TorusEmbedding<N> emb(f, b);
    std::vector<double> masked(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f.mask[i]) masked[i] = f.values[i];
    if (emb.touches_boundary(masked)) throw PreconditionError("hilbert: field support touches the box boundary");
    const TorusSpectrum<N> ts(b, f.h);
    return std::sqrt(std::max(0.0, ts.norm2(emb.extend(masked), spec.s)));
}

/// Masked unknowns of a grid with the Sobolev machinery of the enclosing torus.
template <int N> class GridUnknowns {
public:
    using Vector = Eigen::VectorXd;

    GridUnknowns(const ScalarGrid<N>& like, int box)
        : grid_(like), box_(box > 0 ? box : 2 * like.n), emb_(like, box_), torus_(box_, like.h) {
        unknowns_ = like.masked_nodes();
        cell_ = std::pow(like.h, N);
    }

    std::size_t unknowns() const { return unknowns_.size(); }
    const ScalarGrid<N>& grid() const { return grid_; }
    int box() const { return box_; }
    double cell() const { return cell_; }

    /// h^N R Lambda^{2s} E f on the unknowns, so that f . sobolev(f, s) = ||f||^2_{H^s}.
    Vector sobolev(const Vector& f, double s) const {
        std::vector<double> t = emb_.extend(scatter(f));
        torus_.apply(t, 2 * s);
        return cell_ * gather(emb_.restrict_to(t, grid_.mask));
    }
    double sobolev_norm(const Vector& f, double s) const {
        return std::sqrt(std::max(0.0, torus_.norm2(emb_.extend(scatter(f)), s)));
    }
    /// Lambda^{2s} with no cell factor, used as a preconditioner.
    Vector multiplier(const Vector& f, double s) const {
        std::vector<double> t = emb_.extend(scatter(f));
        torus_.apply(t, 2 * s);
        return gather(emb_.restrict_to(t, grid_.mask));
    }

    Vector gather(const std::vector<double>& values) const {
        Vector v(static_cast<Eigen::Index>(unknowns_.size()));
        for (std::size_t k = 0; k < unknowns_.size(); ++k) v[k] = values[unknowns_[k]];
        return v;
    }
    std::vector<double> scatter(const Vector& v) const {
        std::vector<double> out(grid_.size(), 0.0);
        for (std::size_t k = 0; k < unknowns_.size(); ++k) out[unknowns_[k]] = v[k];
        return out;
    }
    ScalarGrid<N> to_grid(const Vector& v) const {
        ScalarGrid<N> g = grid_;
        g.values = scatter(v);
        return g;
    }
    double l2(const Vector& f) const { return std::sqrt(cell_ * f.squaredNorm()); }

    const TorusSpectrum<N>& torus() const { return torus_; }
    const TorusEmbedding<N>& embedding() const { return emb_; }

protected:
    ScalarGrid<N> grid_;
    int box_;
    TorusEmbedding<N> emb_;
    TorusSpectrum<N> torus_;
    std::vector<std::size_t> unknowns_;
    double cell_ = 1;
};

/// Discretized X_phi restricted to masked unknowns, with the Santalo data weights.
template <int N> class DiscreteProblem : public GridUnknowns<N> {
public:
    using Vector = Eigen::VectorXd;

    template <class M>
    DiscreteProblem(const M& m, const DomainModel<N>& d, const WeightField<N>& phi, const RayGrid<N>& rays,
                    const ScalarGrid<N>& like, const XrayOptions& o, int box = 0)
        : GridUnknowns<N>(like, box), rays_(rays) {
        const auto full = assemble_forward(m, d, phi, rays, like, o);
        std::vector<int> col(like.size(), -1);
        for (std::size_t k = 0; k < this->unknowns_.size(); ++k) col[this->unknowns_[k]] = static_cast<int>(k);
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(full.nonZeros());
        for (int r = 0; r < full.outerSize(); ++r)
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(full, r); it; ++it)
                if (col[it.col()] >= 0) trips.emplace_back(r, col[it.col()], it.value());
        a_.resize(full.rows(), static_cast<Eigen::Index>(this->unknowns_.size()));
        a_.setFromTriplets(trips.begin(), trips.end());
        const auto w = santalo_weights(m, rays);
        w_ = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    }

    std::size_t rays() const { return static_cast<std::size_t>(a_.rows()); }
    const Eigen::SparseMatrix<double, Eigen::RowMajor>& matrix() const { return a_; }
    const Vector& data_weights() const { return w_; }
    const RayGrid<N>& ray_grid() const { return rays_; }

    Vector forward(const Vector& f) const { return a_ * f; }
    Vector transpose(const Vector& y) const { return a_.transpose() * y; }
    /// A^t W A f.
    Vector gram(const Vector& f) const { return a_.transpose() * w_.cwiseProduct(a_ * f).eval(); }
    double data_norm(const Vector& y) const { return std::sqrt(y.dot(w_.cwiseProduct(y))); }
    /// ||X f||^2_{L^2(mu)}.
    double energy(const Vector& f) const {
        const double n = data_norm(forward(f));
        return n * n;
    }

private:
    RayGrid<N> rays_;
    Eigen::SparseMatrix<double, Eigen::RowMajor> a_;
    Vector w_;
};

namespace detail {
template <int Q, int N, class F> double cube_integral(F&& f, const Vec<N>& lo, const Vec<N>& hi, int k = 0, Vec<N> x = {}) {
    using G = boost::math::quadrature::gauss<double, Q>;
    return G::integrate(
        [&](double t) {
            Vec<N> y = x;
            y[k] = t;
            return k + 1 == N ? f(y) : cube_integral<Q, N>(f, lo, hi, k + 1, y);
        },
        lo[k], hi[k]);
}

/// Integral of 2 |u|^{1-N} over the unit cell centered at the integer offset j.
template <int N> double euclidean_cell_kernel(const std::array<int, N>& j) {
    int far = 0;
    for (int k = 0; k < N; ++k) far = std::max(far, std::abs(j[k]));
    if (far == 0) {
        // 2N pyramids over the faces, each reducing to a smooth integral over [-1,1]^{N-1}
        const Vec<N - 1> lo = Vec<N - 1>::Constant(-1), hi = Vec<N - 1>::Constant(1);
        const double face =
            cube_integral<20, N - 1>([](const Vec<N - 1>& a) { return std::pow(1 + a.squaredNorm(), 0.5 * (1 - N)); }, lo, hi);
        return 2.0 * N * face;
    }
    Vec<N> c;
    for (int k = 0; k < N; ++k) c[k] = j[k];
    const Vec<N> lo = c.array() - 0.5, hi = c.array() + 0.5;
    auto k2 = [](const Vec<N>& u) { return 2.0 * std::pow(u.squaredNorm(), 0.5 * (1 - N)); };
    if (far == 1) return cube_integral<10, N>(k2, lo, hi);
    if (far <= 3) return cube_integral<7, N>(k2, lo, hi);
    const double g = 0.5 / std::sqrt(3.0);
    double acc = 0;
    for (int corner = 0; corner < (1 << N); ++corner) {
        Vec<N> u = c;
        for (int k = 0; k < N; ++k) u[k] += (corner >> k & 1) ? g : -g;
        acc += k2(u);
    }
    return acc / (1 << N);
}
}  // namespace detail

/// Euclidean normal operator N f = 2 |x|^{1-N} * f on masked unknowns, applied by FFT convolution with
/// cell-integrated kernel weights on the enclosing torus, with ||X f||^2 = f . N f.
template <int N> class EuclideanNormal : public GridUnknowns<N> {
public:
    using Vector = Eigen::VectorXd;

    EuclideanNormal(const ScalarGrid<N>& like, const WeightField<N>& phi, int box = 0) : GridUnknowns<N>(like, box) {
        if (!phi.is_constant()) throw PreconditionError("euclidean normal: weight must be constant");
        if (this->box_ < 2 * like.n) throw PreconditionError("euclidean normal: box must hold twice the grid");
        const int b = this->box_;
        std::vector<double> kernel(this->torus_.size());
        for (std::size_t t = 0; t < kernel.size(); ++t) {
            std::size_t r = t;
            std::array<int, N> j;
            for (int k = N - 1; k >= 0; --k) {
                int v = static_cast<int>(r % b);
                r /= b;
                j[k] = v > b / 2 ? v - b : v;
            }
            kernel[t] = detail::euclidean_cell_kernel<N>(j);
        }
        const double scale = phi.value * phi.value * like.h * this->cell_;
        symbol_ = this->torus_.symbol(kernel);
        for (double& v : symbol_) v *= scale;
    }

    std::size_t rays() const { return 0; }
    /// h^N N f on the unknowns.
    Vector gram(const Vector& f) const {
        std::vector<double> t = this->emb_.extend(this->scatter(f));
        this->torus_.apply_symbol(t, symbol_);
        return this->gather(this->emb_.restrict_to(t, this->grid_.mask));
    }
    double energy(const Vector& f) const { return f.dot(gram(f)); }

private:
    std::vector<double> symbol_;
};

struct TikhonovOptions {
    double rel_tol = 1e-8;
    int max_iter = 5000;
};

struct TikhonovResult {
    Eigen::VectorXd f;
    int iterations = 0;
    double residual = 0;
    bool converged = false;
    double misfit = 0;
    std::vector<double> objective;
};

/// Minimizes ||A f - g||_W^2 + omega ||f||_{H^p}^2 by conjugate gradients on the normal equations.
template <int N>
TikhonovResult tikhonov_solve(const DiscreteProblem<N>& P, const Eigen::VectorXd& g, double omega, double p,
                              const TikhonovOptions& o = {}, const Eigen::VectorXd* start = nullptr) {
    if (!(omega > 0)) throw PreconditionError("tikhonov: omega must be positive");
    if (!(p >= 0)) throw PreconditionError("tikhonov: penalty exponent must be nonnegative");
    using V = Eigen::VectorXd;
    auto H = [&](const V& x) {
        V y = P.gram(x);
        y += p == 0 ? V(omega * P.cell() * x) : V(omega * P.sobolev(x, p));
        return y;
    };
    const V b = P.transpose(P.data_weights().cwiseProduct(g));
    const double gwg = g.dot(P.data_weights().cwiseProduct(g));
    TikhonovResult res;
    V x = start ? *start : V::Zero(b.size());
    V r = b - H(x);
    V d = r;
    double rr = r.squaredNorm();
    const double bnorm = std::max(b.norm(), 1e-300);
    auto objective = [&] { return gwg - x.dot(b) - x.dot(r); };
    res.objective.push_back(objective());
    int it = 0;
    while (std::sqrt(rr) > o.rel_tol * bnorm && it < o.max_iter) {
        const V hd = H(d);
        const double alpha = rr / d.dot(hd);
        x += alpha * d;
        r -= alpha * hd;
        const double rr_new = r.squaredNorm();
        d = r + (rr_new / rr) * d;
        rr = rr_new;
        ++it;
        res.objective.push_back(objective());
    }
    res.iterations = it;
    res.residual = std::sqrt(rr) / bnorm;
    res.converged = res.residual <= o.rel_tol;
    res.misfit = P.data_norm(P.forward(x) - g);
    res.f = std::move(x);
    return res;
}

/// Random field in H^q (and not in H^{q + 1/2}) with smooth cutoff to the ball of radius r_cut.
template <int N>
ScalarGrid<N> sobolev_phantom(const ScalarGrid<N>& like, double q, std::uint64_t seed, const std::type_identity_t<Vec<N>>& center,
                              double r_inner, double r_outer, int box = 0) {
    const int b = box > 0 ? box : 2 * like.n;
    const TorusEmbedding<N> emb(like, b);
    const TorusSpectrum<N> ts(b, like.h);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> t(emb.torus_size());
    for (auto& v : t) v = gauss(rng);
    const double beta = q + N / 2.0 + 0.05;
    ts.filter(t, [&](double xi) { return std::pow(1 + xi * xi, -beta / 2); });
    std::vector<std::uint8_t> all(like.size(), 1);
    const auto vals = emb.restrict_to(t, all);
    ScalarGrid<N> out = like;
    for (std::size_t i = 0; i < like.size(); ++i) {
        const double r = (like.node(i) - center).norm();
        const double cut = 1.0 - smoothstep((r - r_inner) / (r_outer - r_inner));
        out.values[i] = like.mask[i] ? vals[i] * cut : 0.0;
    }
    return out;
}

/// Least-squares slope and intercept of log y against log x.
inline std::pair<double, double> fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {slope, (sy - slope * sx) / n};
}

struct RateSpec {
    double q = 1;
    double p = 0.5;
    std::vector<double> noise{0.3, 0.15, 0.08, 0.04, 0.02, 0.009};
    bool relative = true;
    double factor = 1.1;
    std::uint64_t seed = 1;
    double omega_lo = 1e-14, omega_hi = 1e2;
    TikhonovOptions cg;

    void validate() const {
        if (!(p >= (q - 0.5) / 2)) throw PreconditionError("rate: penalty exponent p must satisfy p >= (q - 1/2)/2");
        if (!(q >= 0)) throw PreconditionError("rate: q must be nonnegative");
        if (noise.size() < 4) throw PreconditionError("rate: need at least four noise levels");
        const auto [lo, hi] = std::minmax_element(noise.begin(), noise.end());
        if (!(*lo > 0)) throw PreconditionError("rate: noise levels must be positive");
        if (std::log10(*hi / *lo) < 1.5 - 1e-12) throw PreconditionError("rate: noise levels must span 1.5 decades");
    }
};

struct RateReport {
    std::vector<double> eps;
    std::vector<double> omega;
    std::vector<double> errors;
    std::vector<double> misfits;
    std::vector<int> iterations;
    std::vector<bool> flagged;
    double slope = 0, intercept = 0;
    double expected = 0;
    double f0_norm = 0;
    double baseline_error = 0;
};

/// Morozov choice ||A f_omega - g||_W = factor * eps by bisection in log omega.
template <int N>
std::pair<TikhonovResult, bool> discrepancy_solve(const DiscreteProblem<N>& P, const Eigen::VectorXd& g, double eps,
                                                   double p, const RateSpec& spec, double& omega_out) {
    const double target = spec.factor * eps;
    Eigen::VectorXd warm;
    auto misfit = [&](double lw) {
        auto r = tikhonov_solve(P, g, std::exp(lw), p, spec.cg, warm.size() ? &warm : nullptr);
        warm = r.f;
        return r;
    };
    double lo = std::log(spec.omega_lo), hi = std::log(spec.omega_hi);
    const auto rlo = misfit(lo);
    const auto rhi = misfit(hi);
    if (!(rlo.misfit < target && rhi.misfit > target)) {
        // grid search fallback
        double best = lo, gap = std::numeric_limits<double>::infinity();
        TikhonovResult keep;
        for (int i = 0; i <= 40; ++i) {
            const double lw = lo + (hi - lo) * i / 40.0;
            auto r = misfit(lw);
            const double e = std::abs(r.misfit - target);
            if (e < gap) gap = e, best = lw, keep = r;
        }
        omega_out = std::exp(best);
        return {keep, true};
    }
    TikhonovResult last;
    std::uintmax_t iters = 60;
    const auto root = boost::math::tools::toms748_solve(
        [&](double lw) {
            last = misfit(lw);
            return std::log(last.misfit / target);
        },
        lo, hi, std::log(rlo.misfit / target), std::log(rhi.misfit / target),
        [](double a, double b) { return std::abs(b - a) < 1e-3; }, iters);
    const double lw = 0.5 * (root.first + root.second);
    last = misfit(lw);
    omega_out = std::exp(lw);
    return {last, false};
}

/// Convergence of the discrepancy-regularized reconstruction of f0 as the noise level decreases.
template <int N>
RateReport rate_experiment(const DiscreteProblem<N>& P, const ScalarGrid<N>& f0, const RateSpec& spec) {
    spec.validate();
    RateReport rep;
    const Eigen::VectorXd x0 = P.gather(f0.values);
    const Eigen::VectorXd clean = P.forward(x0);
    rep.f0_norm = P.l2(x0);
    rep.expected = 2 * spec.q / (1 + 2 * spec.q);
    const double gnorm = P.data_norm(clean);
    const Eigen::VectorXd sw = P.data_weights().cwiseSqrt();
    {
        const auto base = tikhonov_solve(P, clean, spec.omega_lo, spec.p, spec.cg);
        rep.baseline_error = P.l2(base.f - x0) / rep.f0_norm;
    }
    for (std::size_t j = 0; j < spec.noise.size(); ++j) {
        const double eps = spec.relative ? spec.noise[j] * gnorm : spec.noise[j];
        std::mt19937_64 rng(spec.seed + 7919 * (j + 1));
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::VectorXd e(clean.size());
        for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = sw[i] > 0 ? gauss(rng) / sw[i] : 0.0;
        e *= eps / P.data_norm(e);
        const Eigen::VectorXd g = clean + e;
        double omega = 0;
        auto [sol, flag] = discrepancy_solve(P, g, eps, spec.p, spec, omega);
        rep.eps.push_back(eps);
        rep.omega.push_back(omega);
        rep.errors.push_back(P.l2(sol.f - x0));
        rep.misfits.push_back(sol.misfit);
        rep.iterations.push_back(sol.iterations);
        rep.flagged.push_back(flag);
    }
    const auto fit = fit_loglog(rep.eps, rep.errors);
    rep.slope = fit.first;
    rep.intercept = fit.second;
    return rep;
}

inline void write_rate_csv(const RateReport& r, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw Error("cannot open " + path);
    std::fprintf(fp, "eps,omega,error,misfit,iterations,flagged,slope\n");
    for (std::size_t i = 0; i < r.eps.size(); ++i)
        std::fprintf(fp, "%.17g,%.17g,%.17g,%.17g,%d,%d,%.17g\n", r.eps[i], r.omega[i], r.errors[i], r.misfits[i],
                     r.iterations[i], r.flagged[i] ? 1 : 0, r.slope);
    std::fclose(fp);
}

struct LobpcgOptions {
    int block = 4;
    int max_iter = 400;
    double tol = 1e-6;
    std::uint64_t seed = 1;
};

struct LobpcgResult {
    double value = 0;
    Eigen::VectorXd vector;
    int iterations = 0;
    bool converged = false;
};

/// Extremal eigenpair of the pencil (A, B), A symmetric and B positive definite, by locally optimal
/// block preconditioned conjugate gradients. largest = false gives the smallest eigenvalue.
template <class AOp, class BOp, class TOp>
LobpcgResult lobpcg(AOp&& A, BOp&& B, TOp&& T, Eigen::Index n, bool largest, const LobpcgOptions& o) {
    using Mx = Eigen::MatrixXd;
    using V = Eigen::VectorXd;
    const double sgn = largest ? -1.0 : 1.0;
    auto applyA = [&](const Mx& X) {
        Mx Y(X.rows(), X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) Y.col(j) = sgn * A(V(X.col(j)));
        return Y;
    };
    auto applyB = [&](const Mx& X) {
        Mx Y(X.rows(), X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) Y.col(j) = B(V(X.col(j)));
        return Y;
    };
    const int k = static_cast<int>(std::min<Eigen::Index>(o.block, n));
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mx X(n, k);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = gauss(rng);
    Mx P;

    // Rayleigh-Ritz on span(S): B-orthonormalize, drop near-dependent directions, diagonalize.
    auto ritz = [&](const Mx& S, Mx& vecs, V& vals) {
        const Mx BS = applyB(S);
        const Mx gram = S.transpose() * BS;
        Eigen::SelfAdjointEigenSolver<Mx> ge(0.5 * (gram + gram.transpose()));
        const double top = ge.eigenvalues().maxCoeff();
        int keep = 0;
        for (Eigen::Index i = 0; i < gram.rows(); ++i) keep += ge.eigenvalues()[i] > 1e-12 * top;
        const Mx Q = ge.eigenvectors().rightCols(keep) *
                     ge.eigenvalues().tail(keep).cwiseSqrt().cwiseInverse().asDiagonal();
        const Mx SQ = S * Q;
        const Mx h = SQ.transpose() * applyA(SQ);
        Eigen::SelfAdjointEigenSolver<Mx> he(0.5 * (h + h.transpose()));
        vecs = Q * he.eigenvectors();
        vals = he.eigenvalues();
    };

    Mx C;
    V vals;
    ritz(X, C, vals);
    X = X * C.leftCols(k);
    LobpcgResult res;
    for (int it = 0; it < o.max_iter; ++it) {
        const Mx AX = applyA(X), BX = applyB(X);
        V lam(k);
        for (int j = 0; j < k; ++j) lam[j] = X.col(j).dot(AX.col(j)) / X.col(j).dot(BX.col(j));
        const Mx R = AX - BX * lam.asDiagonal();
        const double rel = R.col(0).norm() / (std::abs(lam[0]) * BX.col(0).norm());
        res.iterations = it;
        if (rel < o.tol) {
            res.converged = true;
            break;
        }
        Mx W(n, k);
        for (int j = 0; j < k; ++j) W.col(j) = T(V(R.col(j)));
        Mx S(n, P.cols() ? 3 * k : 2 * k);
        S.leftCols(k) = X;
        S.middleCols(k, k) = W;
        if (P.cols()) S.rightCols(k) = P;
        for (Eigen::Index j = 0; j < S.cols(); ++j) {
            const double nj = S.col(j).norm();
            if (nj > 0) S.col(j) /= nj;
        }
        ritz(S, C, vals);
        const Mx Xn = S * C.leftCols(k);
        // P spans the update orthogonal to the old X block
        Mx Cp = C.leftCols(k);
        Cp.topRows(k).setZero();
        P = S * Cp;
        X = Xn;
    }
    const Mx AX = applyA(X), BX = applyB(X);
    res.vector = X.col(0);
    res.value = sgn * X.col(0).dot(AX.col(0)) / X.col(0).dot(BX.col(0));
    return res;
}

struct SpectrumRow {
    int n = 0;
    std::size_t unknowns = 0, rays = 0;
    double min_ratio = 0, max_ratio = 0;
    double random_min = 0, random_max = 0;
    int iterations_min = 0, iterations_max = 0;
    bool converged = false;
};

struct SpectrumOptions {
    int random_fields = 16;
    std::uint64_t seed = 1;
    LobpcgOptions lobpcg;
};

/// ||X f||_{L^2(mu)} / ||f||_{H^{-1/2}} of a field given by unknown values.
template <class Problem> double stability_ratio(const Problem& P, const Eigen::VectorXd& f) {
    return std::sqrt(std::max(0.0, P.energy(f))) / P.sobolev_norm(f, -0.5);
}

/// Extremal and random-field statistics of the stability ratio on one discretization.
template <class Problem> SpectrumRow stability_row(const Problem& P, const SpectrumOptions& o) {
    using V = Eigen::VectorXd;
    SpectrumRow row;
    row.n = P.grid().n;
    row.unknowns = P.unknowns();
    row.rays = P.rays();
    auto A = [&](const V& x) { return P.gram(x); };
    auto B = [&](const V& x) { return P.sobolev(x, -0.5); };
    auto T = [&](const V& x) { return P.multiplier(x, 0.5); };
    const auto n = static_cast<Eigen::Index>(P.unknowns());
    LobpcgOptions lo = o.lobpcg;
    lo.seed = o.seed;
    const auto lmin = lobpcg(A, B, T, n, false, lo);
    lo.seed = o.seed + 1;
    const auto lmax = lobpcg(A, B, T, n, true, lo);
    row.iterations_min = lmin.iterations;
    row.iterations_max = lmax.iterations;
    row.converged = lmin.converged && lmax.converged;
    std::mt19937_64 rng(o.seed + 2);
    std::normal_distribution<double> gauss(0.0, 1.0);
    row.random_min = std::numeric_limits<double>::infinity();
    row.random_max = 0;
    for (int r = 0; r < o.random_fields; ++r) {
        V f(n);
        for (Eigen::Index i = 0; i < n; ++i) f[i] = gauss(rng);
        f /= P.sobolev_norm(f, -0.5);
        const double q = stability_ratio(P, f);
        row.random_min = std::min(row.random_min, q);
        row.random_max = std::max(row.random_max, q);
    }
    row.min_ratio = std::min(std::sqrt(std::max(0.0, lmin.value)), row.random_min);
    row.max_ratio = std::max(std::sqrt(std::max(0.0, lmax.value)), row.random_max);
    return row;
}

inline void write_spectrum_csv(const std::vector<SpectrumRow>& rows, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw Error("cannot open " + path);
    std::fprintf(fp, "grid,unknowns,rays,min_ratio,max_ratio,random_min,random_max,converged\n");
    for (const auto& r : rows)
        std::fprintf(fp, "%d,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%d\n", r.n, r.unknowns, r.rays, r.min_ratio, r.max_ratio,
                     r.random_min, r.random_max, r.converged ? 1 : 0);
    std::fclose(fp);
}

}  // namespace gxr
