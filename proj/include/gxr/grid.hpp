#pragma once

#include "manifold.hpp"

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <thread>
#include <vector>

namespace gxr {

/// Counters reported in run manifests.
struct Diagnostics {
    long off_mask = 0;
    long grazing_dropped = 0;
    void merge(const Diagnostics& o) {
        off_mask += o.off_mask;
        grazing_dropped += o.grazing_dropped;
    }
};

/// Runs fn(i, diag) for i in [0, n) on contiguous chunks; each index is handled by exactly one
/// worker, so per-index outputs are independent of the worker count.
template <class Fn> Diagnostics parallel_for(std::size_t n, int workers, Fn&& fn) {
    workers = std::max(1, workers);
    if (workers == 1 || n < 2) {
        Diagnostics d;
        for (std::size_t i = 0; i < n; ++i) fn(i, d);
        return d;
    }
    std::vector<Diagnostics> diags(workers);
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
            for (std::size_t i = lo; i < hi; ++i) fn(i, diags[w]);
        });
    for (auto& t : pool) t.join();
    Diagnostics d;
    for (const auto& x : diags) d.merge(x);
    return d;
}

/// Uniform node grid centered on the chart origin, with equal node count per axis.
template <int N> struct ScalarGrid {
    int n = 0;
    double h = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> mask;

    double origin() const { return -0.5 * (n - 1) * h; }
    std::size_t size() const { return values.size(); }

    std::array<int, N> multi_index(std::size_t i) const {
        std::array<int, N> idx;
        for (int k = N - 1; k >= 0; --k) {
            idx[k] = static_cast<int>(i % n);
            i /= n;
        }
        return idx;
    }
    std::size_t flat_index(const std::array<int, N>& idx) const {
        std::size_t s = 0;
        for (int k = 0; k < N; ++k) s = s * n + idx[k];
        return s;
    }
    Vec<N> node(std::size_t i) const {
        const auto idx = multi_index(i);
        Vec<N> x;
        for (int k = 0; k < N; ++k) x[k] = origin() + idx[k] * h;
        return x;
    }
    std::vector<std::size_t> masked_nodes() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) out.push_back(i);
        return out;
    }

    /// Multilinear interpolation; nodes outside the mask contribute 0. Queries with no
    /// in-mask corner are counted as off-mask.
    double operator()(const Vec<N>& x, Diagnostics& diag) const {
        std::array<int, N> i0;
        std::array<double, N> t;
        const double o = origin();
        for (int k = 0; k < N; ++k) {
            const double u = (x[k] - o) / h;
            const double fl = std::floor(u);
            if (fl < 0 || fl >= n - 1) {
                ++diag.off_mask;
                return 0.0;
            }
            i0[k] = static_cast<int>(fl);
            t[k] = u - fl;
        }
        double s = 0;
        bool any = false;
        for (int c = 0; c < (1 << N); ++c) {
            std::array<int, N> ii;
            double w = 1;
            for (int k = 0; k < N; ++k) {
                const bool hi = (c >> k) & 1;
                ii[k] = i0[k] + hi;
                w *= hi ? t[k] : 1 - t[k];
            }
            const std::size_t j = flat_index(ii);
            if (mask[j]) {
                any = true;
                s += w * values[j];
            }
        }
        if (!any) ++diag.off_mask;
        return s;
    }

    /// Adds a * (interpolation weights) at x into out; the exact transpose of operator().
    void scatter(const Vec<N>& x, double a, std::vector<double>& out) const {
        std::array<int, N> i0;
        std::array<double, N> t;
        const double o = origin();
        for (int k = 0; k < N; ++k) {
            const double u = (x[k] - o) / h;
            const double fl = std::floor(u);
            if (fl < 0 || fl >= n - 1) return;
            i0[k] = static_cast<int>(fl);
            t[k] = u - fl;
        }
        for (int c = 0; c < (1 << N); ++c) {
            std::array<int, N> ii;
            double w = 1;
            for (int k = 0; k < N; ++k) {
                const bool hi = (c >> k) & 1;
                ii[k] = i0[k] + hi;
                w *= hi ? t[k] : 1 - t[k];
            }
            const std::size_t j = flat_index(ii);
            if (mask[j]) out[j] += a * w;
        }
    }
};

/// Grid with n nodes per axis spanning the domain's bounding box; mask = strict interior.
template <int N> ScalarGrid<N> make_grid(const DomainModel<N>& d, int n) {
    if (n < 2) throw PreconditionError("make_grid: need at least two nodes per axis");
    ScalarGrid<N> g;
    g.n = n;
    g.h = 2.0 * d.half_extent() / (n - 1);
    std::size_t total = 1;
    for (int k = 0; k < N; ++k) total *= n;
    g.values.assign(total, 0.0);
    g.mask.assign(total, 0);
    for (std::size_t i = 0; i < total; ++i) g.mask[i] = d.rho(g.node(i)) < 0;
    return g;
}

/// Samples f at masked nodes.
template <int N, class F> ScalarGrid<N> sample(const ScalarGrid<N>& like, F&& f) {
    ScalarGrid<N> g = like;
    for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = g.mask[i] ? f(g.node(i)) : 0.0;
    return g;
}

/// Nodal quadrature weight of the Riemannian volume, zero outside the mask.
template <class M, int N = M::dim> std::vector<double> volume_weights(const M& m, const ScalarGrid<N>& g) {
    std::vector<double> w(g.size(), 0.0);
    const double cell = std::pow(g.h, N);
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g.mask[i]) w[i] = m.volume_density(g.node(i)) * cell;
    return w;
}

template <class M, int N = M::dim>
double inner_product(const M& m, const ScalarGrid<N>& a, const ScalarGrid<N>& b) {
    const auto w = volume_weights(m, a);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * a.values[i] * b.values[i];
    return s;
}

template <class M, int N = M::dim> double l2_norm(const M& m, const ScalarGrid<N>& a) {
    return std::sqrt(inner_product(m, a, a));
}

/// Sum of Gaussian bumps, optionally modulated by a plane-wave carrier.
template <int N> struct GaussianField {
    struct Bump {
        double amplitude;
        Vec<N> center;
        double sigma;
    };
    std::vector<Bump> bumps;

    double operator()(const Vec<N>& x, Diagnostics&) const { return (*this)(x); }
    double operator()(const Vec<N>& x) const {
        double s = 0;
        for (const auto& b : bumps) s += b.amplitude * std::exp(-(x - b.center).squaredNorm() / (2 * b.sigma * b.sigma));
        return s;
    }
};

// Binary grid format: "GXR1", u32 nodes per axis, f64 spacing, f32 values, u8 mask (all LE).

namespace detail {
inline bool little_endian() {
    const std::uint16_t one = 1;
    std::uint8_t b;
    std::memcpy(&b, &one, 1);
    return b == 1;
}
template <class T> void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if (!little_endian()) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <class T> T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("grid file truncated");
    if (!little_endian()) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}
}  // namespace detail

template <int N> void write_grid(const ScalarGrid<N>& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path);
    os.write("GXR1", 4);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.n));
    detail::put_le<double>(os, g.h);
    for (double v : g.values) detail::put_le<float>(os, static_cast<float>(v));
    os.write(reinterpret_cast<const char*>(g.mask.data()), static_cast<std::streamsize>(g.mask.size()));
}

template <int N> ScalarGrid<N> read_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "GXR1", 4) != 0) throw Error(path + ": bad magic");
    ScalarGrid<N> g;
    g.n = static_cast<int>(detail::get_le<std::uint32_t>(is));
    g.h = detail::get_le<double>(is);
    std::size_t total = 1;
    for (int k = 0; k < N; ++k) total *= g.n;
    g.values.resize(total);
    for (auto& v : g.values) v = detail::get_le<float>(is);
    g.mask.resize(total);
    if (!is.read(reinterpret_cast<char*>(g.mask.data()), static_cast<std::streamsize>(total)))
        throw Error(path + ": truncated mask");
    return g;
}

}  // namespace gxr
