#pragma once

#include "core.hpp"

#include <vector>

namespace gxr {

/// Equal-weight rule on the unit sphere S^{N-1}: uniform angles in 2D, Fibonacci lattice in 3D.
template <int N> struct SphereRule {
    std::vector<Vec<N>> nodes;
    double weight = 0;
};

template <int N> SphereRule<N> sphere_rule(int count, double offset = 0.5) {
    if (count < 1) throw PreconditionError("sphere_rule: count must be positive");
    SphereRule<N> r;
    r.nodes.reserve(count);
    r.weight = sphere_volume<N>() / count;
    if constexpr (N == 2) {
        for (int j = 0; j < count; ++j) {
            const double a = 2 * pi * (j + offset) / count;
            r.nodes.emplace_back(std::cos(a), std::sin(a));
        }
    } else {
        const double golden = pi * (3.0 - std::sqrt(5.0));
        for (int j = 0; j < count; ++j) {
            const double z = 1.0 - 2.0 * (j + 0.5) / count;
            const double rho = std::sqrt(std::max(0.0, 1 - z * z));
            const double a = golden * j;
            r.nodes.emplace_back(rho * std::cos(a), rho * std::sin(a), z);
        }
    }
    return r;
}

}  // namespace gxr
