#pragma once

#include "core.hpp"

#include <string>

namespace gxr {

/// Smooth step: 0 for s <= 0, 1 for s >= 1.
inline double smoothstep(double s) {
    if (s <= 0) return 0;
    if (s >= 1) return 1;
    return s * s * s * (s * (6 * s - 15) + 10);
}

/// Weight phi on the unit sphere bundle.
///   constant:    phi = value
///   position:    value * cutoff(|x - center|) with 1 inside r_inner, 0 beyond r_outer
///   directional: value * cutoff of |cos angle(v, axis)|; vanishes on the cone of half-angle
///                angle_inner around +-axis, equals value outside angle_outer
///   halfspace:   value for v . axis > 0, else 0
template <int N> struct WeightField {
    enum class Kind { constant, position, directional, halfspace };
    Kind kind = Kind::constant;
    double value = 1.0;
    Vec<N> center = Vec<N>::Zero();
    double r_inner = 0.5, r_outer = 0.8;
    Vec<N> axis = Vec<N>::UnitX();
    double angle_inner = 0.2, angle_outer = 0.4;

    bool is_constant() const { return kind == Kind::constant; }
    bool nonnegative() const { return value >= 0; }
    bool even() const { return kind != Kind::halfspace; }

    double operator()(const Vec<N>& x, const Vec<N>& v) const {
        switch (kind) {
            case Kind::constant:
                return value;
            case Kind::position: {
                const double r = (x - center).norm();
                return value * (1.0 - smoothstep((r - r_inner) / (r_outer - r_inner)));
            }
            case Kind::directional: {
                const double c = std::abs(v.dot(axis)) / (v.norm() * axis.norm());
                const double ang = std::acos(std::min(1.0, c));
                return value * smoothstep((ang - angle_inner) / (angle_outer - angle_inner));
            }
            case Kind::halfspace:
                return v.dot(axis) > 0 ? value : 0.0;
        }
        return value;
    }

    static WeightField constant(double v = 1.0) {
        WeightField w;
        w.value = v;
        return w;
    }
    static WeightField directional(const Vec<N>& axis, double inner, double outer) {
        WeightField w;
        w.kind = Kind::directional;
        w.axis = axis;
        w.angle_inner = inner;
        w.angle_outer = outer;
        return w;
    }
    static WeightField halfspace(const Vec<N>& axis) {
        WeightField w;
        w.kind = Kind::halfspace;
        w.axis = axis;
        return w;
    }
    static WeightField position(const Vec<N>& c, double inner, double outer) {
        WeightField w;
        w.kind = Kind::position;
        w.center = c;
        w.r_inner = inner;
        w.r_outer = outer;
        return w;
    }
};

}  // namespace gxr
