#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace coulomb {

enum class Domain { torus, euclidean };

inline const char* to_string(Domain d) { return d == Domain::torus ? "torus" : "euclidean"; }

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline Vec3 operator-(const Vec3& a) { return {-a[0], -a[1], -a[2]}; }

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Reduce a coordinate to [0, 1).
inline double wrap_unit(double x) {
    double y = x - std::floor(x);
    return y >= 1.0 ? 0.0 : y;
}

inline Vec3 wrap_unit(const Vec3& x) { return {wrap_unit(x[0]), wrap_unit(x[1]), wrap_unit(x[2])}; }

/// Minimum-image representative of a torus displacement, in [-1/2, 1/2].
inline Vec3 min_image(const Vec3& d) {
    return {d[0] - std::nearbyint(d[0]), d[1] - std::nearbyint(d[1]), d[2] - std::nearbyint(d[2])};
}

inline double torus_distance(const Vec3& a, const Vec3& b) { return norm(min_image(a - b)); }

/// Volume of the unit ball in R^d.
inline double unit_ball_volume(int d) {
    return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

}  // namespace coulomb
