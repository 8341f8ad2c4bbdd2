#pragma once

// Analytic equilibrium data for the quadratic confinement V(x) = |x|^2/2 in
// d = 3 with g = kappa3/|x|. The Euler-Lagrange condition g*mu + V = const on
// the support forces the density rho = Delta V = 3 and mass one gives
// R = (4 pi)^{-1/3}. V is shifted by -9R^2/10 so that E(mu_V) = 0, which
// makes zeta = P mu_V vanish identically on the support.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "kernel.hpp"
#include "system.hpp"

namespace coulomb {

class EquilibriumMeasure {
public:
    /// Equilibrium measure of |x|^2/2 for the d-dimensional Coulomb kernel.
    /// Only d = 3 ships with analytic data.
    static EquilibriumMeasure quadratic(int d = 3) {
        if (d != 3) throw UnsupportedDimensionError(d);
        return EquilibriumMeasure();
    }

    int dimension() const { return 3; }
    double radius() const { return radius_; }
    double density() const { return density_; }
    double mass() const { return density_ * unit_ball_volume(3) * radius_ * radius_ * radius_; }
    /// Additive constant c in V = |x|^2/2 + c.
    double potential_shift() const { return shift_; }
    ConfiningPotential potential() const { return ConfiningPotential(shift_); }
    bool contains(const Vec3& x) const { return norm(x) <= radius_; }

    /// (g * mu_V)(x) as a function of s = |x|.
    double field_radial(double s) const {
        const double R2 = radius_ * radius_;
        if (s <= radius_) return 1.5 * R2 - 0.5 * s * s;
        return kappa3 / s;
    }
    double field(const Vec3& x) const { return field_radial(norm(x)); }

    /// (g * mu_V)(x) at |x| = s by direct quadrature over the ball, independent of
    /// the closed form. The angular 1/|x - y| singularity at t = s is removed by
    /// u = 1 - v^2 and the radial integral is split at t = s.
    double field_quadrature(double s) const {
        using boost::math::quadrature::gauss_kronrod;
        auto angular = [s](double t) {
            auto f = [s, t](double v) { return 2.0 * v / std::sqrt((s - t) * (s - t) + 2.0 * s * t * v * v); };
            return 2.0 * std::numbers::pi * gauss_kronrod<double, 31>::integrate(f, 0.0, std::numbers::sqrt2, 12, 1e-14);
        };
        auto radial = [&](double t) { return t * t * angular(t); };
        double total = 0.0;
        if (s > 0.0 && s < radius_) {
            total = gauss_kronrod<double, 31>::integrate(radial, 0.0, s, 12, 1e-13) +
                    gauss_kronrod<double, 31>::integrate(radial, s, radius_, 12, 1e-13);
        } else if (s == 0.0) {
            total = 2.0 * std::numbers::pi * radius_ * radius_;  // int_B 1/|y| dy, where the u-integral degenerates
        } else {
            total = gauss_kronrod<double, 31>::integrate(radial, 0.0, radius_, 12, 1e-13);
        }
        return density_ * kappa3 * total;
    }

    /// <V, mu_V> in closed form: 3R^2/10 + c.
    double mean_potential() const { return 0.3 * radius_ * radius_ + shift_; }

    /// E(mu_V) = 1/2 <g*mu_V, mu_V> + <V, mu_V>; zero by the choice of shift.
    double energy() const { return 0.5 * 1.2 * radius_ * radius_ + mean_potential(); }

    double zeta_radial(double s) const {
        if (s <= radius_) return 0.0;
        const double R = radius_;
        return R * R * R / s + 0.5 * s * s - 1.5 * R * R;
    }

    /// zeta = g*mu_V + <V, mu_V> + V: zero on the support, positive outside.
    double zeta(const Vec3& x) const { return zeta_radial(norm(x)); }

    /// sup_x |zeta(x) - V(x)| = 9R^2/10, attained at the origin.
    double zeta_minus_potential_sup() const { return 0.9 * radius_ * radius_; }

    template <typename Config>
    double zeta_statistic(const Config& config) const {
        double s = 0.0;
        for (const auto& x : config.positions()) s += zeta(x);
        return s;
    }

    double zeta_statistic(const std::vector<Vec3>& xs) const {
        double s = 0.0;
        for (const auto& x : xs) s += zeta(x);
        return s;
    }

private:
    EquilibriumMeasure()
        : radius_(std::cbrt(0.25 * std::numbers::inv_pi)), density_(3.0), shift_(-0.9 * radius_ * radius_) {}

    double radius_;
    double density_;
    double shift_;
};

inline EuclideanModel quadratic_model(const EquilibriumMeasure& eq) { return EuclideanModel(eq.potential()); }

}  // namespace coulomb
