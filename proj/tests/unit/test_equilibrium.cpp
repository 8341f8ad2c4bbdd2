#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "coulomb/equilibrium.hpp"
#include "coulomb/observables.hpp"
#include "coulomb/rng.hpp"

using namespace coulomb;

namespace {

const EquilibriumMeasure& eq() {
    static const auto m = EquilibriumMeasure::quadratic();
    return m;
}

double weighted_mean(const FieldGrid& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += f.weights[i] * f.values[i];
    return s;
}

EuclideanConfiguration four_particles() {
    const double R = eq().radius();
    return EuclideanConfiguration(quadratic_model(eq()), {{0.1 * R, 0.2 * R, -0.3 * R},
                                                          {-0.5 * R, 0.1 * R, 0.4 * R},
                                                          {0.05 * R, -0.6 * R, 0.1 * R},
                                                          {0.0, 0.0, 1.4 * R}});
}

}  // namespace

TEST(Equilibrium, ClosedFormConstants) {
    const double R = eq().radius();
    EXPECT_NEAR(R, std::pow(4.0 * std::numbers::pi, -1.0 / 3.0), 1e-15);
    EXPECT_NEAR(R, 0.4301, 1e-4);
    EXPECT_EQ(eq().density(), 3.0);
    EXPECT_NEAR(eq().mass(), 1.0, 1e-12);
    EXPECT_NEAR(eq().energy(), 0.0, 1e-15);
    EXPECT_NEAR(eq().potential_shift(), -0.9 * R * R, 1e-15);
    EXPECT_THROW(EquilibriumMeasure::quadratic(2), UnsupportedDimensionError);
    EXPECT_THROW(EquilibriumMeasure::quadratic(4), UnsupportedDimensionError);
}

TEST(Equilibrium, MeanPotentialByRadialQuadrature) {
    const double R = eq().radius();
    const int n = 100000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        double t = (i + 0.5) / n * R;
        s += eq().density() * 4.0 * std::numbers::pi * t * t * eq().potential()(Vec3{t, 0, 0}) * R / n;
    }
    EXPECT_NEAR(s, eq().mean_potential(), 1e-9);
}

TEST(Equilibrium, EulerLagrangeConstantOnSupport) {
    const double R = eq().radius();
    const double ref = eq().field_quadrature(0.5 * R) + eq().potential()(Vec3{0.5 * R, 0, 0});
    for (int i = 0; i < 20; ++i) {
        double s = (i + 0.5) / 20.0 * R;
        double v = eq().field_quadrature(s) + eq().potential()(Vec3{s, 0, 0});
        EXPECT_NEAR(v, ref, 1e-6) << "s = " << s;
        EXPECT_NEAR(eq().field_quadrature(s), eq().field_radial(s), 1e-10);
    }
    // The constant is -<V, mu_V>, which makes zeta vanish on the support.
    EXPECT_NEAR(ref, -eq().mean_potential(), 1e-10);
}

TEST(Equilibrium, NewtonOutsideSupport) {
    const double R = eq().radius();
    for (int i = 0; i < 10; ++i) {
        double s = R * (1.05 + 0.5 * i);
        EXPECT_NEAR(eq().field_quadrature(s), kappa3 / s, 1e-8) << "s = " << s;
    }
}

TEST(Zeta, VanishesOnSupportAndIsNonnegative) {
    EXPECT_EQ(eq().zeta(Vec3{0, 0, 0}), 0.0);
    EXPECT_EQ(eq().zeta(Vec3{eq().radius(), 0, 0}), 0.0);
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        Vec3 x{r.uniform(-5, 5), r.uniform(-5, 5), r.uniform(-5, 5)};
        if (norm(x) > 5.0) continue;
        EXPECT_GE(eq().zeta(x), 0.0);
        if (eq().contains(x)) {
            EXPECT_EQ(eq().zeta(x), 0.0);
        }
    }
    // Tracks V at infinity.
    EXPECT_NEAR(eq().zeta(Vec3{100, 0, 0}) / eq().potential()(Vec3{100, 0, 0}), 1.0, 1e-3);
}

TEST(Zeta, SupremumDistanceToPotential) {
    double sup = 0.0;
    const int n = 50000;
    for (int i = 0; i <= n; ++i) {
        double s = 5.0 * i / n;
        sup = std::max(sup, std::abs(eq().zeta_radial(s) - eq().potential()(Vec3{s, 0, 0})));
    }
    EXPECT_NEAR(sup, eq().zeta_minus_potential_sup(), 1e-8);
}

TEST(Zeta, StatisticOracles) {
    const double R = eq().radius();
    Rng r(2);
    EXPECT_EQ(eq().zeta_statistic(uniform_ball_points(20, R, r)), 0.0);

    std::vector<Vec3> one{{0.0, 2.0 * R, 0.0}};
    EXPECT_NEAR(eq().zeta_statistic(one), R * R, 1e-15);
    double by_quadrature = eq().field_quadrature(2.0 * R) + eq().mean_potential() + eq().potential()(one[0]);
    EXPECT_NEAR(eq().zeta_statistic(one), by_quadrature, 1e-10);

    std::vector<Vec3> xs{{0.1, 0, 0}, {1.2 * R, 0, 0}};
    double prev = eq().zeta_statistic(xs);
    for (int i = 0; i < 20; ++i) {
        xs[1] = 1.1 * xs[1];
        double next = eq().zeta_statistic(xs);
        EXPECT_GT(next, prev);
        prev = next;
    }
}

TEST(L1Machinery, SelfAdjointness) {
    auto c = four_particles();
    auto f48 = potential_field(c, eq(), 48, FieldMeasure::equilibrium);
    auto f96 = potential_field(c, eq(), 96, FieldMeasure::equilibrium);
    // Midpoint error is O(h^2); one Richardson step removes it.
    double rich = (4.0 * weighted_mean(f96) - weighted_mean(f48)) / 3.0;
    double zeta = eq().zeta_statistic(c);
    EXPECT_GT(zeta, 0.0);
    EXPECT_NEAR(rich, zeta, 1e-5);
    EXPECT_NEAR(weighted_mean(f96), zeta, 1e-3);
}

TEST(L1Machinery, NegativePartIdentity) {
    auto c = four_particles();
    auto f = potential_field(c, eq(), 96, FieldMeasure::equilibrium);
    EXPECT_NEAR(l1_norm(f) / l1_norm_direct(f), 1.0, 0.01);
}

TEST(L1Machinery, LowerBoundOnPartitionIntegral) {
    // int e^{-beta P} dx >= (1/C) e^{beta/2 (||P||_{L1(mu_V)} - <zeta, mu_X>)} - 1/C, C = ||mu_V||_inf.
    Rng r(3);
    const double C = eq().density();
    for (int t = 0; t < 4; ++t) {
        EuclideanConfiguration c(quadratic_model(eq()), uniform_ball_points(4, 1.2 * eq().radius(), r));
        auto fv = potential_field(c, eq(), 32, FieldMeasure::equilibrium);
        auto fl = potential_field(c, eq(), 48, FieldMeasure::lebesgue, 1.5);
        for (double beta : {0.5, 1.0, 3.0}) {
            double integral = 0.0;
            for (std::size_t i = 0; i < fl.size(); ++i) integral += fl.weights[i] * std::exp(-beta * fl.values[i]);
            double rhs = std::exp(0.5 * beta * (l1_norm(fv) - fv.zeta_statistic)) / C - 1.0 / C;
            EXPECT_GE(integral, rhs);
        }
    }
}
