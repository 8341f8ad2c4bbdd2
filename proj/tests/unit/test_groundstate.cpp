#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <memory>

#include "coulomb/equilibrium.hpp"
#include "coulomb/groundstate.hpp"

using namespace coulomb;

namespace {

std::shared_ptr<const TorusKernel> kernel() {
    static auto k = std::make_shared<const TorusKernel>();
    return k;
}

double n43(std::size_t n) { return std::pow(static_cast<double>(n), 4.0 / 3.0); }

}  // namespace

TEST(MinimizeTorus, SingleParticleHasZeroEnergy) {
    auto m = minimize_torus_energy(kernel(), 1, 3);
    EXPECT_EQ(m.energy, 0.0);
    EXPECT_EQ(m.positions.size(), 1u);
    EXPECT_FALSE(m.budget_exhausted);
}

TEST(MinimizeTorus, PairFindsKernelMinimum) {
    auto m = minimize_torus_energy(kernel(), 2, 4);
    EXPECT_NEAR(m.energy, -kernel()->m_pot(), 1e-6);
    Vec3 d = wrap_unit(m.positions[1] - m.positions[0]);
    EXPECT_LT(std::min(torus_distance(d, kernel()->argmin()), torus_distance(-d, kernel()->argmin())), 1e-3);
}

TEST(MinimizeTorus, BestOfRestartsIsMinimum) {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    AnnealOptions opt;
    opt.budget = 20000;
    auto best = minimize_torus_energy(kernel(), 8, seeds, opt, 2);
    for (auto s : seeds) EXPECT_LE(best.energy, minimize_torus_energy(kernel(), 8, s, opt).energy);
    // Independent of the number of workers.
    EXPECT_EQ(best.energy, minimize_torus_energy(kernel(), 8, seeds, opt, 1).energy);
}

TEST(MinimizeTorus, DeterministicAndBudgetFlag) {
    AnnealOptions opt;
    opt.budget = 5000;
    auto a = minimize_torus_energy(kernel(), 6, 9, opt), b = minimize_torus_energy(kernel(), 6, 9, opt);
    EXPECT_EQ(a.energy, b.energy);
    EXPECT_EQ(a.positions, b.positions);
    opt.descent_budget = 10;
    EXPECT_TRUE(minimize_torus_energy(kernel(), 6, 9, opt).budget_exhausted);
    EXPECT_THROW(minimize_torus_energy(kernel(), 0, 9, opt), DomainError);
    opt.stages = 0;
    EXPECT_THROW(minimize_torus_energy(kernel(), 4, 9, opt), DomainError);
}

TEST(Certificate, BoundIsNonpositive) {
    for (std::size_t n : {1u, 2u, 5u, 8u, 27u, 100u}) {
        auto c = certify_lower_bound(*kernel(), n);
        EXPECT_LE(c.bound, 0.0);
        EXPECT_GT(c.c_sub, 0.0);
        EXPECT_GT(c.self_energy, 0.0);
        EXPECT_LE(c.r, 0.5);
    }
    EXPECT_THROW(certify_lower_bound(*kernel(), 0), DomainError);
}

TEST(Certificate, FrozenValues) {
    auto c8 = certify_lower_bound(*kernel(), 8);
    EXPECT_DOUBLE_EQ(c8.r, 0.5);
    EXPECT_NEAR(c8.c_sub, 0.4, 0.02);
    EXPECT_NEAR(c8.bound, -3.2608, 1e-3);
    EXPECT_NEAR(certify_lower_bound(*kernel(), 16).bound, -8.4342, 1e-3);
}

TEST(Certificate, ScalesAsNToFourThirds) {
    std::vector<double> scaled;
    for (std::size_t n : {16u, 32u, 64u, 128u}) scaled.push_back(certify_lower_bound(*kernel(), n).scaled_bound());
    auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
    EXPECT_LE(*lo / *hi - 1.0, 0.25);
}

TEST(Certificate, SandwichesAnnealedMinimum) {
    for (std::size_t n : {2u, 8u, 16u}) {
        auto c = certify_lower_bound(*kernel(), n);
        auto m = minimize_torus_energy(kernel(), n, 11);
        EXPECT_LE(c.bound, m.energy);
    }
}

TEST(Certificate, InequalityChainOnRandomConfigurations) {
    Rng r(12);
    for (std::size_t n : {8u, 27u}) {
        auto cert = certify_lower_bound(*kernel(), n);
        for (int t = 0; t < 3; ++t) {
            auto xs = uniform_torus_points(n, r);
            auto a = audit_certificate(*kernel(), cert, xs);
            EXPECT_GE(a.spectral_energy, 0.0);
            EXPECT_NEAR(a.spectral_energy, a.real_space_energy, 1e-3 * std::max(1.0, a.real_space_energy));
            EXPECT_GE(a.pair_slack, 0.0);
            EXPECT_GE(a.bound_slack, 0.0);
        }
    }
}

TEST(Regularized, SingleParticleMatchesScalarMinimization) {
    const auto eq = EquilibriumMeasure::quadratic();
    auto m = regularized_ground_state(eq, 1, 13);
    auto f = [&](double s) { return eq.potential()(Vec3{s, 0, 0}) - eq.zeta_radial(s); };
    auto [s_min, f_min] = boost::math::tools::brent_find_minima(f, 0.0, 3.0 * eq.radius(), 50);
    EXPECT_NEAR(m.energy, f_min, 1e-8);
    EXPECT_NEAR(norm(m.positions[0]), s_min, 1e-3);
    EXPECT_NEAR(f_min, regularized_lower_bound(eq, 1), 1e-12);
}

TEST(Regularized, MinimizersStayInSupportAndAboveFrozenBound) {
    const auto eq = EquilibriumMeasure::quadratic();
    const double frozen = -0.9 * eq.radius() * eq.radius();
    std::vector<double> scaled;
    for (std::size_t n : {8u, 16u, 32u, 64u}) {
        auto m = regularized_ground_state(eq, n, 14);
        for (const auto& x : m.positions) EXPECT_LE(norm(x), eq.radius() + 1e-3);
        EXPECT_GE(m.energy, regularized_lower_bound(eq, n));
        EXPECT_GE(m.energy / n43(n), frozen);
        scaled.push_back(m.energy / n43(n));
        // Inside the droplet the regularized objective equals H.
        EuclideanConfiguration c(quadratic_model(eq), m.positions);
        EXPECT_NEAR(c.energy() - static_cast<double>(n) * eq.zeta_statistic(c), m.energy, 1e-9 * std::abs(m.energy));
    }
    EXPECT_NEAR(regularized_bound_constant(eq) * std::cbrt(eq.density()), 0.9 * eq.radius() * eq.radius(), 1e-15);
}
