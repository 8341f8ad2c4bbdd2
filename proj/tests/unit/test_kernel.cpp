#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "coulomb/experiments.hpp"
#include "coulomb/kernel.hpp"
#include "coulomb/rng.hpp"

using namespace coulomb;

namespace {

const TorusKernel& kernel() {
    static const TorusKernel k;
    return k;
}

// Frozen regression values (Ewald, alpha = 4 and 8 agree to 1e-14).
constexpr double g_half = -0.06381603683657;
constexpr double g_reg0_frozen = -0.225784959440753;
constexpr double m_pot_frozen = 0.0638160368365783;

Vec3 random_point(Rng& r) { return {r.uniform(), r.uniform(), r.uniform()}; }

}  // namespace

TEST(TorusKernel, HalfPointByTwoEwaldSplittings) {
    EwaldSum a4(4.0), a8(8.0);
    Vec3 h{0.5, 0.5, 0.5};
    EXPECT_NEAR(a4.value(h), a8.value(h), 1e-10);
    EXPECT_NEAR(a4.value(h), g_half, 1e-13);
    EXPECT_NEAR(kernel().eval_direct(h), g_half, 1e-13);
}

TEST(TorusKernel, AlphaInvarianceOverRange) {
    Rng r(11);
    std::vector<EwaldSum> sums;
    for (double a : {3.0, 4.0, 6.0, 8.0, 10.0}) sums.emplace_back(a);
    for (int i = 0; i < 50; ++i) {
        Vec3 x = random_point(r);
        if (torus_distance(x, {0, 0, 0}) < 1e-3) continue;
        double ref = sums[2].value(x);
        for (const auto& s : sums) EXPECT_NEAR(s.value(x), ref, 1e-10);
    }
}

TEST(TorusKernel, EvenSymmetry) {
    Rng r(12);
    for (int i = 0; i < 100; ++i) {
        Vec3 x = random_point(r);
        EXPECT_NEAR(kernel()(x), kernel()(-x), 1e-12);
        EXPECT_NEAR(kernel().eval_direct(x), kernel().eval_direct(-x), 1e-12);
    }
}

TEST(TorusKernel, MidpointGridMeanIsZero) {
    // Midpoint centers avoid the singular point, so the 64^3 mean only carries
    // the aliasing term g((1/2,1/2,1/2)) / 64^2.
    const int M = 64;
    double s = 0.0;
    for (int a = 0; a < M; ++a)
        for (int b = 0; b < M; ++b)
            for (int c = 0; c < M; ++c) s += kernel()(Vec3{(a + 0.5) / M, (b + 0.5) / M, (c + 0.5) / M});
    double mean = s / (M * M * M);
    EXPECT_LT(std::abs(mean), 5e-3);
    EXPECT_NEAR(mean, g_half / (M * M), 1e-6);
}

TEST(TorusKernel, MinimumOracle) {
    EXPECT_GE(kernel().m_pot(), 0.0);
    EXPECT_NEAR(kernel().m_pot(), m_pot_frozen, 1e-8);
    EXPECT_NEAR(kernel().m_pot(), -g_half, 1e-8);
    Vec3 a = kernel().argmin();
    EXPECT_NEAR(kernel().eval_direct(a), kernel().eval_direct(wrap_unit(-a)), 1e-12);
    EXPECT_NEAR(kernel().g_reg0(), g_reg0_frozen, 1e-12);
}

TEST(TorusKernel, BoundedBelowByMinusMpot) {
    Rng r(13);
    for (int i = 0; i < 2000; ++i) EXPECT_GE(kernel()(random_point(r)), -kernel().m_pot() - 1e-9);
}

TEST(TorusKernel, TableMatchesDirectEwald) {
    Rng r(14);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        Vec3 x = random_point(r);
        worst = std::max(worst, std::abs(kernel()(x) - kernel().eval_direct(x)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(TorusKernel, SixthOrderLaplacianEqualsOne) {
    Rng r(15);
    auto f = [](const Vec3& x) { return kernel().eval_direct(x); };
    for (int i = 0; i < 40; ++i) {
        Vec3 x = random_point(r);
        if (torus_distance(x, {0, 0, 0}) <= 0.2) continue;
        EXPECT_NEAR(detail::fd_laplacian(f, x, 1.0 / 64, 6), 1.0, 1e-3);
    }
}

TEST(TorusKernel, SecondOrderStencilConvergesQuadratically) {
    auto f = [](const Vec3& x) { return kernel().eval_direct(x); };
    Vec3 x{0.3, 0.15, 0.1};
    double e1 = std::abs(detail::fd_laplacian(f, x, 1.0 / 32, 2) - 1.0);
    double e2 = std::abs(detail::fd_laplacian(f, x, 1.0 / 64, 2) - 1.0);
    EXPECT_NEAR(std::log2(e1 / e2), 2.0, 0.15);
}

TEST(TorusKernel, SingularPartNearOrigin) {
    // g - kappa/|x| tends to the regularized self value.
    Vec3 x{1e-4, 0.0, 0.0};
    EXPECT_NEAR(kernel()(x) - kappa3 / 1e-4, kernel().g_reg0(), 1e-6);
}

TEST(TorusKernel, QuadraticFormIsNonnegative) {
    Rng r(16);
    for (int trial = 0; trial < 20; ++trial) {
        double form = 0.0;
        for (int a = -8; a <= 8; ++a)
            for (int b = -8; b <= 8; ++b)
                for (int c = -8; c <= 8; ++c) {
                    if ((a == 0 && b == 0 && c == 0) || a * a + b * b + c * c > 64) continue;
                    double re = r.uniform(-1.0, 1.0), im = r.uniform(-1.0, 1.0);
                    form += (re * re + im * im) * TorusKernel::fourier_coefficient(a, b, c);
                }
        EXPECT_GE(form, -1e-12);
    }
    EXPECT_NEAR(TorusKernel::fourier_coefficient(1, 0, 0), 1.0 / (4.0 * std::numbers::pi * std::numbers::pi), 1e-15);
}

TEST(TorusKernel, Errors) {
    EXPECT_THROW(kernel()(Vec3{0.0, 0.0, 0.0}), SingularInputError);
    EXPECT_THROW(kernel()(Vec3{1.0, 0.0, -1.0}), SingularInputError);
    TorusKernel::Options o;
    o.dimension = 4;
    EXPECT_THROW(TorusKernel{o}, UnsupportedDimensionError);
    EXPECT_THROW(kernel().smeared(Vec3{0.1, 0.1, 0.1}, 0.0), DomainError);
    EXPECT_THROW(kernel().smeared(Vec3{0.1, 0.1, 0.1}, 0.6), DomainError);
    EXPECT_THROW(EwaldSum(-1.0), DomainError);
}

TEST(TorusKernel, TableRoundTripAndChecksum) {
    auto dir = std::filesystem::temp_directory_path() / "coulomb_kernel_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "table.bin").string();
    TorusKernel::Options o;
    o.table_resolution = 40;
    o.min_search_grid = 32;
    TorusKernel k(o);
    k.save_table(path);
    TorusKernel back = TorusKernel::load_table(path);
    Rng r(17);
    for (int i = 0; i < 50; ++i) {
        Vec3 x = random_point(r);
        EXPECT_EQ(k(x), back(x));
    }
    EXPECT_EQ(k.m_pot(), back.m_pot());
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        char c = 0x5a;
        f.write(&c, 1);
    }
    EXPECT_THROW(TorusKernel::load_table(path), IoError);
    EXPECT_THROW(TorusKernel::load_table((dir / "missing.bin").string()), IoError);
}

TEST(Smearing, SelfEnergyFrozen) {
    EXPECT_NEAR(kernel().smeared_self_energy(0.5), 0.0152009722695, 1e-10);
    EXPECT_NEAR(kernel().smeared_self_energy(0.25), 0.16868690398, 1e-9);
}

TEST(Smearing, SpectralAgreesWithRealSpace) {
    EXPECT_NEAR(kernel().smeared(Vec3{0.3, 0.1, 0.2}, 0.2), kernel().smeared_spectral(Vec3{0.3, 0.1, 0.2}, 0.2, 40), 1e-6);
}

TEST(Smearing, FreeSelfEnergyMonteCarlo) {
    FreeKernel g;
    const double r = 0.3;
    EXPECT_NEAR(g.smeared(Vec3{0, 0, 0}, r), 3.0 / (10.0 * std::numbers::pi * r), 1e-14);
    Rng rng(18);
    auto ball = [&] {
        for (;;) {
            Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            if (norm2(p) <= 1.0) return r * p;
        }
    };
    const int n = 4000000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += g(ball() - ball());
    EXPECT_NEAR(s / n / (3.0 / (10.0 * std::numbers::pi * r)), 1.0, 1e-3);
}

TEST(Smearing, NewtonOutsideTwoRadii) {
    FreeKernel g;
    for (double s : {0.4, 0.5, 1.0}) EXPECT_NEAR(g.smeared(Vec3{s, 0, 0}, 0.2), g(Vec3{s, 0, 0}), 1e-14);
    EXPECT_LT(g.smeared(Vec3{0.1, 0, 0}, 0.2), g(Vec3{0.1, 0, 0}));
}

TEST(Smearing, SubharmonicConstantIsStable) {
    std::vector<double> c;
    for (double r : {1.0 / 8, 1.0 / 16, 1.0 / 32}) c.push_back(subharmonic_ratio(kernel(), r, 24));
    double lo = *std::min_element(c.begin(), c.end()), hi = *std::max_element(c.begin(), c.end());
    EXPECT_GT(lo, 0.0);
    EXPECT_LE(hi / lo, 1.3);
    // The background term alone gives 1/5.
    EXPECT_NEAR(hi, 0.2, 0.05);
}

TEST(FreeKernel, NormalizationAndHomogeneity) {
    FreeKernel g;
    EXPECT_NEAR(g(Vec3{1, 0, 0}), 1.0 / (4.0 * std::numbers::pi), 1e-16);
    Vec3 x{0.3, -0.2, 0.5};
    EXPECT_NEAR(g(2.0 * x), 0.5 * g(x), 1e-15);
    EXPECT_THROW(g(Vec3{0, 0, 0}), SingularInputError);
    EXPECT_THROW(FreeKernel(2), UnsupportedDimensionError);
    FreeKernel g5(5);
    std::array<double, 5> y{1, 0, 0, 0, 0};
    EXPECT_NEAR(g5(y), 1.0 / (3.0 * 5.0 * unit_ball_volume(5)), 1e-15);
}

TEST(FreeKernel, HarmonicOffOrigin) {
    FreeKernel g;
    auto f = [&](const Vec3& x) { return g(x); };
    Vec3 x = (0.7 / std::sqrt(3.0)) * Vec3{1, 1, 1};
    EXPECT_NEAR(detail::fd_laplacian(f, x, 1e-2, 6), 0.0, 1e-8);
}
