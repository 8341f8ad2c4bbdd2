#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <memory>
#include <numbers>

#include "coulomb/diagnostics.hpp"
#include "coulomb/equilibrium.hpp"
#include "coulomb/observables.hpp"
#include "coulomb/sampler.hpp"

using namespace coulomb;

namespace {

std::shared_ptr<const TorusKernel> kernel() {
    static auto k = std::make_shared<const TorusKernel>();
    return k;
}

ChainState<TorusModel> torus_chain(std::vector<Vec3> xs, double beta, std::uint64_t seed, double sigma = 0.1) {
    return {TorusConfiguration(TorusModel(kernel()), std::move(xs)), beta, Rng(seed, 1), sigma};
}

// Expected TV distance between p and an n-sample empirical histogram of p.
double expected_tv(const std::vector<double>& p, double n) {
    double s = 0.0;
    for (double q : p) s += std::sqrt(2.0 * q * (1.0 - q) / (std::numbers::pi * n));
    return 0.5 * s;
}

// Exact draw from the 48^3 midpoint law, uniform inside the cell.
Vec3 draw_displacement(const std::vector<double>& cdf, int M, Rng& r) {
    double u = r.uniform() * cdf.back();
    std::size_t cell = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), cdf.size() - 1);
    int a = static_cast<int>(cell / (M * M)), b = static_cast<int>((cell / M) % M), c = static_cast<int>(cell % M);
    return {(a + r.uniform()) / M, (b + r.uniform()) / M, (c + r.uniform()) / M};
}

}  // namespace

TEST(Metropolis, FlatTargetAcceptsEverything) {
    Rng init(1);
    auto ch = torus_chain(uniform_torus_points(8, init), 0.0, 2, 0.3);
    for (int s = 0; s < 125; ++s) metropolis_sweep(ch);
    EXPECT_EQ(ch.proposed, 1000u);
    EXPECT_EQ(ch.accepted, 1000u);
    EXPECT_EQ(ch.acceptance_rate(), 1.0);
}

TEST(Metropolis, SingleParticleIsUniform) {
    auto ch = torus_chain({{0.3, 0.3, 0.3}}, 1.0, 3, 0.5);
    const int n = 100000, thin = 3;
    std::vector<double> xs;
    for (int i = 0; i < n * thin; ++i) {
        metropolis_sweep(ch);
        if ((i + 1) % thin == 0) xs.push_back(ch.config.position(0)[0]);
    }
    std::sort(xs.begin(), xs.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double lo = static_cast<double>(i) / n, hi = static_cast<double>(i + 1) / n;
        ks = std::max({ks, std::abs(xs[i] - lo), std::abs(hi - xs[i])});
    }
    EXPECT_LE(ks, 0.01);
}

TEST(Metropolis, PairDisplacementMatchesQuadrature) {
    const double beta = 2.0;
    const int bins = 8;
    auto law = pair_displacement_law(*kernel(), beta, 48, bins);
    auto ch = torus_chain({{0.1, 0.1, 0.1}, {0.6, 0.6, 0.6}}, beta, 4, 0.5);
    for (int s = 0; s < 1000; ++s) metropolis_sweep(ch);
    std::vector<double> hist(law.size(), 0.0), coord;
    const int n = 300000;
    for (int s = 0; s < n; ++s) {
        metropolis_sweep(ch);
        hist[displacement_bin(ch.config.position(0), ch.config.position(1), bins)] += 1.0 / n;
        coord.push_back(std::cos(2.0 * std::numbers::pi * (ch.config.position(1)[0] - ch.config.position(0)[0])));
    }
    EXPECT_GE(effective_sample_size(coord), 1e5);
    EXPECT_LE(total_variation(hist, law), 0.05);
}

TEST(Metropolis, DetailedBalanceFromEnergyDeltas) {
    Rng r(5);
    for (int t = 0; t < 100; ++t) {
        const double beta = r.uniform(0.1, 5.0);
        auto cfg = TorusConfiguration(TorusModel(kernel()), uniform_torus_points(6, r));
        std::size_t j = r.index(6);
        Vec3 x0 = cfg.position(j), x1{r.uniform(), r.uniform(), r.uniform()};
        double h0 = cfg.energy();
        double fwd = cfg.delta_energy_move(j, x1);
        cfg.apply_move(j, x1);
        double h1 = cfg.energy();
        double back = cfg.delta_energy_move(j, x0);
        // Symmetric proposal: pi(X) a(X->X') = pi(X') a(X'->X), in logs.
        double lhs = -beta * h0 + std::log(acceptance_probability(beta, fwd));
        double rhs = -beta * h1 + std::log(acceptance_probability(beta, back));
        EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(Metropolis, ZeroScaleProposalIsIdentityMove) {
    auto ch = torus_chain({{0.2, 0.2, 0.2}, {0.7, 0.7, 0.7}}, 1.0, 6, 0.0);
    // sigma = 0 proposes the current point, a zero-energy move.
    metropolis_sweep(ch);
    EXPECT_EQ(ch.proposed, 2u);
    EXPECT_EQ(ch.accepted, 2u);
}

TEST(HeatBath, SingleParticleUniformChiSquare) {
    auto ch = torus_chain({{0.5, 0.5, 0.5}}, 1.0, 7);
    const int draws = 6400, cells = 4;
    std::vector<double> count(cells * cells * cells, 0.0);
    for (int i = 0; i < draws; ++i) {
        heatbath_resample(ch, 0, 8);
        count[displacement_bin(Vec3{0, 0, 0}, ch.config.position(0), cells)] += 1.0;
    }
    double expect = static_cast<double>(draws) / count.size(), chi2 = 0.0;
    for (double c : count) chi2 += (c - expect) * (c - expect) / expect;
    boost::math::chi_squared dist(static_cast<double>(count.size() - 1));
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}

TEST(HeatBath, PreservesExactPairLaw) {
    const double beta = 2.0;
    const int M = 48, bins = 4, n = 8000;
    std::vector<double> fine = pair_displacement_law(*kernel(), beta, M, M);
    std::partial_sum(fine.begin(), fine.end(), fine.begin());
    auto law = pair_displacement_law(*kernel(), beta, M, bins);
    Rng r(8);
    std::vector<double> before(law.size(), 0.0), after(law.size(), 0.0);
    auto ch = torus_chain({{0.1, 0.2, 0.3}, {0.6, 0.6, 0.6}}, beta, 9);
    for (int i = 0; i < n; ++i) {
        Vec3 x0{r.uniform(), r.uniform(), r.uniform()};
        Vec3 x1 = wrap_unit(x0 + draw_displacement(fine, M, r));
        ch.config.set_positions({x0, x1});
        ch.config.total_energy();
        before[displacement_bin(x0, x1, bins)] += 1.0 / n;
        heatbath_resample(ch, 1, 16);
        after[displacement_bin(ch.config.position(0), ch.config.position(1), bins)] += 1.0 / n;
    }
    const double noise = 1.5 * expected_tv(law, n);
    EXPECT_LE(total_variation(before, law), noise);
    EXPECT_LE(total_variation(after, law), noise + 0.005);
}

TEST(HeatBath, ConditionalExponentialMomentIdentity) {
    Rng r(10);
    auto cfg = TorusConfiguration(TorusModel(kernel()), uniform_torus_points(5, r));
    for (double beta : {0.5, 2.0, 8.0}) {
        auto c = conditional_exp_moment(cfg, 2, beta, 16);
        EXPECT_NEAR(c.moment / c.inverse_partition, 1.0, 1e-6);
    }
}

TEST(HeatBath, Errors) {
    auto ch = torus_chain({{0.5, 0.5, 0.5}, {0.1, 0.1, 0.1}}, 1.0, 11);
    EXPECT_THROW(heatbath_resample(ch, 0, 1), DomainError);
    EXPECT_THROW(heatbath_resample(ch, 2, 8), DomainError);
    // A very cold chain must not overflow.
    ch.beta = 1e6;
    heatbath_resample(ch, 0, 8);
    EXPECT_TRUE(std::isfinite(ch.config.energy()));
}

TEST(RunChain, DeterministicGivenSeed) {
    std::vector<TestFunction> obs{TestFunction::cosine({1, 0, 0}), TestFunction::cosine({0, 1, 1})};
    RunOptions o;
    o.sweeps = 300;
    o.burn_in = 50;
    o.thin = 3;
    auto run = [&](std::uint64_t seed) {
        Rng init(seed, 0);
        auto ch = torus_chain(perturbed_lattice(8, 0.5, init), 1.0, seed);
        return run_chain(ch, o, obs, 0).trace;
    };
    auto a = run(12), b = run(12), c = run(13);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].energy, b[i].energy);
        EXPECT_EQ(a[i].values, b[i].values);
        EXPECT_EQ(a[i].acceptance, b[i].acceptance);
    }
    EXPECT_NE(a.back().energy, c.back().energy);
}

TEST(RunChain, TraceLengthAndFrozenSigma) {
    std::vector<TestFunction> obs{TestFunction::cosine({1, 0, 0})};
    RunOptions o;
    o.sweeps = 1003;
    o.burn_in = 100;
    o.thin = 7;
    Rng init(14);
    auto ch = torus_chain(perturbed_lattice(8, 0.5, init), 20.0, 14);
    std::vector<double> sigmas;
    auto run = run_chain(ch, o, obs, 3, [&](const ChainState<TorusModel>& c) { sigmas.push_back(c.sigma); });
    EXPECT_EQ(run.trace.size(), (1003u - 100u) / 7u);
    EXPECT_EQ(run.trace.front().chain_id, 3u);
    EXPECT_EQ(run.trace.front().sweep, 107u);
    ASSERT_FALSE(sigmas.empty());
    for (double s : sigmas) EXPECT_EQ(s, run.sigma);
    EXPECT_LE(run.diagnostics[0].ess, static_cast<double>(run.trace.size()) + 1e-9);
    EXPECT_GE(run.diagnostics[0].tau, 0.5);
}

TEST(RunChain, BadOptions) {
    std::vector<TestFunction> obs;
    Rng init(15);
    auto ch = torus_chain(perturbed_lattice(8, 0.5, init), 1.0, 15);
    RunOptions o;
    o.sweeps = 10;
    o.burn_in = 10;
    EXPECT_THROW(run_chain(ch, o, obs, 0), DomainError);
    o.sweeps = 20;
    o.thin = 0;
    EXPECT_THROW(run_chain(ch, o, obs, 0), DomainError);
    const auto eq = EquilibriumMeasure::quadratic();
    std::vector<TestFunction> wrong{TestFunction::bump(Vec3{0, 0, 0}, 0.2, eq)};
    o.thin = 1;
    EXPECT_THROW(run_chain(ch, o, wrong, 0), DomainError);
}

TEST(RunChain, FourChainsConverge) {
    std::vector<TestFunction> obs{TestFunction::cosine({1, 0, 0})};
    RunOptions o;
    o.sweeps = 20000;
    o.burn_in = 2000;
    std::vector<std::vector<double>> traces;
    for (std::uint64_t c = 0; c < 4; ++c) {
        Rng init(100 + c, 0);
        auto ch = torus_chain(perturbed_lattice(27, 0.5, init), 1.0, 100 + c);
        traces.push_back(trace_column(run_chain(ch, o, obs, c).trace, 0));
    }
    EXPECT_LE(diagnose(traces).rhat, 1.05);
}

TEST(RunChain, TunerReachesTargetWindow) {
    std::vector<TestFunction> none;
    RunOptions o;
    o.sweeps = 3000;
    o.burn_in = 1500;

    Rng init(16);
    auto hot = torus_chain(perturbed_lattice(27, 0.5, init), 10.0, 16);
    auto r1 = run_chain(hot, o, none, 0);
    EXPECT_GE(r1.acceptance, 0.2);
    EXPECT_LE(r1.acceptance, 0.6);

    const auto eq = EquilibriumMeasure::quadratic();
    ChainState<EuclideanModel> e{EuclideanConfiguration(quadratic_model(eq), uniform_ball_points(27, eq.radius(), init)),
                                 1.0, Rng(17, 1), 0.1};
    auto r2 = run_chain(e, o, none, 0);
    EXPECT_GE(r2.acceptance, 0.2);
    EXPECT_LE(r2.acceptance, 0.6);

    // Nearly flat target: the scale saturates at its cap.
    auto flat = torus_chain(perturbed_lattice(27, 0.5, init), 1.0, 18);
    auto r3 = run_chain(flat, o, none, 0);
    EXPECT_EQ(r3.sigma, o.sigma_max);
}

TEST(Histogram, BinsAndTotalVariation) {
    EXPECT_EQ(displacement_bin(Vec3{0.9, 0.9, 0.9}, Vec3{0.1, 0.1, 0.1}, 4), 0u);
    EXPECT_EQ(displacement_bin(Vec3{0, 0, 0}, Vec3{0.99, 0.0, 0.26}, 4), 3u * 16u + 1u);
    std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
    EXPECT_DOUBLE_EQ(total_variation(p, q), 0.5);
    EXPECT_THROW(total_variation(p, std::vector<double>{1.0}), DomainError);
    EXPECT_THROW(pair_displacement_law(*kernel(), 1.0, 10, 4), DomainError);
    auto law = pair_displacement_law(*kernel(), 0.0, 8, 2);
    for (double v : law) EXPECT_NEAR(v, 0.125, 1e-15);
}
