#pragma once

// Markov-chain output analysis: autocorrelation times, effective sample
// sizes, the split-chain convergence statistic and weighted line fits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <span>
#include <vector>

#include "errors.hpp"

namespace coulomb {

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

/// Integrated autocorrelation time with Sokal's self-consistent window
/// (W >= c tau). Always >= 1/2; a constant trace has tau = 1/2.
inline double integrated_autocorrelation_time(std::span<const double> v, double c = 5.0) {
    const std::size_t n = v.size();
    if (n < 4) return 0.5;
    double m = mean(v);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = v[i] - m;
    double c0 = 0.0;
    for (double x : d) c0 += x * x;
    if (c0 <= 0.0) return 0.5;
    double tau = 0.5;
    for (std::size_t t = 1; t < n / 2; ++t) {
        double ct = 0.0;
        for (std::size_t i = 0; i + t < n; ++i) ct += d[i] * d[i + t];
        tau += ct / c0;
        if (static_cast<double>(t) >= c * tau) break;
    }
    return std::max(0.5, tau);
}

inline double effective_sample_size(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double ess = static_cast<double>(v.size()) / (2.0 * integrated_autocorrelation_time(v));
    return std::min(ess, static_cast<double>(v.size()));
}

/// Split-chain potential scale reduction factor over >= 2 chains.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
    std::vector<std::span<const double>> halves;
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const auto& c : chains) len = std::min(len, c.size() / 2);
    if (chains.empty() || len < 2) throw DomainError("split_rhat needs chains with at least 4 samples");
    for (const auto& c : chains) {
        halves.emplace_back(c.data(), len);
        halves.emplace_back(c.data() + c.size() - len, len);
    }
    const double n = static_cast<double>(len);
    const double m = static_cast<double>(halves.size());
    std::vector<double> means;
    double w = 0.0;
    for (auto h : halves) {
        means.push_back(mean(h));
        w += variance(h);
    }
    w /= m;
    double b = n * variance(means);
    if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

struct ChainDiagnostics {
    double tau = 0.5;       // integrated autocorrelation time (pooled over chains)
    double ess = 0.0;       // summed over chains
    double rhat = 1.0;      // split-chain statistic (1 with a single chain)
    std::size_t samples = 0;
};

/// Diagnostics of one observable across independent chains.
inline ChainDiagnostics diagnose(const std::vector<std::vector<double>>& chains) {
    ChainDiagnostics out;
    double tau_weighted = 0.0;
    for (const auto& c : chains) {
        double ess = effective_sample_size(c);
        out.ess += ess;
        out.samples += c.size();
        tau_weighted += integrated_autocorrelation_time(c) * static_cast<double>(c.size());
    }
    if (out.samples > 0) out.tau = tau_weighted / static_cast<double>(out.samples);
    if (chains.size() >= 2) out.rhat = split_rhat(chains);
    return out;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

/// Weighted least squares y = a + b x with weights 1/sigma^2; the 95%
/// interval is slope +- 1.96 stderr.
inline LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y, std::span<const double> sigma,
                                 std::size_t min_points = 4) {
    if (x.size() != y.size() || x.size() != sigma.size()) throw DomainError("fit inputs differ in length");
    if (x.size() < min_points) throw DomainError("refusing to fit a slope with fewer than " + std::to_string(min_points) + " points");
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw DomainError("fit weights must be positive");
        double w = 1.0 / (sigma[i] * sigma[i]);
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
        sxx += w * x[i] * x[i];
        sxy += w * x[i] * y[i];
    }
    double det = sw * sxx - sx * sx;
    if (!(det > 0.0)) throw DomainError("degenerate fit abscissae");
    LineFit f;
    f.slope = (sw * sxy - sx * sy) / det;
    f.intercept = (sxx * sy - sx * sxy) / det;
    f.slope_stderr = std::sqrt(sw / det);
    f.ci_lo = f.slope - 1.96 * f.slope_stderr;
    f.ci_hi = f.slope + 1.96 * f.slope_stderr;
    return f;
}

}  // namespace coulomb
