#pragma once

// Linear statistics, the potential field P mu_X on a grid, its L^1 norm via
// the negative part, and empirical exponential moments / tail frequencies.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diagnostics.hpp"
#include "equilibrium.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "kernel.hpp"
#include "system.hpp"

namespace coulomb {

/// Closed-form C^2 test function with closed-form Laplacian.
///
/// Torus family:     cos(2 pi k.x), registry name "cos:k1,k2,k3".
/// Euclidean family: (1 - (|x-c|/rho)^2)^3 on |x-c| < rho, registry name
///                   "bump:c1,c2,c3,rho"; support must lie inside Sigma.
class TestFunction {
public:
    static TestFunction cosine(std::array<int, 3> k) {
        TestFunction f;
        f.kind_ = Kind::cosine;
        f.domain_ = Domain::torus;
        f.k_ = k;
        f.name_ = "cos:" + std::to_string(k[0]) + "," + std::to_string(k[1]) + "," + std::to_string(k[2]);
        double q = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        f.lap_sup_ = 4.0 * std::numbers::pi * std::numbers::pi * q;
        f.mean_ = q == 0 ? 1.0 : 0.0;
        return f;
    }

    static TestFunction bump(const Vec3& center, double radius, const EquilibriumMeasure& eq) {
        if (!(radius > 0.0)) throw DomainError("bump radius must be positive");
        if (norm(center) + radius >= eq.radius()) {
            throw DomainError("bump support must lie strictly inside the equilibrium support");
        }
        TestFunction f;
        f.kind_ = Kind::bump;
        f.domain_ = Domain::euclidean;
        f.center_ = center;
        f.radius_ = radius;
        f.name_ = "bump:" + fmt(center[0]) + "," + fmt(center[1]) + "," + fmt(center[2]) + "," + fmt(radius);
        f.lap_sup_ = 18.0 / (radius * radius);
        // <phi, mu_V> = rho * 4 pi r^3 * int_0^1 (1-u^2)^3 u^2 du = rho * 64 pi r^3 / 315
        f.mean_ = eq.density() * 64.0 * std::numbers::pi * radius * radius * radius / 315.0;
        return f;
    }

    /// Look up a registry name.
    static TestFunction parse(std::string_view name, Domain domain, const EquilibriumMeasure* eq = nullptr) {
        auto colon = name.find(':');
        if (colon == std::string_view::npos) throw ConfigError("malformed test function name: " + std::string(name));
        std::string_view family = name.substr(0, colon);
        std::vector<double> args;
        std::string_view rest = name.substr(colon + 1);
        while (!rest.empty()) {
            auto comma = rest.find(',');
            std::string_view tok = rest.substr(0, comma);
            double v = 0.0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || p != tok.data() + tok.size()) {
                throw ConfigError("malformed test function argument in: " + std::string(name));
            }
            args.push_back(v);
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        if (family == "cos") {
            if (domain != Domain::torus) throw ConfigError("cos test functions live on the torus");
            if (args.size() != 3) throw ConfigError("cos needs three integer wavenumbers: " + std::string(name));
            std::array<int, 3> k{};
            for (int i = 0; i < 3; ++i) {
                if (args[i] != std::round(args[i])) throw ConfigError("cos wavenumbers must be integers");
                k[i] = static_cast<int>(args[i]);
            }
            return cosine(k);
        }
        if (family == "bump") {
            if (domain != Domain::euclidean) throw ConfigError("bump test functions live on R^3");
            if (args.size() != 4) throw ConfigError("bump needs center (3) and radius: " + std::string(name));
            if (!eq) throw ConfigError("bump test functions need equilibrium data");
            return bump(Vec3{args[0], args[1], args[2]}, args[3], *eq);
        }
        throw ConfigError("unknown test function family: " + std::string(family));
    }

    const std::string& name() const { return name_; }
    Domain domain() const { return domain_; }

    double operator()(const Vec3& x) const {
        if (kind_ == Kind::cosine) return std::cos(phase(x));
        double u2 = norm2(x - center_) / (radius_ * radius_);
        if (u2 >= 1.0) return 0.0;
        double a = 1.0 - u2;
        return a * a * a;
    }

    double laplacian(const Vec3& x) const {
        if (kind_ == Kind::cosine) return -lap_sup_ * std::cos(phase(x));
        double u2 = norm2(x - center_) / (radius_ * radius_);
        if (u2 >= 1.0) return 0.0;
        return (1.0 - u2) * (42.0 * u2 - 18.0) / (radius_ * radius_);
    }

    /// ||Delta phi||_inf.
    double laplacian_sup() const { return lap_sup_; }

    /// Torus: int phi. Euclidean: <phi, mu_V>.
    double reference_mean() const { return mean_; }

private:
    enum class Kind { cosine, bump };

    static std::string fmt(double v) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, p);
    }

    double phase(const Vec3& x) const { return 2.0 * std::numbers::pi * (k_[0] * x[0] + k_[1] * x[1] + k_[2] * x[2]); }

    Kind kind_ = Kind::cosine;
    Domain domain_ = Domain::torus;
    std::string name_;
    std::array<int, 3> k_{};
    Vec3 center_{};
    double radius_ = 0.0;
    double lap_sup_ = 0.0;
    double mean_ = 0.0;
};

/// Centered linear statistic sum_j phi(x_j) - N * reference_mean(phi).
inline double linear_statistic(std::span<const Vec3> xs, Domain domain, const TestFunction& phi) {
    if (phi.domain() != domain) throw DomainError("test function domain does not match configuration");
    double s = 0.0;
    for (const auto& x : xs) s += phi(x);
    return s - static_cast<double>(xs.size()) * phi.reference_mean();
}

template <typename Config>
double linear_statistic(const Config& config, const TestFunction& phi) {
    return linear_statistic(std::span<const Vec3>(config.positions()), Config::domain, phi);
}

enum class FieldMeasure { lebesgue, equilibrium };

/// P mu_X sampled at the centers of an M^3 grid of cubic cells.
struct FieldGrid {
    Domain domain = Domain::torus;
    FieldMeasure measure = FieldMeasure::lebesgue;
    int resolution = 0;
    Vec3 origin{};        // corner of cell (0,0,0)
    double spacing = 0.0;
    std::vector<double> values;
    std::vector<double> weights;          // quadrature weights, summing to the measure's mass
    std::vector<unsigned char> singular;  // cell contains a particle
    double zeta_statistic = 0.0;          // <zeta, mu_X>, Euclidean only

    std::size_t size() const { return values.size(); }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * resolution + j) * resolution + k;
    }
    Vec3 center(int i, int j, int k) const {
        return {origin[0] + (i + 0.5) * spacing, origin[1] + (j + 0.5) * spacing, origin[2] + (k + 0.5) * spacing};
    }
    double min_value() const {
        double m = std::numeric_limits<double>::infinity();
        for (double v : values) m = std::min(m, v);
        return m;
    }
};

/// Integral of kappa3/|x| over a cube of side h centered at 0:
/// kappa3 h^2 (3 ln(2 + sqrt 3) - pi/2).
inline double singular_cell_integral(double h) {
    return kappa3 * h * h * (3.0 * std::log(2.0 + std::sqrt(3.0)) - 0.5 * std::numbers::pi);
}

namespace detail {

inline void flag_particles(FieldGrid& f, std::span<const Vec3> xs, bool periodic) {
    const int M = f.resolution;
    for (const auto& x : xs) {
        int idx[3];
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            double u = (x[a] - f.origin[a]) / f.spacing;
            int i = static_cast<int>(std::floor(u));
            if (periodic) i = ((i % M) + M) % M;
            if (i < 0 || i >= M) inside = false;
            idx[a] = i;
        }
        if (inside) f.singular[f.index(idx[0], idx[1], idx[2])] = 1;
    }
}

// Sum over particles of g(c - x_j); a particle exactly at c contributes the
// average of g over the cell instead of +infinity.
inline double torus_field_at(const TorusKernel& g, std::span<const Vec3> xs, const Vec3& c, double h) {
    double v = 0.0;
    for (const auto& x : xs) {
        Vec3 d = min_image(c - x);
        if (norm2(d) == 0.0) {
            v += g.g_reg0() + singular_cell_integral(h) / (h * h * h);
        } else {
            v += g(d);
        }
    }
    return v;
}

// Midpoint values of g(. - x_j) are replaced by sub-sampled averages over the
// in-ball part of the 5^3 cells around each particle; the singular midpoint
// error there is erratic and dominates otherwise.
template <typename G>
void refine_near_particles(FieldGrid& f, std::span<const Vec3> xs, const G& g, double R) {
    constexpr int S = 8;
    const int M = f.resolution;
    const double h = f.spacing;
    const double cell = h * h * h;
    for (const auto& x : xs) {
        int idx[3];
        for (int a = 0; a < 3; ++a) idx[a] = static_cast<int>(std::floor((x[a] - f.origin[a]) / h));
        for (int i = idx[0] - 2; i <= idx[0] + 2; ++i)
            for (int j = idx[1] - 2; j <= idx[1] + 2; ++j)
                for (int k = idx[2] - 2; k <= idx[2] + 2; ++k) {
                    if (i < 0 || j < 0 || k < 0 || i >= M || j >= M || k >= M) continue;
                    std::size_t id = f.index(i, j, k);
                    if (f.weights[id] <= 0.0) continue;
                    Vec3 c = f.center(i, j, k);
                    double sum = 0.0;
                    int in = 0;
                    for (int a = 0; a < S; ++a)
                        for (int b = 0; b < S; ++b)
                            for (int e = 0; e < S; ++e) {
                                Vec3 p{c[0] + ((a + 0.5) / S - 0.5) * h, c[1] + ((b + 0.5) / S - 0.5) * h,
                                       c[2] + ((e + 0.5) / S - 0.5) * h};
                                if (norm2(p) > R * R) continue;
                                Vec3 d = p - x;
                                sum += norm2(d) == 0.0 ? singular_cell_integral(h / S) * S * S * S / cell : g(d);
                                ++in;
                            }
                    if (in == 0) continue;
                    double point = norm2(c - x) == 0.0 ? singular_cell_integral(h) / cell : g(c - x);
                    f.values[id] += sum / in - point;
                }
    }
}

}  // namespace detail

/// P mu_X(x) = sum_j g(x - x_j) at the centers of the M^3 grid on T^3.
inline FieldGrid potential_field(const TorusKernel& g, std::span<const Vec3> xs, int M) {
    if (M < 16) throw DomainError("field grid resolution must be at least 16");
    FieldGrid f;
    f.domain = Domain::torus;
    f.measure = FieldMeasure::lebesgue;
    f.resolution = M;
    f.spacing = 1.0 / M;
    const std::size_t n = static_cast<std::size_t>(M) * M * M;
    f.values.assign(n, 0.0);
    f.weights.assign(n, 1.0 / static_cast<double>(n));
    f.singular.assign(n, 0);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
            for (int k = 0; k < M; ++k) f.values[f.index(i, j, k)] = detail::torus_field_at(g, xs, f.center(i, j, k), f.spacing);
    detail::flag_particles(f, xs, true);
    return f;
}

inline FieldGrid potential_field(const TorusConfiguration& config, int M) {
    return potential_field(config.model().kernel(), config.positions(), M);
}

/// Euclidean P mu_X(x) = sum_j g(x - x_j) + <V, mu_X> + N V(x).
///
/// FieldMeasure::equilibrium: grid over the bounding cube of Sigma with
/// weights mu_V(cell) (boundary cells by 6^3 sub-sampling, total mass
/// renormalized to one). FieldMeasure::lebesgue: grid over [-L, L]^3 with
/// weights h^3.
inline FieldGrid potential_field(const EuclideanConfiguration& config, const EquilibriumMeasure& eq, int M,
                                 FieldMeasure measure, double half_width = 0.0) {
    if (M < 16) throw DomainError("field grid resolution must be at least 16");
    const double L = measure == FieldMeasure::equilibrium ? eq.radius() : half_width;
    if (!(L > 0.0)) throw DomainError("Lebesgue field grid needs a positive half width");
    FieldGrid f;
    f.domain = Domain::euclidean;
    f.measure = measure;
    f.resolution = M;
    f.spacing = 2.0 * L / M;
    f.origin = {-L, -L, -L};
    const std::size_t n = static_cast<std::size_t>(M) * M * M;
    f.values.assign(n, 0.0);
    f.weights.assign(n, 0.0);
    f.singular.assign(n, 0);
    const auto& xs = config.positions();
    const auto& model = config.model();
    const double N = static_cast<double>(xs.size());
    const double vsum = config.external_sum();
    const double h = f.spacing;
    const double cell = h * h * h;
    const double R = eq.radius();
    double mass = 0.0;
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
            for (int k = 0; k < M; ++k) {
                Vec3 c = f.center(i, j, k);
                double v = vsum + N * model.external(c);
                for (const auto& x : xs) {
                    double r2 = norm2(c - x);
                    v += r2 == 0.0 ? singular_cell_integral(h) / cell : model.kernel()(c - x);
                }
                std::size_t id = f.index(i, j, k);
                f.values[id] = v;
                if (measure == FieldMeasure::lebesgue) {
                    f.weights[id] = cell;
                    continue;
                }
                // fraction of the cell inside the ball
                double s = norm(c);
                double half_diag = 0.5 * std::sqrt(3.0) * h;
                double frac;
                if (s + half_diag <= R) {
                    frac = 1.0;
                } else if (s - half_diag >= R) {
                    frac = 0.0;
                } else {
                    constexpr int S = 6;
                    int in = 0;
                    for (int a = 0; a < S; ++a)
                        for (int b = 0; b < S; ++b)
                            for (int e = 0; e < S; ++e) {
                                Vec3 p{c[0] + ((a + 0.5) / S - 0.5) * h, c[1] + ((b + 0.5) / S - 0.5) * h,
                                       c[2] + ((e + 0.5) / S - 0.5) * h};
                                if (norm2(p) <= R * R) ++in;
                            }
                    frac = static_cast<double>(in) / (S * S * S);
                }
                f.weights[id] = eq.density() * cell * frac;
                mass += f.weights[id];
            }
    if (measure == FieldMeasure::equilibrium) {
        for (auto& w : f.weights) w /= mass;
        f.zeta_statistic = eq.zeta_statistic(xs);
        detail::refine_near_particles(f, xs, model.kernel(), R);
    }
    detail::flag_particles(f, xs, false);
    return f;
}

/// Integral of the negative part, sum_c w_c min(P(c), 0).
inline double negative_part_integral(const FieldGrid& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += f.weights[i] * std::min(f.values[i], 0.0);
    return s;
}

/// ||P mu_X||_1 through the negative part: torus -2 int (P)_-, using that
/// P mu_X has mean zero; Euclidean with mu_V weights
/// <zeta, mu_X> - 2 int (P)_- d mu_V.
inline double l1_norm(const FieldGrid& f) {
    if (f.weights.size() != f.values.size()) throw DomainError("field weights do not match values");
    if (f.domain == Domain::torus) {
        if (f.measure != FieldMeasure::lebesgue) throw DomainError("torus fields carry Lebesgue weights");
        return -2.0 * negative_part_integral(f);
    }
    if (f.measure != FieldMeasure::equilibrium) throw DomainError("Euclidean L1 norm needs mu_V weights");
    return f.zeta_statistic - 2.0 * negative_part_integral(f);
}

/// Exact grid mean of P mu_X on the M^3 midpoint grid of T^3: aliasing maps
/// the mean of g(. - x) over the centers to g(M (c0 - x)) / M^2, c0 the
/// first center. A nonzero mean of g would add N times that mean.
inline double torus_grid_mean_residual(const TorusKernel& g, std::span<const Vec3> xs, int M) {
    double s = 0.0;
    const double c0 = 0.5 / M;
    for (const auto& x : xs) {
        Vec3 u{M * (c0 - x[0]), M * (c0 - x[1]), M * (c0 - x[2])};
        if (norm2(min_image(u)) == 0.0) continue;  // particle on a center: substituted cell average
        s += g(u);
    }
    return s / (static_cast<double>(M) * M);
}

/// Plain quadrature of |P| (no mean-zero or self-adjointness identity).
inline double l1_norm_direct(const FieldGrid& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += f.weights[i] * std::abs(f.values[i]);
    return s;
}

/// <Delta phi, P mu_X> on T^3 by midpoint quadrature; cells containing a
/// particle are integrated on a refined 8^3 sub-grid. Equals
/// -linear_statistic up to quadrature error.
inline double laplacian_pairing(const TorusConfiguration& config, const TestFunction& phi, int M) {
    if (phi.domain() != Domain::torus) throw DomainError("torus pairing needs a torus test function");
    FieldGrid f = potential_field(config, M);
    const auto& g = config.model().kernel();
    const auto& xs = config.positions();
    double s = 0.0;
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
            for (int k = 0; k < M; ++k) {
                std::size_t id = f.index(i, j, k);
                Vec3 c = f.center(i, j, k);
                if (!f.singular[id]) {
                    s += f.weights[id] * phi.laplacian(c) * f.values[id];
                    continue;
                }
                constexpr int S = 8;
                const double hs = f.spacing / S;
                double sub = 0.0;
                for (int a = 0; a < S; ++a)
                    for (int b = 0; b < S; ++b)
                        for (int e = 0; e < S; ++e) {
                            Vec3 p{c[0] + ((a + 0.5) / S - 0.5) * f.spacing, c[1] + ((b + 0.5) / S - 0.5) * f.spacing,
                                   c[2] + ((e + 0.5) / S - 0.5) * f.spacing};
                            sub += phi.laplacian(p) * detail::torus_field_at(g, xs, p, hs);
                        }
                s += f.weights[id] * sub / (S * S * S);
            }
    return s;
}

struct MomentEstimate {
    double value = 0.0;       // exp(log_value); +inf when it overflows
    double std_error = 0.0;     // of value
    double log_value = 0.0;   // log of the empirical mean
    double log_stderr = 0.0;  // of log_value
    bool log_domain = false;  // max lambda v > 500: only the log-domain figures are meaningful
};

/// Empirical mean of exp(lambda v_t) with a jackknife standard error over
/// `blocks` contiguous blocks of the trace.
inline MomentEstimate exp_moment(std::span<const double> v, double lambda, int blocks = 20) {
    if (v.size() < 100) throw DomainError("exponential moment needs at least 100 samples");
    if (blocks < 2) throw DomainError("jackknife needs at least two blocks");
    double top = -std::numeric_limits<double>::infinity();
    for (double x : v) top = std::max(top, lambda * x);
    MomentEstimate est;
    est.log_domain = top > 500.0;
    const std::size_t n = v.size();
    const std::size_t B = static_cast<std::size_t>(blocks);
    std::vector<double> block_sum(B, 0.0);
    std::vector<std::size_t> block_n(B, 0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(lambda * v[i] - top);
        std::size_t b = i * B / n;
        block_sum[b] += e;
        ++block_n[b];
        total += e;
    }
    double scaled_mean = total / static_cast<double>(n);
    est.log_value = top + std::log(scaled_mean);
    std::vector<double> loo_log(B), loo_val(B);
    for (std::size_t b = 0; b < B; ++b) {
        double m = (total - block_sum[b]) / static_cast<double>(n - block_n[b]);
        loo_log[b] = top + std::log(m);
        loo_val[b] = m;
    }
    auto jack = [B](const std::vector<double>& xs) {
        double mu = 0.0;
        for (double x : xs) mu += x;
        mu /= static_cast<double>(B);
        double s = 0.0;
        for (double x : xs) s += (x - mu) * (x - mu);
        return std::sqrt(static_cast<double>(B - 1) / static_cast<double>(B) * s);
    };
    est.log_stderr = jack(loo_log);
    if (!est.log_domain) {
        double scale = std::exp(top);
        est.value = scaled_mean * scale;
        est.std_error = jack(loo_val) * scale;
    } else {
        est.value = std::numeric_limits<double>::infinity();
        est.std_error = std::numeric_limits<double>::infinity();
    }
    return est;
}

struct TailEstimate {
    double probability = 0.0;
    double std_error = 0.0;
    double ess = 0.0;
    bool low_count = false;  // expected exceedance count below 5
};

/// Frequency of |v_t| >= threshold with a binomial error bar using the
/// effective sample size of the indicator trace (or `ess` if positive).
inline TailEstimate tail_probability(std::span<const double> v, double threshold, double ess = 0.0) {
    TailEstimate t;
    if (v.empty()) return t;
    std::vector<double> ind(v.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        bool hit = std::abs(v[i]) >= threshold;
        ind[i] = hit ? 1.0 : 0.0;
        hits += hit;
    }
    t.probability = static_cast<double>(hits) / static_cast<double>(v.size());
    t.ess = ess > 0.0 ? ess : effective_sample_size(ind);
    t.std_error = std::sqrt(t.probability * (1.0 - t.probability) / std::max(1.0, t.ess));
    t.low_count = t.probability * t.ess < 5.0;
    return t;
}

}  // namespace coulomb
