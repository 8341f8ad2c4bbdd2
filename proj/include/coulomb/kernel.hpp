#pragma once

// Interaction kernels: the periodic Coulomb Green's function on the unit torus
// T^3 (Delta g = -delta_0 + 1, mean zero), the free-space Coulomb kernel on
// R^d (Delta g = -delta_0), and their smearings by normalized ball indicators.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"

namespace coulomb {

/// 1/(4 pi), the d=3 Coulomb normalization for Delta g = -delta_0.
inline constexpr double kappa3 = 0.25 * std::numbers::inv_pi;

namespace detail {

// erf(a r)/r, continuous at r = 0.
inline double erf_over_r(double a, double r) {
    double ar = a * r;
    if (ar < 1e-5) {
        return 2.0 * a * std::numbers::inv_sqrtpi * (1.0 - ar * ar / 3.0);
    }
    return std::erf(ar) / r;
}

// Interaction of two uniform unit-charge balls of radius r at separation s
// (kappa3 normalization); equals kappa3/s once s >= 2r.
inline double ball_ball_potential(double s, double r) {
    if (s >= 2.0 * r) return kappa3 / s;
    double t = s / r;
    double t2 = t * t;
    double t3 = t2 * t;
    return kappa3 / r * (1.2 - 0.5 * t2 + 0.1875 * t3 - t3 * t2 / 160.0);
}

// Potential of a uniform unit-charge ball of radius r at distance s.
inline double ball_potential(double s, double r) {
    if (s >= r) return kappa3 / s;
    return kappa3 * (3.0 * r * r - s * s) / (2.0 * r * r * r);
}

// Fourier transform of the normalized ball indicator at wavenumber k.
inline double ball_transform(double k, double r) {
    double x = k * r;
    if (x < 1e-4) return 1.0 - x * x / 10.0;
    return 3.0 * (std::sin(x) - x * std::cos(x)) / (x * x * x);
}

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

/// Ewald representation of the torus Green's function for one splitting
/// parameter alpha:
///
///   g(x) = sum_n erfc(a|x+n|)/(4 pi |x+n|) - 1/(4 a^2)
///        + sum_{xi != 0} exp(-pi^2 |xi|^2 / a^2) / (4 pi^2 |xi|^2) cos(2 pi xi.x)
///
/// Both tails are below 1e-16 with the automatic cutoffs.
class EwaldSum {
public:
    explicit EwaldSum(double alpha, int real_shells = 0, int recip_cutoff = 0) : alpha_(alpha) {
        if (!(alpha > 0.0)) throw DomainError("Ewald splitting parameter must be positive");
        real_radius_ = 6.0 / alpha;
        real_shells_ = real_shells > 0 ? real_shells : static_cast<int>(std::ceil(real_radius_ + 1.0));
        recip_cutoff_ = recip_cutoff > 0 ? recip_cutoff : static_cast<int>(std::ceil(6.1 * alpha / std::numbers::pi));
        const int K = recip_cutoff_;
        const double pi2 = std::numbers::pi * std::numbers::pi;
        // Half space: xi1 > 0, or xi1 == 0 and xi2 > 0, or xi1 == xi2 == 0 and xi3 > 0.
        for (int a = 0; a <= K; ++a) {
            for (int b = (a == 0 ? 0 : -K); b <= K; ++b) {
                for (int c = (a == 0 && b == 0 ? 1 : -K); c <= K; ++c) {
                    int q = a * a + b * b + c * c;
                    if (q > K * K) continue;
                    double coef = 2.0 * std::exp(-pi2 * q / (alpha * alpha)) / (4.0 * pi2 * q);
                    modes_.push_back({a, b, c, coef});
                }
            }
        }
    }

    double alpha() const { return alpha_; }
    int real_shells() const { return real_shells_; }
    int recip_cutoff() const { return recip_cutoff_; }

    /// g(x) for x not a lattice point.
    double value(const Vec3& x) const {
        Vec3 m = min_image(x);
        double r = norm(m);
        if (r <= 8.0 * std::numeric_limits<double>::epsilon()) {
            throw SingularInputError("torus Green's function evaluated at a lattice point");
        }
        return regular_part(m) + kappa3 / r;
    }

    /// g(x) - kappa3/|x| for x in (a neighbourhood of) the cube [-1/2, 1/2]^3,
    /// without reduction. Smooth there; equals g_reg0 at x = 0.
    double regular_part(const Vec3& x) const {
        return real_space_regular(x) + reciprocal(x) - 0.25 / (alpha_ * alpha_);
    }

    /// Reciprocal-space sum (without the -1/(4 a^2) constant).
    double reciprocal(const Vec3& x) const {
        const int K = recip_cutoff_;
        std::vector<std::complex<double>> ph(3 * (2 * K + 1));
        for (int k = 0; k < 3; ++k) {
            std::complex<double> e = std::polar(1.0, 2.0 * std::numbers::pi * x[k]);
            auto* p = &ph[k * (2 * K + 1) + K];
            p[0] = 1.0;
            for (int m = 1; m <= K; ++m) {
                p[m] = p[m - 1] * e;
                p[-m] = std::conj(p[m]);
            }
        }
        const auto* p1 = &ph[K];
        const auto* p2 = &ph[(2 * K + 1) + K];
        const auto* p3 = &ph[2 * (2 * K + 1) + K];
        double sum = 0.0;
        for (const auto& md : modes_) {
            sum += md.coef * (p1[md.a] * p2[md.b] * p3[md.c]).real();
        }
        return sum;
    }

    /// Real-space image sum with the n = 0 singularity kappa3/|x| removed.
    double real_space_regular(const Vec3& x) const {
        const int S = real_shells_;
        double sum = 0.0;
        for (int i = -S; i <= S; ++i) {
            for (int j = -S; j <= S; ++j) {
                for (int k = -S; k <= S; ++k) {
                    if (i == 0 && j == 0 && k == 0) {
                        sum -= kappa3 * detail::erf_over_r(alpha_, norm(x));
                        continue;
                    }
                    double s = norm(Vec3{x[0] + i, x[1] + j, x[2] + k});
                    if (s < real_radius_) sum += kappa3 * std::erfc(alpha_ * s) / s;
                }
            }
        }
        return sum;
    }

    /// Reciprocal sum on the periodic grid x_i = -1/2 + i/M (i = 0..M-1 per
    /// axis), computed by separable direct DFTs. Requires M > 2K so the
    /// grid resolves every retained mode. Output is row-major [i][j][k].
    std::vector<double> reciprocal_on_grid(int M) const {
        const int K = recip_cutoff_;
        if (M <= 2 * K) throw DomainError("grid too coarse for the reciprocal cutoff");
        const int W = 2 * K + 1;
        // Full coefficient cube (both half spaces, real symmetric weights).
        std::vector<double> A(static_cast<std::size_t>(W) * W * W, 0.0);
        for (const auto& md : modes_) {
            double c = 0.5 * md.coef;
            A[((md.a + K) * W + (md.b + K)) * W + (md.c + K)] += c;
            A[((-md.a + K) * W + (-md.b + K)) * W + (-md.c + K)] += c;
        }
        std::vector<std::complex<double>> e(static_cast<std::size_t>(M) * W);
        for (int i = 0; i < M; ++i) {
            double x = -0.5 + static_cast<double>(i) / M;
            for (int m = -K; m <= K; ++m) e[i * W + (m + K)] = std::polar(1.0, 2.0 * std::numbers::pi * m * x);
        }
        // axis 3
        std::vector<std::complex<double>> B(static_cast<std::size_t>(W) * W * M);
        for (int a = 0; a < W; ++a)
            for (int b = 0; b < W; ++b)
                for (int k = 0; k < M; ++k) {
                    std::complex<double> s = 0.0;
                    for (int c = 0; c < W; ++c) s += A[(a * W + b) * W + c] * e[k * W + c];
                    B[(a * W + b) * M + k] = s;
                }
        // axis 2
        std::vector<std::complex<double>> C(static_cast<std::size_t>(W) * M * M);
        for (int a = 0; a < W; ++a)
            for (int j = 0; j < M; ++j)
                for (int k = 0; k < M; ++k) {
                    std::complex<double> s = 0.0;
                    for (int b = 0; b < W; ++b) s += B[(a * W + b) * M + k] * e[j * W + b];
                    C[(a * M + j) * M + k] = s;
                }
        // axis 1
        std::vector<double> out(static_cast<std::size_t>(M) * M * M);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j)
                for (int k = 0; k < M; ++k) {
                    std::complex<double> s = 0.0;
                    for (int a = 0; a < W; ++a) s += C[(a * M + j) * M + k] * e[i * W + a];
                    out[(static_cast<std::size_t>(i) * M + j) * M + k] = s.real();
                }
        return out;
    }

private:
    struct Mode {
        int a, b, c;
        double coef;
    };
    double alpha_;
    double real_radius_;
    int real_shells_;
    int recip_cutoff_;
    std::vector<Mode> modes_;
};

/// Periodic Coulomb Green's function on T^3 with a tabulated fast path.
///
/// The table stores only the smooth remainder g(x) - kappa3/|x| on a
/// (M+3)^3 grid covering [-1/2 - h, 1/2 + h]^3 (h = 1/M); evaluation reduces
/// to the minimum image, interpolates the remainder tricubically and adds the
/// singular part analytically. Immutable after construction.
class TorusKernel {
public:
    struct Options {
        int dimension = 3;
        double alpha = 6.0;
        int real_shells = 0;   // 0: automatic
        int recip_cutoff = 0;  // 0: automatic
        int table_resolution = 64;  // 0: no table, every evaluation is a direct Ewald sum
        int min_search_grid = 128;  // 0: skip the m_pot search
    };

    TorusKernel() : TorusKernel(Options{}) {}

    explicit TorusKernel(const Options& opt) : opt_(opt), ewald_(checked(opt).alpha, opt.real_shells, opt.recip_cutoff) {
        g_reg0_ = ewald_.regular_part(Vec3{0.0, 0.0, 0.0});
        if (opt_.table_resolution > 0) build_table();
        if (opt_.min_search_grid > 0) find_minimum();
    }

    int dimension() const { return 3; }
    const Options& options() const { return opt_; }
    const EwaldSum& ewald() const { return ewald_; }
    bool tabulated() const { return !table_.empty(); }
    int table_resolution() const { return tabulated() ? opt_.table_resolution : 0; }

    /// Lower-bound constant: g >= -m_pot on T^3.
    double m_pot() const { return m_pot_; }
    /// A minimizer of g (the set of minimizers is closed under x -> -x).
    const Vec3& argmin() const { return argmin_; }
    /// lim_{x->0} (g(x) - kappa3/|x|).
    double g_reg0() const { return g_reg0_; }

    /// g(x): tabulated when a table is present, direct Ewald otherwise.
    double operator()(const Vec3& x) const {
        if (!tabulated()) return ewald_.value(x);
        Vec3 m = min_image(x);
        double r2 = norm2(m);
        if (r2 <= 64.0 * std::numeric_limits<double>::epsilon() * std::numeric_limits<double>::epsilon()) {
            throw SingularInputError("torus Green's function evaluated at a lattice point");
        }
        return kappa3 / std::sqrt(r2) + interpolate(m);
    }

    /// Direct Ewald evaluation, independent of the table.
    double eval_direct(const Vec3& x) const { return ewald_.value(x); }

    /// g(x) - kappa3/|x_min_image|; finite everywhere, g_reg0 at 0.
    double regular_part(const Vec3& x) const {
        Vec3 m = min_image(x);
        return tabulated() ? interpolate(m) : ewald_.regular_part(m);
    }

    /// (g * gamma_r)(x): average of g over the ball of radius r around x.
    double ball_average(const Vec3& x, double r) const {
        check_radius(r);
        return smeared_impl(x, r, r * r / 10.0, detail::ball_potential, r);
    }

    /// (g * gamma_r * gamma_r)(x). Exact: the background (Delta g = 1) adds
    /// r^2/5, and each lattice image within 2r is replaced by the
    /// ball-ball interaction (Newton's theorem outside 2r).
    double smeared(const Vec3& x, double r) const {
        check_radius(r);
        return smeared_impl(x, r, r * r / 5.0, detail::ball_ball_potential, 2.0 * r);
    }

    /// Smeared self-energy S(r) = (g * gamma_r * gamma_r)(0).
    double smeared_self_energy(double r) const { return smeared(Vec3{0.0, 0.0, 0.0}, r); }

    /// Spectral evaluation of (g * gamma_r * gamma_r)(x) truncated to
    /// |xi|_inf <= K. Independent of the real-space route; converges like K^-3.
    double smeared_spectral(const Vec3& x, double r, int K) const {
        double sum = 0.0;
        for (int a = -K; a <= K; ++a)
            for (int b = -K; b <= K; ++b)
                for (int c = -K; c <= K; ++c) {
                    if (a == 0 && b == 0 && c == 0) continue;
                    double q = a * a + b * b + c * c;
                    double gh = detail::ball_transform(2.0 * std::numbers::pi * std::sqrt(q), r);
                    sum += fourier_coefficient(a, b, c) * gh * gh *
                           std::cos(2.0 * std::numbers::pi * (a * x[0] + b * x[1] + c * x[2]));
                }
        return sum;
    }

    /// Fourier coefficient of g at frequency xi (0 at xi = 0).
    static double fourier_coefficient(int a, int b, int c) {
        int q = a * a + b * b + c * c;
        if (q == 0) return 0.0;
        return 1.0 / (4.0 * std::numbers::pi * std::numbers::pi * q);
    }

    /// Binary table file: magic, version, d, M, alpha, cutoffs, g_reg0,
    /// m_pot, argmin, data, FNV-1a checksum of everything before it.
    void save_table(const std::string& path) const {
        if (!tabulated()) throw DomainError("kernel has no table to save");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open kernel table for writing: " + path);
        std::vector<char> buf;
        auto put = [&buf](const auto& v) {
            const char* p = reinterpret_cast<const char*>(&v);
            buf.insert(buf.end(), p, p + sizeof(v));
        };
        buf.insert(buf.end(), table_magic, table_magic + 8);
        put(std::uint32_t{table_version});
        put(std::int32_t{3});
        put(std::int32_t(opt_.table_resolution));
        put(ewald_.alpha());
        put(std::int32_t(ewald_.real_shells()));
        put(std::int32_t(ewald_.recip_cutoff()));
        put(g_reg0_);
        put(m_pot_);
        put(argmin_);
        const char* p = reinterpret_cast<const char*>(table_.data());
        buf.insert(buf.end(), p, p + table_.size() * sizeof(double));
        put(detail::fnv1a(buf.data(), buf.size()));
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("failed writing kernel table: " + path);
    }

    static TorusKernel load_table(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open kernel table: " + path);
        std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t pos = 0;
        auto get = [&](auto& v) {
            if (pos + sizeof(v) > buf.size()) throw IoError("truncated kernel table: " + path);
            std::memcpy(&v, buf.data() + pos, sizeof(v));
            pos += sizeof(v);
        };
        if (buf.size() < 8 || std::memcmp(buf.data(), table_magic, 8) != 0) throw IoError("not a kernel table: " + path);
        pos = 8;
        std::uint32_t version;
        std::int32_t d, M, shells, cutoff;
        double alpha, reg0, mpot;
        Vec3 amin;
        get(version);
        if (version != table_version) throw IoError("unsupported kernel table version " + std::to_string(version));
        get(d);
        if (d != 3) throw UnsupportedDimensionError(d);
        get(M);
        get(alpha);
        get(shells);
        get(cutoff);
        get(reg0);
        get(mpot);
        get(amin);
        std::size_t count = static_cast<std::size_t>(M + 3) * (M + 3) * (M + 3);
        if (M <= 0 || pos + count * sizeof(double) + sizeof(std::uint64_t) != buf.size()) {
            throw IoError("kernel table size mismatch: " + path);
        }
        std::uint64_t expected = detail::fnv1a(buf.data(), pos + count * sizeof(double));
        std::uint64_t stored;
        std::memcpy(&stored, buf.data() + pos + count * sizeof(double), sizeof(stored));
        if (stored != expected) throw IoError("kernel table checksum mismatch: " + path);

        Options opt;
        opt.alpha = alpha;
        opt.real_shells = shells;
        opt.recip_cutoff = cutoff;
        opt.table_resolution = 0;
        opt.min_search_grid = 0;
        TorusKernel k(opt);
        k.opt_.table_resolution = M;
        k.table_.resize(count);
        std::memcpy(k.table_.data(), buf.data() + pos, count * sizeof(double));
        k.g_reg0_ = reg0;
        k.m_pot_ = mpot;
        k.argmin_ = amin;
        k.h_ = 1.0 / M;
        k.inv_h_ = M;
        return k;
    }

private:
    static constexpr char table_magic[8] = {'C', 'G', 'K', 'T', 'A', 'B', 'L', 'E'};
    static constexpr std::uint32_t table_version = 1;

    static const Options& checked(const Options& opt) {
        if (opt.dimension != 3) throw UnsupportedDimensionError(opt.dimension);
        if (opt.table_resolution < 0 || opt.min_search_grid < 0) throw DomainError("negative grid resolution");
        return opt;
    }

    static void check_radius(double r) {
        if (!(r > 0.0 && r <= 0.5)) throw DomainError("smearing radius must lie in (0, 1/2]");
    }

    template <typename F>
    double smeared_impl(const Vec3& x, double r, double background, F&& profile, double reach) const {
        Vec3 m = min_image(x);
        int S = static_cast<int>(std::ceil(reach)) + 1;
        double sum = background + regular_part(m);
        for (int i = -S; i <= S; ++i)
            for (int j = -S; j <= S; ++j)
                for (int k = -S; k <= S; ++k) {
                    double s = norm(Vec3{m[0] + i, m[1] + j, m[2] + k});
                    bool origin = (i == 0 && j == 0 && k == 0);
                    if (origin) {
                        sum += profile(s, r);  // replaces the kappa3/s already removed from regular_part
                    } else if (s < reach) {
                        sum += profile(s, r) - kappa3 / s;
                    }
                }
        return sum;
    }

    void build_table() {
        const int M = opt_.table_resolution;
        if (M < 8) throw DomainError("table resolution must be at least 8");
        h_ = 1.0 / M;
        inv_h_ = M;
        const int P = M + 3;
        std::vector<double> recip = ewald_.reciprocal_on_grid(M);
        table_.assign(static_cast<std::size_t>(P) * P * P, 0.0);
        const double shift = -0.25 / (ewald_.alpha() * ewald_.alpha());
        auto wrap = [M](int i) { return ((i % M) + M) % M; };
        for (int i = 0; i < P; ++i)
            for (int j = 0; j < P; ++j)
                for (int k = 0; k < P; ++k) {
                    Vec3 x{-0.5 + (i - 1) * h_, -0.5 + (j - 1) * h_, -0.5 + (k - 1) * h_};
                    double rc = recip[(static_cast<std::size_t>(wrap(i - 1)) * M + wrap(j - 1)) * M + wrap(k - 1)];
                    table_[(static_cast<std::size_t>(i) * P + j) * P + k] = ewald_.real_space_regular(x) + rc + shift;
                }
    }

    static void lagrange_weights(double t, double w[4]) {
        w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
        w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
        w[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
    }

    double interpolate(const Vec3& m) const {
        const int M = opt_.table_resolution;
        const int P = M + 3;
        int idx[3];
        double w[3][4];
        for (int a = 0; a < 3; ++a) {
            double u = (m[a] + 0.5) * inv_h_;
            int i = static_cast<int>(std::floor(u));
            i = std::clamp(i, 0, M - 1);
            lagrange_weights(u - i, w[a]);
            idx[a] = i;  // table index of node i-1 is i (ghost offset 1)
        }
        double sum = 0.0;
        for (int a = 0; a < 4; ++a) {
            double sa = 0.0;
            for (int b = 0; b < 4; ++b) {
                const double* row = &table_[(static_cast<std::size_t>(idx[0] + a) * P + (idx[1] + b)) * P + idx[2]];
                sa += w[1][b] * (w[2][0] * row[0] + w[2][1] * row[1] + w[2][2] * row[2] + w[2][3] * row[3]);
            }
            sum += w[0][a] * sa;
        }
        return sum;
    }

    // Dense grid search with the fast evaluator, then compass-search
    // refinement on the direct Ewald sum.
    void find_minimum() {
        const int G = opt_.min_search_grid;
        double best = std::numeric_limits<double>::infinity();
        Vec3 arg{};
        for (int i = 0; i < G; ++i)
            for (int j = 0; j < G; ++j)
                for (int k = 0; k < G; ++k) {
                    if (i == 0 && j == 0 && k == 0) continue;
                    Vec3 x{static_cast<double>(i) / G, static_cast<double>(j) / G, static_cast<double>(k) / G};
                    double v = (*this)(x);
                    if (v < best) {
                        best = v;
                        arg = x;
                    }
                }
        best = ewald_.value(arg);
        double step = 1.0 / G;
        while (step > 1e-10) {
            bool improved = false;
            for (int a = 0; a < 3; ++a)
                for (double sgn : {1.0, -1.0}) {
                    Vec3 y = arg;
                    y[a] += sgn * step;
                    double v = ewald_.value(y);
                    if (v < best) {
                        best = v;
                        arg = y;
                        improved = true;
                    }
                }
            if (!improved) step *= 0.5;
        }
        argmin_ = wrap_unit(arg);
        m_pot_ = -best;
    }

    Options opt_;
    EwaldSum ewald_;
    double g_reg0_ = 0.0;
    double m_pot_ = 0.0;
    Vec3 argmin_{};
    double h_ = 0.0;
    double inv_h_ = 0.0;
    std::vector<double> table_;
};

/// Free-space Coulomb kernel kappa_d |x|^{2-d} on R^d, normalized so that
/// Delta g = -delta_0.
class FreeKernel {
public:
    explicit FreeKernel(int d = 3) : d_(d) {
        if (d < 3) throw UnsupportedDimensionError(d);
        double sphere = d * unit_ball_volume(d);
        kappa_ = 1.0 / ((d - 2) * sphere);
    }

    int dimension() const { return d_; }
    double kappa() const { return kappa_; }

    double operator()(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != d_) throw DomainError("point dimension does not match kernel");
        double r2 = 0.0;
        for (double v : x) r2 += v * v;
        return from_r2(r2);
    }

    double operator()(const Vec3& x) const {
        if (d_ != 3) throw DomainError("point dimension does not match kernel");
        return from_r2(norm2(x));
    }

    /// (g * gamma_r * gamma_r)(x) for d = 3.
    double smeared(const Vec3& x, double r) const {
        if (d_ != 3) throw UnsupportedDimensionError(d_);
        if (!(r > 0.0)) throw DomainError("smearing radius must be positive");
        return detail::ball_ball_potential(norm(x), r);
    }

    /// (g * gamma_r)(x) for d = 3.
    double ball_average(const Vec3& x, double r) const {
        if (d_ != 3) throw UnsupportedDimensionError(d_);
        if (!(r > 0.0)) throw DomainError("smearing radius must be positive");
        return detail::ball_potential(norm(x), r);
    }

private:
    double from_r2(double r2) const {
        if (r2 <= std::numeric_limits<double>::min()) throw SingularInputError("free Coulomb kernel evaluated at 0");
        if (d_ == 3) return kappa_ / std::sqrt(r2);
        return kappa_ * std::pow(r2, 1.0 - 0.5 * d_);
    }

    int d_;
    double kappa_;
};

}  // namespace coulomb
