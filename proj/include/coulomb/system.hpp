#pragma once

// Particle configurations on T^3 or R^3 with cached per-particle energies.
//
// Torus:      H = sum_{i<j} g(x_i - x_j)
// Euclidean:  H = 1/2 sum_{j != k} g(x_j - x_k) + N sum_j V(x_j)
//
// The local energy of particle j is the potential field of the other N-1
// particles evaluated at x_j:
//   torus      l_j = sum_{k != j} g(x_k - x_j)
//   euclidean  l_j = sum_{k != j} g(x_j - x_k) + sum_{k != j} V(x_k) + (N-1) V(x_j)
// so that H = 1/2 sum_j l_j (torus) and H = 1/2 sum_j (l_j + 2 V(x_j)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "kernel.hpp"

namespace coulomb {

/// Closed-form confining potential V(x) = |x|^2/2 + shift on R^3.
class ConfiningPotential {
public:
    explicit ConfiningPotential(double shift = 0.0) : shift_(shift) {}

    double operator()(const Vec3& x) const { return 0.5 * norm2(x) + shift_; }
    double laplacian(const Vec3&) const { return 3.0; }
    double lower_bound() const { return shift_; }
    double shift() const { return shift_; }
    /// Closed form of int_{R^3} exp(-V).
    double exp_integral() const { return std::pow(2.0 * std::numbers::pi, 1.5) * std::exp(-shift_); }

private:
    double shift_;
};

class TorusModel {
public:
    static constexpr Domain domain = Domain::torus;

    explicit TorusModel(std::shared_ptr<const TorusKernel> kernel) : kernel_(std::move(kernel)) {
        if (!kernel_) throw DomainError("torus model needs a kernel");
    }

    double pair(const Vec3& a, const Vec3& b) const { return (*kernel_)(a - b); }
    double external(const Vec3&) const { return 0.0; }
    Vec3 canonical(const Vec3& x) const { return wrap_unit(x); }
    double separation2(const Vec3& a, const Vec3& b) const { return norm2(min_image(a - b)); }
    const TorusKernel& kernel() const { return *kernel_; }
    const std::shared_ptr<const TorusKernel>& kernel_ptr() const { return kernel_; }

private:
    std::shared_ptr<const TorusKernel> kernel_;
};

class EuclideanModel {
public:
    static constexpr Domain domain = Domain::euclidean;

    explicit EuclideanModel(ConfiningPotential v, FreeKernel g = FreeKernel(3)) : g_(g), v_(v) {
        if (g_.dimension() != 3) throw UnsupportedDimensionError(g_.dimension());
    }

    double pair(const Vec3& a, const Vec3& b) const { return g_(a - b); }
    double external(const Vec3& x) const { return v_(x); }
    Vec3 canonical(const Vec3& x) const { return x; }
    double separation2(const Vec3& a, const Vec3& b) const { return norm2(a - b); }
    const FreeKernel& kernel() const { return g_; }
    const ConfiningPotential& potential() const { return v_; }

private:
    FreeKernel g_;
    ConfiningPotential v_;
};

template <typename Model>
class Configuration {
public:
    static constexpr Domain domain = Model::domain;

    Configuration(Model model, std::vector<Vec3> positions) : model_(std::move(model)), x_(std::move(positions)) {
        for (auto& p : x_) p = model_.canonical(p);
        total_energy();
    }

    const Model& model() const { return model_; }
    int dimension() const { return 3; }
    std::size_t size() const { return x_.size(); }
    const Vec3& position(std::size_t j) const { return x_[j]; }
    const std::vector<Vec3>& positions() const { return x_; }
    bool clean() const { return !dirty_; }

    /// Cached total energy (valid while clean()).
    double energy() const { return h_; }

    /// Full O(N^2) recomputation; refreshes every cache.
    double total_energy() {
        const std::size_t n = x_.size();
        pair_.assign(n * n, 0.0);
        u_.assign(n, 0.0);
        v_.resize(n);
        sum_v_ = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            v_[i] = model_.external(x_[i]);
            sum_v_ += v_[i];
            for (std::size_t j = i + 1; j < n; ++j) {
                double gij = pair_checked(x_[i], x_[j], i, j);
                pair_[i * n + j] = gij;
                pair_[j * n + i] = gij;
            }
        }
        double pairs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += pair_[i * n + j];
            u_[i] = s;
            pairs += s;
        }
        h_ = 0.5 * pairs + static_cast<double>(n) * sum_v_;
        dirty_ = false;
        proposal_.valid = false;
        return h_;
    }

    /// Local energy l_j (see file comment).
    double local_energy(std::size_t j) const {
        check_index(j);
        if constexpr (domain == Domain::torus) {
            return u_[j];
        } else {
            const double n = static_cast<double>(x_.size());
            return u_[j] + (sum_v_ - v_[j]) + (n - 1.0) * v_[j];
        }
    }

    /// Sum over k != j of g(x_j - x_k).
    double pair_sum(std::size_t j) const {
        check_index(j);
        return u_[j];
    }

    double external(std::size_t j) const { return v_[j]; }
    double external_sum() const { return sum_v_; }

    /// H(x_j -> x_new) - H in O(N) kernel evaluations. The new pair values are
    /// kept so that an immediately following apply_move() reuses them.
    double delta_energy_move(std::size_t j, const Vec3& x_new) const {
        check_index(j);
        const std::size_t n = x_.size();
        Vec3 y = model_.canonical(x_new);
        proposal_.values.resize(n);
        double delta = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j) {
                proposal_.values[k] = 0.0;
                continue;
            }
            // lower index first, so that g is evaluated exactly as in total_energy()
            double g = k < j ? pair_checked(x_[k], y, k, j) : pair_checked(y, x_[k], j, k);
            proposal_.values[k] = g;
            delta += g - pair_[j * n + k];
        }
        proposal_.v = model_.external(y);
        if constexpr (domain == Domain::euclidean) delta += static_cast<double>(n) * (proposal_.v - v_[j]);
        proposal_.j = j;
        proposal_.x = y;
        proposal_.delta = delta;
        proposal_.valid = true;
        return delta;
    }

    /// Move particle j and update every cache in O(N).
    void apply_move(std::size_t j, const Vec3& x_new) {
        Vec3 y = model_.canonical(x_new);
        if (!(proposal_.valid && proposal_.j == j && proposal_.x == y)) delta_energy_move(j, y);
        const std::size_t n = x_.size();
        double uj = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j) continue;
            double g = proposal_.values[k];
            u_[k] += g - pair_[k * n + j];
            pair_[k * n + j] = g;
            pair_[j * n + k] = g;
            uj += g;
        }
        u_[j] = uj;
        sum_v_ += proposal_.v - v_[j];
        v_[j] = proposal_.v;
        h_ += proposal_.delta;
        x_[j] = y;
        proposal_.valid = false;
    }

    /// Replace all positions; caches are stale until total_energy().
    void set_positions(std::vector<Vec3> positions) {
        x_ = std::move(positions);
        for (auto& p : x_) p = model_.canonical(p);
        dirty_ = true;
        proposal_.valid = false;
    }

    /// |H_cached - 1/2 sum_j l_j| (torus) or the Euclidean analogue,
    /// relative to max(1, |H|).
    double local_sum_defect() const {
        double s = 0.0;
        for (std::size_t j = 0; j < x_.size(); ++j) {
            s += local_energy(j);
            if constexpr (domain == Domain::euclidean) s += 2.0 * v_[j];
        }
        return std::abs(h_ - 0.5 * s) / std::max(1.0, std::abs(h_));
    }

private:
    void check_index(std::size_t j) const {
        if (j >= x_.size()) throw DomainError("particle index out of range");
    }

    double pair_checked(const Vec3& a, const Vec3& b, std::size_t i, std::size_t j) const {
        if (model_.separation2(a, b) <= coincidence2) throw CoincidentPointsError(i, j);
        try {
            return model_.pair(a, b);
        } catch (const SingularInputError&) {
            throw CoincidentPointsError(i, j);
        }
    }

    static constexpr double coincidence2 =
        64.0 * std::numeric_limits<double>::epsilon() * std::numeric_limits<double>::epsilon();

    struct Proposal {
        bool valid = false;
        std::size_t j = 0;
        Vec3 x{};
        double v = 0.0;
        double delta = 0.0;
        std::vector<double> values;
    };

    Model model_;
    std::vector<Vec3> x_;
    std::vector<double> pair_;
    std::vector<double> u_;
    std::vector<double> v_;
    double sum_v_ = 0.0;
    double h_ = 0.0;
    bool dirty_ = true;
    mutable Proposal proposal_;
};

using TorusConfiguration = Configuration<TorusModel>;
using EuclideanConfiguration = Configuration<EuclideanModel>;

/// Perturbed cubic lattice with ceil(N^{1/3})^3 sites, first N used.
inline std::vector<Vec3> perturbed_lattice(std::size_t n, double jitter, auto& rng) {
    std::size_t side = 1;
    while (side * side * side < n) ++side;
    std::vector<Vec3> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t a = i / (side * side), b = (i / side) % side, c = i % side;
        Vec3 p{(a + 0.5) / side, (b + 0.5) / side, (c + 0.5) / side};
        for (auto& v : p) v = wrap_unit(v + jitter * (rng.uniform() - 0.5) / side);
        out.push_back(p);
    }
    return out;
}

inline std::vector<Vec3> uniform_torus_points(std::size_t n, auto& rng) {
    std::vector<Vec3> out(n);
    for (auto& p : out) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    return out;
}

/// i.i.d. uniform points in the ball of radius R centered at 0.
inline std::vector<Vec3> uniform_ball_points(std::size_t n, double radius, auto& rng) {
    std::vector<Vec3> out;
    out.reserve(n);
    while (out.size() < n) {
        Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        if (norm2(p) <= 1.0) out.push_back(radius * p);
    }
    return out;
}

}  // namespace coulomb
