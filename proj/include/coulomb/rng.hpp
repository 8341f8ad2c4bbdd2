#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace coulomb {

/// Counter-based Philox4x32-10 generator.
///
/// The output stream is a pure function of (seed, stream, position), so a
/// chain's randomness can be checkpointed as two integers and independent
/// chains are obtained by changing `stream` alone. Distributions are
/// implemented here rather than taken from <random> because the standard
/// distributions are not specified bit-for-bit across library vendors.
class Rng {
public:
    struct State {
        std::uint64_t seed = 0;
        std::uint64_t stream = 0;
        std::uint64_t block = 0;  // blocks generated so far
        std::uint32_t lane = 4;   // next unread lane of the current block
        bool operator==(const State&) const = default;
    };

    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    Rng() = default;
    Rng(std::uint64_t seed, std::uint64_t stream = 0) { state_.seed = seed, state_.stream = stream; }
    explicit Rng(const State& s) : state_(s) {
        if (state_.lane < 4) {
            buffer_ = block(state_.seed, state_.stream, state_.block - 1);
        }
    }

    /// Independent generator for sub-stream `stream` with the same seed.
    Rng split(std::uint64_t stream) const { return Rng(state_.seed, stream); }

    const State& state() const { return state_; }

    std::uint32_t next_u32() {
        if (state_.lane >= 4) {
            buffer_ = block(state_.seed, state_.stream, state_.block);
            ++state_.block;
            state_.lane = 0;
        }
        return buffer_[state_.lane++];
    }

    std::uint64_t operator()() {
        std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        // Lemire's multiply-shift; bias is below 2^-32 for the sizes used here.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
    }

    /// Standard normal variate (Box-Muller, one output per call).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    static std::array<std::uint32_t, 4> block(std::uint64_t key, std::uint64_t stream, std::uint64_t counter) {
        std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                                       static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        std::uint32_t k0 = static_cast<std::uint32_t>(key);
        std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                k0 += 0x9E3779B9u;
                k1 += 0xBB67AE85u;
            }
            std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
            std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
            c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k0, static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k1, static_cast<std::uint32_t>(p0)};
        }
        return c;
    }

private:
    State state_{};
    std::array<std::uint32_t, 4> buffer_{};
};

}  // namespace coulomb
