#pragma once

// Minimal deterministic task pool. Each task writes only its own result slot,
// so output never depends on the thread count or scheduling order.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"

namespace coulomb {

inline constexpr const char* thread_env_var = "COULOMB_THREADS";

/// Explicit request wins, then the environment, then the hardware count.
inline unsigned resolve_threads(unsigned requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv(thread_env_var); env && *env) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw ConfigError(std::string(thread_env_var) + " must be a positive integer");
        return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n). The first exception (lowest task id) is rethrown.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    unsigned t = std::min<std::size_t>(std::max(1u, threads), n);
    if (t <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(t);
        for (unsigned k = 0; k < t; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace coulomb
