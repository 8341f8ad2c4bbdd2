#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coulomb {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Kernel evaluated at a lattice point (or the origin for the free kernel).
struct SingularInputError : Error {
    using Error::Error;
};

/// Argument outside the documented domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

struct UnsupportedDimensionError : Error {
    explicit UnsupportedDimensionError(int d)
        : Error("unsupported dimension d=" + std::to_string(d) + " (only d=3 is implemented)") {}
};

/// Two particles closer than machine precision; the energy would be infinite.
struct CoincidentPointsError : Error {
    CoincidentPointsError(std::size_t i, std::size_t j)
        : Error("coincident particles " + std::to_string(i) + " and " + std::to_string(j)),
          first(i), second(j) {}
    std::size_t first;
    std::size_t second;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace coulomb
