#pragma once

#include <stdexcept>
#include <string>

namespace hazeforge {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

// Malformed or unexpected file contents (bad magic, truncation, unsupported layout).
struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Atmospheric light incompatible with the radiance bounds of the boundary constraint.
struct DegenerateAtmosphere : Error {
    using Error::Error;
};

struct SolverStall : Error {
    SolverStall(const std::string& what, double residual, int iterations)
        : Error(what), residual(residual), iterations(iterations) {}
    double residual;
    int iterations;
};

}  // namespace hazeforge
