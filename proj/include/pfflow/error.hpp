// error.hpp - exception types shared by all pfflow modules

#pragma once

#include <stdexcept>
#include <string>

namespace pfflow {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad argument shapes or values (zero resolutions, length mismatches, ...).
struct InvalidArgument : Error {
    using Error::Error;
};

/// Matrix function requested on an operator that is (numerically) singular.
struct DegenerateInput : Error {
    using Error::Error;
};

/// Ground cluster cannot be separated from the next level at the requested tolerance.
struct ClusterAmbiguity : Error {
    ClusterAmbiguity(const std::string& what, int tight_size, int loose_size)
        : Error(what), tight_size(tight_size), loose_size(loose_size) {}
    int tight_size;  // cluster size at cluster_tol
    int loose_size;  // cluster size at 2*cluster_tol
};

/// Outside the perturbative regime (|grad E| >= 1, closed gap, ...).
struct RegimeError : Error {
    using Error::Error;
};

struct CacheIntegrityError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace pfflow
