#pragma once

#include <stdexcept>
#include <string>

namespace robtrack {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration (bad field value, missing file, unknown option).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unusable input data (ragged CSV, non-numeric cell, NaN).
class DataError : public Error {
public:
    using Error::Error;
};

/// A numerical precondition failed: factorization, validity region, singular system.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A worst-case likelihood-ratio base was non-positive at the evaluation point.
class InfeasiblePoint : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace robtrack
