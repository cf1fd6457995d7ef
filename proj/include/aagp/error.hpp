#pragma once

#include <stdexcept>
#include <string>

namespace aagp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-range scalar arguments.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Shape or length mismatch between arguments.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A factorization failed even at the largest jitter in the schedule.
class SingularMatrixError : public Error {
public:
    using Error::Error;
};

/// Dataset, panel or parameter invariant violated.
class ValidationError : public Error {
public:
    enum class Kind {
        duplicate_site,
        duplicate_time,
        length_mismatch,
        non_finite,
        invalid_parameter,
        size_guard,
        rank_deficient,
        other
    };

    ValidationError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Bad or incomplete run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The sampler hit a non-finite density or scale and stopped.
class NumericalAbort : public Error {
public:
    using Error::Error;
};

}  // namespace aagp
