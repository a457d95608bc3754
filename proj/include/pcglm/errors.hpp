#pragma once

#include <stdexcept>
#include <string>

namespace pcglm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation (degenerate
/// probabilities, p outside (0,1), non-increasing cumulative ratios).
struct DomainError : Error {
    using Error::Error;
};

/// Linear predictor violates the ordering a cumulative ratio needs at some x.
struct PredictionDomainError : DomainError {
    using DomainError::DomainError;
};

/// Malformed model specification or dimension mismatch.
struct SpecError : Error {
    using Error::Error;
};

struct NumericalError : Error {
    using Error::Error;
};

/// Information matrix is rank deficient (separation or unidentified columns).
struct IdentifiabilityError : NumericalError {
    using NumericalError::NumericalError;
};

struct ParseError : Error {
    using Error::Error;
};

} // namespace pcglm
