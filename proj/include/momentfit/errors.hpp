#pragma once

#include <stdexcept>
#include <string>

namespace momentfit {

// Error taxonomy shared by all modules. Everything derives from Error so the
// CLI boundary can catch the whole family in one place.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
  using Error::Error;
};

// Bad option value or malformed configuration (unsupported max_order,
// quadrature size out of range, invalid probabilities, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

// A column with zero spread where spread is required.
class DegenerateScaleError : public Error {
public:
  using Error::Error;
};

// Clusters with fewer than two records cannot be summarized.
class ClusterTooSmallError : public Error {
public:
  using Error::Error;
};

// Bundle failed schema or invariant checks on ingestion.
class ValidationError : public Error {
public:
  using Error::Error;
};

// Bundles from different providers disagree on the variable signature.
class IncompatibleProvidersError : public Error {
public:
  using Error::Error;
};

// Numerical search left the representable region (damping blow-up on
// persistently non-finite residuals).
class OptimError : public Error {
public:
  using Error::Error;
};

}  // namespace momentfit
