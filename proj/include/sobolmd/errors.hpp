#pragma once

#include <stdexcept>
#include <string>

namespace sobolmd {

// A model evaluation could not produce a usable value: subprocess crash or
// timeout, malformed response, or a non-finite output.
class EvaluationError : public std::runtime_error {
 public:
  explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

// A sample batch cannot identify the estimand, e.g. zero empirical output
// variance in a Pick-Freeze batch.
class DegenerateSampleError : public std::runtime_error {
 public:
  explicit DegenerateSampleError(const std::string& what) : std::runtime_error(what) {}
};

// A request exceeds a hard capacity limit (dimension caps, quadrature grids
// that do not fit in memory).
class CapacityError : public std::length_error {
 public:
  explicit CapacityError(const std::string& what) : std::length_error(what) {}
};

// An update left the numerical domain (overflowed or vanished normalizer).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// No reference table can be produced for the requested model (external
// models have no quadrature oracle).
class MissingOracleError : public std::runtime_error {
 public:
  explicit MissingOracleError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sobolmd
