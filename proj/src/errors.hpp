#pragma once

#include <stdexcept>
#include <string>

namespace pcbf {

/// Thrown when a caller violates an interface precondition (bad dimension,
/// out-of-range argument, malformed input).
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a regression fit is asked to run on too few samples.
struct InsufficientData : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a covariance matrix stays non-positive-definite after the
/// jitter ladder has been exhausted.
struct FitFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when the optimizer encounters a non-finite loss. Carries the
/// offending batch serialized as JSON so it can be dumped for inspection.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, std::string batch)
      : std::runtime_error(what), batch_json(std::move(batch)) {}
  std::string batch_json;
};

/// Thrown when numerical integration produces a non-finite state.
struct IntegrationBlowup : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown for unusable run configurations (e.g. an effectively empty
/// critical initial set).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on file I/O failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pcbf
