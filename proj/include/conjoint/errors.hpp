#pragma once

#include <stdexcept>
#include <string>

namespace conjoint {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration / input-file problems (bad config, bad design file, bad flags).
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

// A FactorAssignment that does not cover the design's factors exactly.
class InvalidAssignment : public Error {
 public:
  using Error::Error;
};

// A vignette references a scenario key the design does not define.
class UnknownScenario : public Error {
 public:
  using Error::Error;
};

// Oracle weights do not cover the vignette's factors.
class ModelMismatch : public Error {
 public:
  using Error::Error;
};

// Records do not belong to the design they are being analyzed against.
class DesignMismatch : public Error {
 public:
  using Error::Error;
};

// ---- provider transport failures -------------------------------------------
// These are recorded, not raised, by the runner; the provider layer raises
// them after its retry budget is spent.

class ProviderFailure : public Error {
 public:
  using Error::Error;
};

class AuthError : public ProviderFailure {
 public:
  using ProviderFailure::ProviderFailure;
};

class RateLimited : public ProviderFailure {
 public:
  using ProviderFailure::ProviderFailure;
};

class TransportError : public ProviderFailure {
 public:
  using ProviderFailure::ProviderFailure;
};

// Empty or policy-blocked completion.
class ProviderRefusal : public ProviderFailure {
 public:
  using ProviderFailure::ProviderFailure;
};

// ---- run log ----------------------------------------------------------------

class CorruptLog : public Error {
 public:
  CorruptLog(std::size_t line_number, const std::string& what)
      : Error("corrupt run log at line " + std::to_string(line_number) + ": " + what),
        line_number_(line_number) {}

  std::size_t line_number() const { return line_number_; }

 private:
  std::size_t line_number_;
};

// ---- estimation --------------------------------------------------------------

class EmptyData : public Error {
 public:
  using Error::Error;
};

class InvalidGrouping : public Error {
 public:
  using Error::Error;
};

class RankDeficient : public Error {
 public:
  using Error::Error;
};

class TooFewClusters : public Error {
 public:
  using Error::Error;
};

class EmptyCell : public Error {
 public:
  using Error::Error;
};

// ---- rendering ----------------------------------------------------------------

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace conjoint
