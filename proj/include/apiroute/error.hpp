#pragma once

#include <stdexcept>
#include <string>

namespace apiroute {

// Base for everything the library throws on bad input or impossible requests.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input is well-formed but breaks an invariant (score out of range, unknown label, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Array shapes disagree with the catalog (K services, L labels).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A serialized document cannot be parsed into the expected structure.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Artifact was produced against a different service catalog.
class FingerprintError : public Error {
 public:
  using Error::Error;
};

// No strategy can afford even a single base call at the requested budget.
class InfeasibleBudgetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace apiroute
