#pragma once

#include <stdexcept>
#include <string>

namespace dkrr {

// Requested operation is not defined for the given configuration, e.g.
// derivatives of a kernel family whose hyperparameter is discrete.
struct UnsupportedOperation : std::logic_error {
  explicit UnsupportedOperation(const std::string& what) : std::logic_error(what) {}
};

// A linear system could not be factorized or solved to tolerance.
struct SingularSystem : std::runtime_error {
  explicit SingularSystem(const std::string& what) : std::runtime_error(what) {}
};

// A dense-path guard was exceeded (e.g. N above the dense cap).
struct ResourceLimit : std::runtime_error {
  explicit ResourceLimit(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file (CSV, config, model).
struct IngestionError : std::runtime_error {
  explicit IngestionError(const std::string& what) : std::runtime_error(what) {}
};

// Every candidate point was degenerate; there is nothing to select.
struct NoSelection : std::runtime_error {
  explicit NoSelection(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dkrr
