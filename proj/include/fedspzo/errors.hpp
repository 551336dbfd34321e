#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedspzo {

// Invalid configuration, dimension mismatch or unsupported model feature.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN/Inf showed up. `layer` is the offending layer index when the value
// came out of a forward pass, -1 otherwise.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, int layer = -1)
      : std::runtime_error(what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

// Caller broke a documented precondition (empty seed list, length mismatch).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Internal postcondition failed, e.g. parameters not restored after a
// perturbation cycle.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file or payload.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedspzo
