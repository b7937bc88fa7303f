#pragma once

#include <stdexcept>
#include <string>

namespace droughtrisk {

/// An estimation routine did not converge or could not produce a usable fit.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates a documented contract (malformed rows, duplicates, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace droughtrisk
