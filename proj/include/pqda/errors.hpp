#pragma once

#include <stdexcept>
#include <string>

namespace pqda {

// Raised when a computation produces non-finite values or diverges.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Raised on file-system and container format problems.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace pqda
