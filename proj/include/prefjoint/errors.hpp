#pragma once

#include <stdexcept>
#include <string>

namespace prefjoint {

// Runtime numerical failures (factorization breakdown, overflow guards).
// Precondition violations throw std::invalid_argument instead.
class numerical_error : public std::runtime_error {
public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace prefjoint
