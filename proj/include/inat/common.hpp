#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace inat {

using Shape = std::vector<int64_t>;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape/rank violations. Messages name the offending shapes.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Invalid hyperparameters or file-level configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Non-finite values detected in an operation result.
class NumericError : public Error {
public:
  using Error::Error;
};

// Degenerate or inconsistent attention masks.
class MaskError : public Error {
public:
  using Error::Error;
};

// File I/O and serialization failures.
class IoError : public Error {
public:
  using Error::Error;
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

}  // namespace inat
