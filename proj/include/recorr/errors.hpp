#pragma once

#include <stdexcept>
#include <string>

namespace recorr {

// Precondition violated by the caller (shape mismatch, bad parameter).
class ContractError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or missing input data (files, manifests, configs).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Non-finite values or other numerical breakdown.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractError(what);
}

} // namespace recorr
