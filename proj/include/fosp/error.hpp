#pragma once

#include <stdexcept>
#include <string>

namespace fosp {

// Bad input: shapes, ranges, config keys. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Failure while doing valid work: I/O, divergence, unreachable quotas. Exit code 3.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fosp
