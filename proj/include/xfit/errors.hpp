#pragma once

#include <stdexcept>
#include <string>

namespace xfit {

// Operand shapes do not conform for a primitive.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (task files, partitions, checkpoints).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or command-line usage.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace xfit
