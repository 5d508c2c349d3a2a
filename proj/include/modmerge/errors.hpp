// SPDX-License-Identifier: Apache-2.0
//
// Error families. The CLI maps them to exit codes: ConfigError 2,
// DataError 3, NumericError 4.

#pragma once

#include <stdexcept>

namespace modmerge {

/// Operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A result would be non-finite, or a numeric precondition (weight sum, rho
/// range) is violated.
class NumericError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Invalid configuration: unknown keys, unknown attributes or values, bad paths.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Missing or malformed input data: checkpoints, sequences, inventories.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace modmerge
