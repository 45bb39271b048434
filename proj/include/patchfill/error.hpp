#pragma once

#include <stdexcept>
#include <string>

namespace patchfill {

// Error categories map onto CLI exit codes: configuration problems exit 1,
// data problems exit 2, numeric failures exit 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class LookupError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : DataError(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
          row_(row), column_(column) {}

    std::size_t row() const { return row_; }
    std::size_t column() const { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

// A metric over zero positions.
class UndefinedMetric : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// The finite-difference oracle cannot be trusted for this function.
class OracleInvalid : public Error {
public:
    using Error::Error;
};

// Internal invariant broken; never recoverable.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace patchfill
