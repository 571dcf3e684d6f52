#pragma once

#include <stdexcept>
#include <string>

namespace ucan {

// Base of every error the library throws. The CLI maps each subclass to an
// exit code via exit_code().
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

// Malformed input row; carries the 1-based line number.
class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// Violated precondition of a pure function (e.g. all-zero mask row).
class ContractError : public Error {
public:
    using Error::Error;
};

}  // namespace ucan
