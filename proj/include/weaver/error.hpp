#pragma once

// Error classes shared by every module. Callers that need to map failures to
// exit codes (the CLI) catch by category; everything derives from weaver::Error.

#include <cstddef>
#include <stdexcept>
#include <string>

namespace weaver {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad values handed to an operation (out-of-range token, empty batch).
class InputError : public Error {
public:
    using Error::Error;
};

// Preconditions on numeric arguments (sizes, fractions, dimensions).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Two parameter sets (or gradients) that do not share a layout.
class StructuralError : public Error {
public:
    using Error::Error;
};

// Invalid configuration; the CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

// Corrupt or truncated checkpoint container.
class FormatError : public Error {
public:
    using Error::Error;
};

class UnsupportedVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace weaver
