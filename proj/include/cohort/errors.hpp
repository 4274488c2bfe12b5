#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cohort {

// Base for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input supplied by a caller (file contents, request payloads, arguments).
// The CLI maps these to exit code 1 and the server to 4xx responses.
class InputError : public Error {
public:
    using Error::Error;
};

// A field, kind or block name that is not declared in the schema.
class SchemaError : public InputError {
public:
    using InputError::InputError;
};

class RangeError : public InputError {
public:
    using InputError::InputError;
};

class DuplicateError : public InputError {
public:
    using InputError::InputError;
};

class NotFoundError : public InputError {
public:
    using InputError::InputError;
};

class SyntaxError : public InputError {
public:
    SyntaxError(const std::string& message, std::size_t position)
        : InputError(message + " at position " + std::to_string(position)),
          message_(message),
          position_(position) {}

    const std::string& message() const { return message_; }
    std::size_t position() const { return position_; }

private:
    std::string message_;
    std::size_t position_;
};

}  // namespace cohort
