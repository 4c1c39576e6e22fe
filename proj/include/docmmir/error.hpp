#pragma once

#include <stdexcept>
#include <string>

namespace docmmir {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Input data violates a schema, file format or type invariant.
class DataError : public Error {
public:
    using Error::Error;
};

/// Caller passed arguments that break an operation's precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

}  // namespace docmmir
