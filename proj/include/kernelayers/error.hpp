#pragma once

#include <stdexcept>
#include <string>

namespace kl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A layer or object used out of order (e.g. backward before forward).
class StateError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

/// Malformed dataset file. The message names the byte offset.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Config text that fails validation; carries the offending line (0 if none).
class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

class BuildError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or activations beyond the guard threshold during training.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// A finite-difference oracle evaluated a non-finite objective.
class OracleError : public Error {
public:
    using Error::Error;
};

} // namespace kl
