#pragma once

#include <stdexcept>
#include <string>

namespace optomech2d {

// All library failures derive from Error so callers can catch one type at the
// front end and map subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A precondition on an argument or a configuration value was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// A position fell outside the domain of a tabulated quantity. No extrapolation
// is ever attempted.
class OutOfRangeError : public Error {
public:
    using Error::Error;
};

// Malformed input file. The message carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// An iterative procedure did not reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

} // namespace optomech2d
