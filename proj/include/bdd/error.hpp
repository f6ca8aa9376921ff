#pragma once

#include <stdexcept>
#include <string>

namespace bdd {

// Argument / configuration errors (CLI exit code 2).
class ArgumentError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A required file or artifact does not exist (CLI exit code 3).
class MissingArtifactError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf losses, gradients, or SVD failures (CLI exit code 4).
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed input file; carries the offending 1-based line number.
class ParseError : public std::runtime_error {
  public:
    ParseError(std::size_t line, const std::string &what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

// Broken internal precondition (shape mismatch, stale cache, ...).
class ContractViolation : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

inline void require(bool cond, const char *what) {
    if (!cond)
        throw ContractViolation(what);
}

} // namespace bdd
