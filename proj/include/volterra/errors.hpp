#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace volterra {

/// Malformed expression text. `offset` is the byte position where parsing stopped.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t offset, const std::string& message)
        : std::runtime_error("parse error at offset " + std::to_string(offset) + ": " + message),
          offset_(offset), detail_(message) {}

    std::size_t offset() const noexcept { return offset_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::size_t offset_;
    std::string detail_;
};

/// Unbound variable or a domain violation (ln of a nonpositive number, division by zero, ...).
class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Problem data that violates a structural hypothesis or the file schema.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iteration failed to contract, an index could not be resolved, a linear system was inconsistent.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace volterra
