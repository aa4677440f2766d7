#pragma once

#include <stdexcept>
#include <string>

namespace cvsg {

/// Thrown when a caller breaks an operation's precondition (bad dimensions,
/// empty inputs, out-of-range parameters).
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a numerical routine cannot produce a result.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// The DDIM radicand 1 - xi_{t-1} - sigma_t^2 went negative.
class ScheduleInvariantError : public std::runtime_error {
public:
    explicit ScheduleInvariantError(const std::string& what) : std::runtime_error(what) {}
};

/// A file or directory could not be read or written; the message names the path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ContractViolation(what);
}

} // namespace cvsg
