#pragma once

#include <stdexcept>
#include <string>

namespace ksd {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad parameters, schema violations, unreadable files.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A stability/activity/perturbation gate refused the request.
class GateError : public Error {
public:
    using Error::Error;
};

/// A tuple enumeration would exceed the configured work budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// An iteration or quadrature did not reach its tolerance.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Shape mismatch between grids, orders or imbeddings.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Coincident particle positions where a unique answer is undefined.
class DegenerateConfiguration : public Error {
public:
    using Error::Error;
};

}  // namespace ksd
