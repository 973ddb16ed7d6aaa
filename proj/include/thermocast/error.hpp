#pragma once

#include <stdexcept>
#include <string>

namespace thermocast {

/// Root of the library's exception hierarchy. The category decides the
/// CLI exit code (config 2, data 3, numerical 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class EmptyDatasetError : public DataError {
public:
    using DataError::DataError;
};

class InsufficientDataError : public DataError {
public:
    using DataError::DataError;
};

class InsufficientHistoryError : public DataError {
public:
    using DataError::DataError;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class GraphError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

}  // namespace thermocast
