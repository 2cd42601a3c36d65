#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace selftrain {

// Base of every error the library raises. The CLI maps families onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Data-side failures: bad benchmark specs, impossible splits, missing datasets.
class DataError : public Error {
public:
    using Error::Error;
};

class SpecError : public DataError {
public:
    using DataError::DataError;
};

class SplitError : public DataError {
public:
    using DataError::DataError;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

class CorruptionError : public IoError {
public:
    CorruptionError(const std::string& what, std::size_t offset)
        : IoError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss; the run is aborted.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step)
        : Error(what + " at step " + std::to_string(step)), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class PoisonedGradientError : public DivergenceError {
public:
    using DivergenceError::DivergenceError;
};

}  // namespace selftrain
