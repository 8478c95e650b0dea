#pragma once

#include <stdexcept>
#include <string>

namespace hetseg {

// Base of all library errors. Validation errors (bad arguments, bad configs,
// violated preconditions) map to CLI exit code 1, runtime failures
// (I/O, divergence, malformed files) to exit code 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class RuntimeFailure : public Error {
public:
    using Error::Error;
};

// labelspace
class LabelCollision : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class NoSharedModalities : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class NotFound : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// volumes / NIfTI
class FormatError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};
class UnsupportedDatatype : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};
class TruncatedFile : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};
class IoError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};
class OutOfBounds : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// phantoms
class GeometryError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// sampling
class EmptyClass : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// losses
class InvalidComplement : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class NonFiniteLoss : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

// network / training
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class DivergedError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

// metrics
class InsufficientData : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace hetseg
