#pragma once

#include <stdexcept>
#include <string>

namespace phaseformer {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or axes that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid architectural or run configuration (bad keys, non power-of-two sizes, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A value outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. calling backward() on a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Unreadable or malformed input data (images, checkpoints, datasets).
class IngestionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered during training or a failed gradient verification.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace phaseformer
