#pragma once

#include <stdexcept>
#include <string>

namespace skillnet {

// Error taxonomy shared across the library. The CLI maps these onto process
// exit codes: input/config/parse -> 2, training divergence -> 3, I/O -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad layer wiring, invalid architecture or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Caller handed us unusable data (empty set, out-of-range score, ...).
class InputError : public Error {
public:
    using Error::Error;
};

// Malformed file content; messages carry file and line context.
class ParseError : public InputError {
public:
    using InputError::InputError;
};

// Broken internal contract (stale pool memo, cache/label mismatch).
class InternalError : public Error {
public:
    using Error::Error;
};

// Non-finite loss during training; message names epoch and batch.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace skillnet
