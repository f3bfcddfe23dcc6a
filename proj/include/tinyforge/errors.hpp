#pragma once

#include <stdexcept>
#include <string>

namespace tinyforge {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A layer's input dims are incompatible with its attributes or weights.
struct ShapeMismatch : Error {
    using Error::Error;
};

/// A sparse stream's cumulative positions exceed the declared length,
/// or the stream is truncated mid-record.
struct CorruptStream : Error {
    using Error::Error;
};

/// Strict encoding found a block that is partially zero and partially
/// nonzero, i.e. the tensor was not blockwise-pruned.
struct UnalignedSparsity : Error {
    using Error::Error;
};

/// Package emission refused because the model exceeds a resource budget.
struct BudgetExceeded : Error {
    using Error::Error;
};

/// Package file does not start with the expected magic bytes.
struct BadMagic : Error {
    using Error::Error;
};

/// Model / config / tensor file could not be parsed; message carries
/// the field path or line context.
struct ParseError : Error {
    using Error::Error;
};

/// Search-space analysis saw no sample pass the resource check (0/0).
struct NoFeasibleSample : Error {
    using Error::Error;
};

/// Every candidate supernet was skipped during supernet search.
struct NoFeasibleSupernet : Error {
    using Error::Error;
};

/// Every iteration of single-path search was skipped.
struct NoFeasibleModel : Error {
    using Error::Error;
};

} // namespace tinyforge
