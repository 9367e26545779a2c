#pragma once

#include <stdexcept>
#include <string>

namespace ssm {

/// Operand sizes that do not fit together (coefficient count, matrix shapes, ...).
class DimensionError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// A ShapeModel, mesh or observation violates one of its invariants.
class InvariantError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// A decomposition failed to converge or produced non-finite values.
class NumericalError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Raised by long-running computations when their stop token fires.
class Cancelled : public std::runtime_error
{
public:
    Cancelled() : std::runtime_error("computation cancelled") {}
};

} // namespace ssm
