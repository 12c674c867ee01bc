#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dbglm {

// Errors raised by the numerical core are NumericalError; bad inputs and
// configuration problems are InputError. The CLI maps these to exit codes 3
// and 2 respectively.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error
{
public:
    using Error::Error;
};

class NumericalError : public Error
{
public:
    using Error::Error;
};

class DimensionError : public InputError
{
public:
    using InputError::InputError;
};

class ConfigError : public InputError
{
public:
    using InputError::InputError;
};

/// Contrast weights that are not unit length.
class NormalizationError : public InputError
{
public:
    using InputError::InputError;
};

/// Linear predictor too large for the family's cumulant function.
class OverflowError : public NumericalError
{
public:
    OverflowError(std::string const& what, std::ptrdiff_t sample = -1)
        : NumericalError(what), sample_(sample)
    {}

    std::ptrdiff_t sample() const noexcept { return sample_; }

private:
    std::ptrdiff_t sample_;
};

class SingularMatrixError : public NumericalError
{
public:
    SingularMatrixError(std::string const& what, double smallest_pivot)
        : NumericalError(what), smallest_pivot_(smallest_pivot)
    {}

    double smallest_pivot() const noexcept { return smallest_pivot_; }

private:
    double smallest_pivot_;
};

/// A quantity that must be strictly positive collapsed (e.g. a node-wise
/// residual scale, or an undefined intercept-only fit).
class DegenerateError : public NumericalError
{
public:
    DegenerateError(std::string const& what, std::ptrdiff_t index = -1)
        : NumericalError(what), index_(index)
    {}

    std::ptrdiff_t index() const noexcept { return index_; }

private:
    std::ptrdiff_t index_;
};

} // namespace dbglm
