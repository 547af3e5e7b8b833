// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace csmoe {

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or sizes.
class DimensionError : public Error
{
public:
    using Error::Error;
};

/// Out-of-range scalar argument (temperature, ratio, eps, ...).
class ParameterError : public Error
{
public:
    using Error::Error;
};

/// Malformed or truncated file, wrong magic/version.
class FormatError : public Error
{
public:
    using Error::Error;
};

/// A loss or function evaluated to a non-finite value.
class EvaluationError : public Error
{
public:
    using Error::Error;
};

/// Invalid data values handed to an operation (negative probabilities, empty label sets).
class InputError : public Error
{
public:
    using Error::Error;
};

class ConfigError : public Error
{
public:
    using Error::Error;
};

/// Problems with a dataset on disk (unpaired files, missing ids).
class DataError : public Error
{
public:
    using Error::Error;
};

}  // namespace csmoe
