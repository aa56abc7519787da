#pragma once

#include <stdexcept>
#include <string>

namespace tiler {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: config files, weight files, images.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A numerical routine produced something it cannot certify (NaN, inf).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace tiler
