#pragma once

#include <stdexcept>
#include <string>

namespace volseg {

// Base for every error the library raises. The CLI maps the subclasses to
// exit codes: config → 2, data (format/length/domain/io) → 3, numeric → 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class LengthError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace volseg
