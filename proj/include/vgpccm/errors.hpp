#pragma once

#include <stdexcept>
#include <string>

namespace vgpccm {

// Base class of every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class TooShortError : public Error {
public:
    using Error::Error;
};

class ConstantSeriesError : public Error {
public:
    using Error::Error;
};

class InsufficientLengthError : public Error {
public:
    using Error::Error;
};

class IncompatibleLengthsError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

// Cholesky breakdown after exhausting the jitter escalation ladder.
class NumericalFailureError : public Error {
public:
    using Error::Error;
};

class FamilyMismatchError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class EmptyNullError : public Error {
public:
    using Error::Error;
};

class NoNullTestsError : public Error {
public:
    using Error::Error;
};

class NumericalBlowupError : public Error {
public:
    using Error::Error;
};

class NonPositiveStateError : public Error {
public:
    using Error::Error;
};

class ZeroPowerSignalError : public Error {
public:
    using Error::Error;
};

class EmptyRecordsError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace vgpccm
