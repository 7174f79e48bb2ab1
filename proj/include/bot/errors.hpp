#pragma once

#include <stdexcept>
#include <string>

namespace bot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class InvalidEpsilon : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class SizeCapExceeded : public Error {
public:
    using Error::Error;
};

class ZeroReferenceMass : public Error {
public:
    using Error::Error;
};

class RankDeficient : public Error {
public:
    RankDeficient(const std::string& what, int index) : Error(what), index_(index) {}
    /// Position of the first embedding whose residual norm collapsed.
    int index() const noexcept { return index_; }

private:
    int index_;
};

class HistoryUnavailable : public Error {
public:
    using Error::Error;
};

class InfeasibleAction : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace bot
