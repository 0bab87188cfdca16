#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mocha {

enum class ErrorKind {
    DimensionMismatch,
    ShapeMismatch,
    NonFinite,
    NonFiniteGradient,
    NonFiniteLoss,
    DegenerateData,
    BadRank,
    NoConvergence,
    FlatInput,
    BadTemperature,
    UnknownClass,
    EmptySupport,
    EmptyStore,
    BadK,
    TooFewPairs,
    AllZeroDifferences,
    InvalidConfig,
    Io,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::BadRank: return "BadRank";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::FlatInput: return "FlatInput";
    case ErrorKind::BadTemperature: return "BadTemperature";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::EmptySupport: return "EmptySupport";
    case ErrorKind::EmptyStore: return "EmptyStore";
    case ErrorKind::BadK: return "BadK";
    case ErrorKind::TooFewPairs: return "TooFewPairs";
    case ErrorKind::AllZeroDifferences: return "AllZeroDifferences";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

} // namespace mocha
