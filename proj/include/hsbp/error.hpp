#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hsbp {

// Every failure the library raises carries one of these kinds. The CLI maps
// each kind to its own exit code, so the order here is part of the interface.
enum class ErrorKind {
    InvalidArgument = 1,
    ParseError,
    IoError,
    DegenerateGeometry,
    BehindCamera,
    OutOfBounds,
    EmptyHull,
    InsufficientConstraints,
    DegenerateMatrix,
    NonFinite,
    TooLarge,
    DegenerateField,
    Unmasked,
    EmptyMask,
    MaskMismatch,
    DimensionMismatch,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::EmptyHull: return "EmptyHull";
    case ErrorKind::InsufficientConstraints: return "InsufficientConstraints";
    case ErrorKind::DegenerateMatrix: return "DegenerateMatrix";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::DegenerateField: return "DegenerateField";
    case ErrorKind::Unmasked: return "Unmasked";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::MaskMismatch: return "MaskMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    // The message without the kind prefix.
    const std::string& message() const noexcept { return message_; }

    // Process exit code for this error class; 0 is reserved for success.
    int exit_code() const noexcept { return 10 + static_cast<int>(kind_); }

private:
    ErrorKind kind_;
    std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

} // namespace hsbp
