#pragma once

#include <stdexcept>
#include <string>

namespace tokweight {

enum class ErrorKind {
    OverLength,
    UnknownSymbol,
    SpanNotFound,
    AmbiguousSpan,
    OverlapError,
    DegenerateRow,
    ShapeMismatch,
    NonFinite,
    EmptyClass,
    MissingTensor,
    UnsupportedDtype,
    IO,
    Parse,
    CountMismatch,
    DimensionMismatch,
    UnknownAttribute,
    EmptyCategory,
    NoPositives,
    BadK,
    PartitionMismatch,
    SingleClass,
    InvalidArgument,
    NotFound,
    Conflict,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    // Errors caused by bad user input rather than a broken invariant.
    bool is_validation() const { return kind_ != ErrorKind::NonFinite; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::OverLength: return "OverLength";
    case ErrorKind::UnknownSymbol: return "UnknownSymbol";
    case ErrorKind::SpanNotFound: return "SpanNotFound";
    case ErrorKind::AmbiguousSpan: return "AmbiguousSpan";
    case ErrorKind::OverlapError: return "OverlapError";
    case ErrorKind::DegenerateRow: return "DegenerateRow";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::MissingTensor: return "MissingTensor";
    case ErrorKind::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorKind::IO: return "IO";
    case ErrorKind::Parse: return "Parse";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnknownAttribute: return "UnknownAttribute";
    case ErrorKind::EmptyCategory: return "EmptyCategory";
    case ErrorKind::NoPositives: return "NoPositives";
    case ErrorKind::BadK: return "BadK";
    case ErrorKind::PartitionMismatch: return "PartitionMismatch";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::Conflict: return "Conflict";
    }
    return "Error";
}

}  // namespace tokweight
