#pragma once

#include <stdexcept>
#include <string>

namespace msnet {

enum class ErrorKind {
    InvalidArgument,   // bad config values, bad label index, k even, ...
    ShapeMismatch,     // tensor/kernel/param dimension disagreement
    EmptyInput,        // l == 0 volumes, empty datasets/splits
    IndexOutOfRange,   // pooling indices outside [0, l)
    BadMagic,          // file does not start with the expected magic bytes
    BadVersion,        // unsupported format version
    Truncated,         // file ends before the declared payload
    Corrupt,           // header fields inconsistent with file contents
    ParamMismatch,     // checkpoint param count disagrees with its arch
    NonFinite,         // NaN/Inf where finite values are required
    UnknownLabel,      // unparseable diagnosis label or split tag
    DuplicateId,       // repeated patient_id in a manifest
    MissingFile,       // manifest row points at a nonexistent file
    Io,                // filesystem read/write failure
    MismatchedCache,   // backward called with a cache from a different model
    CannotStratify,    // a class has too few patients to split
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace msnet
