#pragma once

#include <stdexcept>
#include <string>

namespace forge {

/// Broad failure class; the CLI maps it onto its exit code.
enum class ErrorKind {
    usage,     // bad configuration or arguments
    data,      // malformed or unusable input data
    internal,  // invariant violation inside the library
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return Error(ErrorKind::usage, what); }
inline Error data_error(const std::string& what) { return Error(ErrorKind::data, what); }
inline Error internal_error(const std::string& what) { return Error(ErrorKind::internal, what); }

}  // namespace forge
