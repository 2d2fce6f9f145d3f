// Exception taxonomy. Every error carries the process exit code the CLI
// reports for it, so failure modes stay distinguishable from scripts.
#pragma once

#include <stdexcept>
#include <string>

namespace octofold {

class Error : public std::runtime_error {
public:
    Error(const std::string& message, int exit_code)
        : std::runtime_error(message), exit_code_(exit_code) {}

    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

/// Shape or rank mismatch between tensors; a caller-side contract bug.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& m) : Error(m, 1) {}
};

/// Numeric contract violation: non-finite values, empty loss mask,
/// insufficient batch statistics, degenerate channels.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error(m, 1) {}
};

/// Invalid configuration (architecture, plan, experiment files).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error(m, 2) {}
};

/// An input file that should exist does not.
class MissingFileError : public Error {
public:
    explicit MissingFileError(const std::string& m) : Error(m, 3) {}
};

/// Malformed on-disk data (array containers, checkpoints, records).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& m) : Error(m, 4) {}
};

/// Checksum mismatch against the pinned manifest.
class IntegrityError : public Error {
public:
    explicit IntegrityError(const std::string& m) : Error(m, 5) {}
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& m) : Error(m, 6) {}
};

/// Download failed (offline, HTTP error).
class FetchError : public Error {
public:
    explicit FetchError(const std::string& m) : Error(m, 7) {}
};

}  // namespace octofold
