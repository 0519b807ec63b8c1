#pragma once

#include <stdexcept>
#include <string>

namespace frankenkit {

// Bad or inconsistent input data (malformed files, mismatched checkpoints,
// violated operation preconditions). CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A broken internal invariant. CLI maps this to exit code 3.
class InvariantError : public std::logic_error {
public:
    explicit InvariantError(const std::string& what) : std::logic_error(what) {}
};

// Malformed command-line usage detected after flag parsing. Exit code 1.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace frankenkit
