#pragma once

#include <stdexcept>
#include <string>

namespace msbwe {

// Precondition violations on user-facing operations.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable input data (WAV files, corpora, config files).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CorruptCheckpoint : public DataError {
public:
    using DataError::DataError;
};

class ConfigMismatch : public DataError {
public:
    using DataError::DataError;
};

// A loss or activation went NaN/Inf. `term` names the offending quantity.
class NumericFailure : public std::runtime_error {
public:
    NumericFailure(std::string term, const std::string& what)
        : std::runtime_error(what), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

}  // namespace msbwe
