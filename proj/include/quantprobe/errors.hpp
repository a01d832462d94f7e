#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace quantprobe {

/// Invalid user configuration (ranges, task/lexicon combinations, flags).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the byte offset where parsing failed when known.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what, std::uint64_t offset = 0)
        : std::runtime_error(what), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Data does not match what a provider or probe expects (missing ids, dim mismatch).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required on-disk artifact is absent (e.g. an embedding file for a run).
class MissingDataError : public DataError {
public:
    using DataError::DataError;
};

/// Tensor shapes disagree. Always a programming error in the caller.
class ShapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A gradient or loss became NaN/Inf during training.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AggregationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace quantprobe
