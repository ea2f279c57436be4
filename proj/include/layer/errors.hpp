#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace layer {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Array/grid dimensions do not agree.
class shape_error : public error {
public:
    using error::error;
};

/// A value is outside its admissible domain (unknown layer code, empty input, ...).
class domain_error : public error {
public:
    using error::error;
};

/// Malformed on-disk data. Carries the byte offset where parsing failed.
class format_error : public error {
public:
    format_error(const std::string& msg, std::size_t byte_offset)
        : error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset_(byte_offset) {}

    std::size_t byte_offset() const noexcept { return offset_; }

private:
    std::size_t offset_ = 0;
};

/// Invalid configuration (infeasible slabs, fewer patients than folds, ...).
class config_error : public error {
public:
    using error::error;
};

/// The scorer does not support the requested capability.
class capability_error : public error {
public:
    using error::error;
};

/// Training diverged or received non-finite values.
class training_error : public error {
public:
    using error::error;
};

/// Logistic fit detected complete separation.
class separation_error : public error {
public:
    using error::error;
};

/// Design matrix is rank deficient (constant regressor).
class rank_error : public error {
public:
    using error::error;
};

/// A declared aggregation node has no scans behind it.
class structural_error : public error {
public:
    using error::error;
};

/// File could not be opened or written.
class io_error : public error {
public:
    using error::error;
};

} // namespace layer
