#pragma once

#include <stdexcept>
#include <string>

namespace phenobench {

// Base class for all library errors. Subclasses map to the distinct
// failure families callers may want to handle separately.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// File could not be opened, read, or written.
class io_error : public error {
 public:
  using error::error;
};

// Input file does not conform to the expected columnar schema.
class schema_error : public error {
 public:
  using error::error;
};

// A domain invariant is violated (non-finite values, duplicate keys,
// inconsistent dimensions, out-of-range configuration).
class validation_error : public error {
 public:
  using error::error;
};

// Caller combined options or arguments in an unsupported way.
class usage_error : public error {
 public:
  using error::error;
};

// Too few rows, profiles, or group members to compute the result.
class insufficient_data_error : public error {
 public:
  using error::error;
};

// A vector or group is numerically degenerate (zero norm, undefined
// spherical mean, singular covariance at epsilon 0).
class degenerate_error : public error {
 public:
  using error::error;
};

// A relationship database has no pairs covered by the profile set.
class coverage_error : public error {
 public:
  using error::error;
};

// Crop size does not tile the image exactly.
class tiling_error : public error {
 public:
  using error::error;
};

// Checked integer arithmetic overflowed.
class overflow_error : public error {
 public:
  using error::error;
};

// Training loss became NaN/Inf.
class divergence_error : public error {
 public:
  using error::error;
};

}  // namespace phenobench
