#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace omrfit {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes (config 2, data 3, numerics 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class CameraError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class MetricError : public DataError {
 public:
  using DataError::DataError;
};

class NumericsError : public Error {
 public:
  NumericsError(const std::string& primitive, const std::string& detail)
      : Error("non-finite value in " + primitive + ": " + detail), primitive_(primitive) {}
  const std::string& primitive() const { return primitive_; }

 private:
  std::string primitive_;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace omrfit
