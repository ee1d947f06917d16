#pragma once

#include <stdexcept>
#include <string>

namespace fedzo {

// Base of every library error. `kind()` is a stable machine-readable tag
// that the CLI prints on standard error.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Caller-supplied values out of range (bad config, bad arguments).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

// NaN or Inf surfaced in an activation, loss or estimate.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class StaleTraceError : public Error {
 public:
  explicit StaleTraceError(const std::string& what) : Error("stale_trace", what) {}
};

class LayerCollapse : public Error {
 public:
  LayerCollapse(std::size_t layer, const std::string& what)
      : Error("layer_collapse", what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

// Data files that parse but violate the format (bad label byte, hash mismatch).
class CorruptDataError : public Error {
 public:
  explicit CorruptDataError(const std::string& what) : Error("corrupt", what) {}
};

class SizeGuardError : public Error {
 public:
  explicit SizeGuardError(const std::string& what) : Error("size_guard", what) {}
};

}  // namespace fedzo
