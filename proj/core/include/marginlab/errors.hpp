#pragma once

#include <stdexcept>
#include <string>

namespace marginlab {

// Input or precondition violations: bad labels, incompatible shapes,
// out-of-range parameters.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files and config text. `where` carries a line number
// (text formats) or byte offset (binary formats).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long where)
      : std::runtime_error(msg), where_(where) {}
  long where() const { return where_; }

 private:
  long where_;
};

// NaN/Inf encountered in a numeric pipeline. layer_index() identifies the
// layer whose output failed, or -1 when the failure is not layer-specific.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg, int layer_index = -1)
      : std::runtime_error(msg), layer_index_(layer_index) {}
  int layer_index() const { return layer_index_; }

 private:
  int layer_index_;
};

// Operation called out of order (e.g. backward without a matching forward).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Margin normalization convention incompatible with the network.
class ConventionError : public std::runtime_error {
 public:
  explicit ConventionError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace marginlab
