#pragma once

#include <cstddef>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace anneal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement somewhere in a network; `layer` is the offending index
/// or npos when the mismatch is not tied to a layer.
class DimensionError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  DimensionError(const std::string& what, std::size_t layer = npos)
      : Error(layer == npos ? what
                            : "layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised by an oracle that could not deliver all requested labels.
class OracleError : public Error {
 public:
  using Error::Error;
};

namespace log {

inline bool& quiet() {
  static bool q = false;
  return q;
}

inline void warn(const std::string& msg) {
  static std::mutex mu;
  if (quiet()) return;
  std::lock_guard lock(mu);
  std::cerr << "[warn] " << msg << '\n';
}

inline void info(const std::string& msg) {
  static std::mutex mu;
  if (quiet()) return;
  std::lock_guard lock(mu);
  std::cerr << "[info] " << msg << '\n';
}

}  // namespace log
}  // namespace anneal
