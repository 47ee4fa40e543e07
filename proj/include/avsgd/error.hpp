#pragma once

#include <stdexcept>
#include <string>

namespace avsgd {

/// Broad failure classes. The CLI maps each onto a distinct exit code.
enum class ErrorCategory { config = 2, data = 3, numeric = 4, io = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string &what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

/// A step-parameter inequality does not hold. `what()` names the inequality.
class ConstraintViolation : public Error {
 public:
  explicit ConstraintViolation(const std::string &what)
      : Error(ErrorCategory::config, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string &what)
      : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string &what)
      : Error(ErrorCategory::data, what) {}
};

/// CSV/text parse failure carrying the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string &what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string &what)
      : Error(ErrorCategory::numeric, what) {}
};

/// The quantile gradient is undefined at X == h.
class Singularity : public NumericError {
 public:
  explicit Singularity(const std::string &what) : NumericError(what) {}
};

class SingularHessian : public NumericError {
 public:
  explicit SingularHessian(const std::string &what) : NumericError(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string &what) : Error(ErrorCategory::io, what) {}
};

/// Checkpoint bytes could not be decoded.
class SnapshotError : public DataError {
 public:
  explicit SnapshotError(const std::string &what) : DataError(what) {}
};

class VersionMismatch : public SnapshotError {
 public:
  explicit VersionMismatch(const std::string &what) : SnapshotError(what) {}
};

}  // namespace avsgd
