#pragma once

#include <stdexcept>
#include <string>

namespace sgp {

// Exit codes used by the command line tool. Each error class maps onto one.
enum class ExitCode : int { ok = 0, config = 2, data = 3, divergence = 4, io = 5 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

// A unique answer leaked into more than one task of a scene split.
class SplitIntegrityError : public DataError {
 public:
  explicit SplitIntegrityError(const std::string& what) : DataError(what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ExitCode::divergence, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::io, what) {}
};

}  // namespace sgp
