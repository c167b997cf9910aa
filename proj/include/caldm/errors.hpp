#pragma once

#include <stdexcept>
#include <string>

namespace caldm {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kDependency = 2,
  kRuntime = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kRuntime; }
};

// Bad shapes, ranges, configuration values or malformed files.
class ValidationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kValidation; }
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A prerequisite checkpoint is missing or was produced under another config.
class DependencyError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kDependency; }
};

// Numerical failure during training or sampling (NaN loss and the like).
class ComputeError : public Error {
 public:
  using Error::Error;
};

// Wraps an error raised inside one cascade stage so callers can tell which
// stage failed while keeping the original exit code.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error("[" + stage + "] " + cause.what()),
        stage_(std::move(stage)),
        code_(cause.exit_code()) {}
  const std::string& stage() const { return stage_; }
  ExitCode exit_code() const override { return code_; }

 private:
  std::string stage_;
  ExitCode code_;
};

#define CALDM_CHECK(cond, ErrorType, msg) \
  do {                                    \
    if (!(cond)) throw ErrorType(msg);    \
  } while (0)

}  // namespace caldm
