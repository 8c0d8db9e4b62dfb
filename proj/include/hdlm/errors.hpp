#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hdlm {

// Exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kFailure)
      : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension error: " + what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error("index error: " + what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error("config error: " + what, ExitCode::kConfig) {}
};

class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& what)
      : Error("capacity error: " + what, ExitCode::kData) {}
};

class VocabularyError : public Error {
 public:
  explicit VocabularyError(const std::string& what)
      : Error("vocabulary error: " + what, ExitCode::kData) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what, ExitCode::kData) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error("protocol error: " + what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what)
      : Error("training diverged: " + what, ExitCode::kDivergence) {}
};

class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::uint64_t offset)
      : Error("checkpoint integrity error at offset " + std::to_string(offset) + ": " + what,
              ExitCode::kData),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace hdlm
