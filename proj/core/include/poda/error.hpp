#pragma once

#include <stdexcept>
#include <string>

namespace poda {

// Exit codes used by the CLI; library code throws, tools translate.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  usage = 2,
  io = 3,
  config = 4,
  vocab_mismatch = 5,
  checkpoint = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ExitCode::io, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

struct VocabMismatchError : Error {
  explicit VocabMismatchError(const std::string& what) : Error(ExitCode::vocab_mismatch, what) {}
};

struct CheckpointError : Error {
  explicit CheckpointError(const std::string& what) : Error(ExitCode::checkpoint, what) {}
};

// Shape or argument violations inside the numeric core.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ExitCode::failure, what) {}
};

}  // namespace poda
