#pragma once

#include <stdexcept>
#include <string>

namespace s4al {

// Every failure the library reports falls into one of these buckets. The CLI
// maps each bucket onto its own process exit code.
enum class ErrorKind {
  kInvalidArgument,
  kDuplicateAcquisition,
  kEmptyPool,
  kEmptyBuffer,
  kCannotTrain,
  kUndefinedMetric,
  kConfigConflict,
  kIncompleteRun,
  kIo,
  kFormat,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind) noexcept;

// Process exit code for an error bucket; 0 is reserved for success and 1 for
// unexpected failures.
int exit_code(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const char* what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}
inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}

}  // namespace s4al
