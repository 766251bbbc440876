#include <sstream>

#include "s4al/error.hpp"
#include "s4al/rng.hpp"

namespace s4al {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kDuplicateAcquisition: return "duplicate-acquisition";
    case ErrorKind::kEmptyPool: return "empty-pool";
    case ErrorKind::kEmptyBuffer: return "empty-buffer";
    case ErrorKind::kCannotTrain: return "cannot-train";
    case ErrorKind::kUndefinedMetric: return "undefined-metric";
    case ErrorKind::kConfigConflict: return "config-conflict";
    case ErrorKind::kIncompleteRun: return "incomplete-run";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return 2;
    case ErrorKind::kDuplicateAcquisition: return 3;
    case ErrorKind::kEmptyPool: return 4;
    case ErrorKind::kEmptyBuffer: return 5;
    case ErrorKind::kCannotTrain: return 6;
    case ErrorKind::kUndefinedMetric: return 7;
    case ErrorKind::kConfigConflict: return 8;
    case ErrorKind::kIncompleteRun: return 9;
    case ErrorKind::kIo: return 10;
    case ErrorKind::kFormat: return 11;
  }
  return 1;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x51ED27ULL));
  return Rng(h);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) fail(ErrorKind::kFormat, "corrupt rng state");
}

}  // namespace s4al
