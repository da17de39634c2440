#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mrkd {

enum class ErrorKind {
  kDecode,
  kUnsupportedFormat,
  kInvalidInput,
  kParameter,
  kCorruptCache,
  kShape,
  kNumeric,
  kInvalidDistribution,
  kAggregation,
  kManifest,
  kMissingFeature,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a category so the CLI can map
// it onto an exit code and a one-word prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mrkd
