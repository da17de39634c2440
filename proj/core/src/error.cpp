#include "mrkd/error.hpp"

namespace mrkd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDecode: return "decode";
    case ErrorKind::kUnsupportedFormat: return "unsupported-format";
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kCorruptCache: return "corrupt-cache";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kInvalidDistribution: return "invalid-distribution";
    case ErrorKind::kAggregation: return "aggregation";
    case ErrorKind::kManifest: return "manifest";
    case ErrorKind::kMissingFeature: return "missing-feature";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace mrkd
