#pragma once

#include <stdexcept>
#include <string>

namespace tomodiff {

// Every failure surfaced by the library carries a category so the CLI can map
// it onto a distinct exit code.
enum class ErrorKind {
  kParse,
  kValidation,
  kShape,
  kRange,
  kTopology,
  kTraining,
  kOptimization,
  kIntegrity,
  kUnsupportedVersion,
  kUndefinedMetric,
  kIo,
  kConfig,
};

inline const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kTopology: return "topology error";
    case ErrorKind::kTraining: return "training error";
    case ErrorKind::kOptimization: return "optimization error";
    case ErrorKind::kIntegrity: return "integrity error";
    case ErrorKind::kUnsupportedVersion: return "unsupported version";
    case ErrorKind::kUndefinedMetric: return "undefined metric";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kConfig: return "config error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TOMODIFF_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

TOMODIFF_DEFINE_ERROR(ParseError, kParse)
TOMODIFF_DEFINE_ERROR(ValidationError, kValidation)
TOMODIFF_DEFINE_ERROR(ShapeError, kShape)
TOMODIFF_DEFINE_ERROR(RangeError, kRange)
TOMODIFF_DEFINE_ERROR(TopologyError, kTopology)
TOMODIFF_DEFINE_ERROR(TrainingError, kTraining)
TOMODIFF_DEFINE_ERROR(OptimizationError, kOptimization)
TOMODIFF_DEFINE_ERROR(IntegrityError, kIntegrity)
TOMODIFF_DEFINE_ERROR(UnsupportedVersionError, kUnsupportedVersion)
TOMODIFF_DEFINE_ERROR(UndefinedMetricError, kUndefinedMetric)
TOMODIFF_DEFINE_ERROR(IoError, kIo)
TOMODIFF_DEFINE_ERROR(ConfigError, kConfig)

#undef TOMODIFF_DEFINE_ERROR

}  // namespace tomodiff
