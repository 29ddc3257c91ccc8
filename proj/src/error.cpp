#include "seg/error.hpp"

namespace seg {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidLabel: return "invalid-label";
    case ErrorKind::Config: return "config";
    case ErrorKind::EmptyData: return "empty-data";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::EmptySelection: return "empty-selection";
    case ErrorKind::EmptyEvaluation: return "empty-evaluation";
    case ErrorKind::CheckpointIncompatible: return "checkpoint-incompatible";
    case ErrorKind::TrainingDiverged: return "training-diverged";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "io";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

}  // namespace seg
