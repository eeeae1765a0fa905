#include "qairn/error.hpp"

namespace qairn {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Input: return "input";
    case ErrorKind::Codec: return "codec";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Io: return "io";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Incompatible: return "incompatible";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::UndefinedCorrelation: return "undefined-correlation";
  }
  return "unknown";
}

}  // namespace qairn
