#include "fmgan/error.hpp"

namespace fmgan {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::input: return "input error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::capacity: return "capacity error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::range: return "range error";
  }
  return "error";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::input: return 3;
    case ErrorKind::numeric: return 4;
    default: return 1;
  }
}

}  // namespace fmgan
