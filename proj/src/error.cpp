// SPDX-License-Identifier: Apache-2.0
#include "fedmd/error.hpp"

namespace fedmd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::index: return "index";
    case ErrorKind::config: return "config";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::parse: return "parse";
    case ErrorKind::encode: return "encode";
    case ErrorKind::decode: return "decode";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::channel: return "channel";
    case ErrorKind::io: return "io";
    case ErrorKind::data: return "data";
  }
  return "unknown";
}

}  // namespace fedmd
