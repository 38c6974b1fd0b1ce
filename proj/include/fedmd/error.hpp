// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fedmd {

enum class ErrorKind {
  shape,
  index,
  config,
  numeric,
  parse,
  encode,
  decode,
  protocol,
  channel,
  io,
  data,
};

std::string_view to_string(ErrorKind kind);

/// Base of every error the library throws. The kind doubles as the
/// machine-readable category printed by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& m) : Error(ErrorKind::index, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& m) : Error(ErrorKind::protocol, m) {}
};

class ChannelError : public Error {
 public:
  explicit ChannelError(const std::string& m) : Error(ErrorKind::channel, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};

/// Errors raised while reading a byte stream carry the offending offset.
class OffsetError : public Error {
 public:
  OffsetError(ErrorKind kind, std::size_t offset, const std::string& m)
      : Error(kind, m + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ParseError : public OffsetError {
 public:
  ParseError(std::size_t offset, const std::string& m) : OffsetError(ErrorKind::parse, offset, m) {}
};

class DecodeError : public OffsetError {
 public:
  DecodeError(std::size_t offset, const std::string& m) : OffsetError(ErrorKind::decode, offset, m) {}
};

}  // namespace fedmd
