// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedmd/error.hpp"
#include "fedmd/messages.hpp"

namespace fedmd {

// Frame layout (all header integers big-endian):
//   u32 length   bytes that follow this field
//   u8  tag      1 ScoreReport, 2 ConsensusBroadcast, 3 SubsetAnnouncement, 4 RoundComplete
//   u32 version  kProtocolVersion
//   payload
//     ScoreReport:        u32 round, u32 party, u32 rows, u32 cols, f32[rows*cols] (little-endian)
//     ConsensusBroadcast: u32 round, u32 rows, u32 cols, f32[rows*cols] (little-endian)
//     SubsetAnnouncement: u32 round, u32 count, u32[count]
//     RoundComplete:      u32 round
inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::size_t kLengthPrefixSize = 4;
inline constexpr std::size_t kMaxFrameLength = 0x7fffffffU;

enum class MessageTag : std::uint8_t {
  score_report = 1,
  consensus_broadcast = 2,
  subset_announcement = 3,
  round_complete = 4,
};

class EncodeError : public Error {
 public:
  explicit EncodeError(const std::string& m) : Error(ErrorKind::encode, m) {}
};

std::vector<std::uint8_t> encode_message(const Message& msg);

/// Decodes exactly one complete frame. Any malformed input raises
/// DecodeError; nothing past the declared length is read.
Message decode_message(std::span<const std::uint8_t> frame);

/// Ordered, reliable delivery of whole messages between two endpoints.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const Message& msg) = 0;
  /// Blocks until a message arrives. Throws ChannelError once the peer is gone.
  virtual Message recv() = 0;
  virtual void close() = 0;
};

class Listener {
 public:
  virtual ~Listener() = default;
  virtual std::unique_ptr<Channel> accept() = 0;
  /// The bound address, with the concrete port for TCP.
  virtual std::string address() const = 0;
};

/// In-process transport. Messages still travel as encoded frames so both
/// transports exercise the same codec.
class InProcessBus {
 public:
  InProcessBus();
  ~InProcessBus();
  InProcessBus(const InProcessBus&) = delete;
  InProcessBus& operator=(const InProcessBus&) = delete;

  std::unique_ptr<Listener> serve(const std::string& name);
  std::unique_ptr<Channel> connect(const std::string& name);

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

/// TCP transport; addresses are "host:port" with port 0 picking a free port.
std::unique_ptr<Listener> serve_tcp(const std::string& address);
std::unique_ptr<Channel> connect_tcp(const std::string& address, double retry_seconds = 0.0);

}  // namespace fedmd
