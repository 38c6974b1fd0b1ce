// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cmath>
#include <cstring>

#include "fedmd/error.hpp"
#include "fedmd/transport.hpp"

namespace fedmd {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }

  void u32_be(std::uint32_t v) {
    bytes_.push_back(static_cast<std::uint8_t>(v >> 24));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 16));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes_.push_back(static_cast<std::uint8_t>(v));
  }

  void f32_le(float f) {
    const auto v = std::bit_cast<std::uint32_t>(f);
    bytes_.push_back(static_cast<std::uint8_t>(v));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 16));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 24));
  }

  void matrix(const Tensor& t) {
    u32_be(static_cast<std::uint32_t>(t.rows()));
    u32_be(static_cast<std::uint32_t>(t.cols()));
    for (float f : t.values()) f32_le(f);
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounded reader over [0, end); offsets in errors are absolute frame offsets.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw DecodeError(pos_, std::string("frame too short for ") + what);
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }

  std::uint32_t u32_be(const char* what) {
    need(4, what);
    const std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 24) | (std::uint32_t{bytes_[pos_ + 1]} << 16) |
                            (std::uint32_t{bytes_[pos_ + 2]} << 8) | std::uint32_t{bytes_[pos_ + 3]};
    pos_ += 4;
    return v;
  }

  float f32_le() {
    const std::uint32_t v = std::uint32_t{bytes_[pos_]} | (std::uint32_t{bytes_[pos_ + 1]} << 8) |
                            (std::uint32_t{bytes_[pos_ + 2]} << 16) | (std::uint32_t{bytes_[pos_ + 3]} << 24);
    const std::size_t at = pos_;
    pos_ += 4;
    const float f = std::bit_cast<float>(v);
    if (!std::isfinite(f)) {
      throw DecodeError(at, "non-finite score value");
    }
    return f;
  }

  Tensor matrix() {
    const std::size_t at = pos_;
    const std::uint32_t rows = u32_be("matrix rows");
    const std::uint32_t cols = u32_be("matrix cols");
    if (cols == 0) {
      throw DecodeError(at + 4, "matrix with zero columns");
    }
    const std::uint64_t bytes = std::uint64_t{rows} * cols * 4;
    if (bytes != remaining()) {
      throw DecodeError(pos_, "matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                                  std::to_string(bytes) + " payload bytes, frame has " + std::to_string(remaining()));
    }
    std::vector<float> values(static_cast<std::size_t>(rows) * cols);
    for (float& f : values) f = f32_le();
    return Tensor::matrix(rows, cols, std::move(values));
  }

  void finish() const {
    if (pos_ != end_) {
      throw DecodeError(pos_, std::to_string(remaining()) + " unexpected trailing bytes in frame");
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

void check_matrix_dims(const Tensor& t) {
  if (t.rank() != 2) throw EncodeError("score payload must be a 2-D matrix, got " + shape_string(t.shape()));
  if (t.cols() == 0) throw EncodeError("score payload has zero columns");
  if (t.rows() > 0xffffffffULL || t.cols() > 0xffffffffULL) throw EncodeError("matrix dimension exceeds u32");
  if (!t.all_finite()) throw EncodeError("score payload contains non-finite values");
}

}  // namespace

std::vector<std::uint8_t> encode_message(const Message& msg) {
  Writer w;
  w.u32_be(0);  // length, patched below
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ScoreMatrix>) {
          check_matrix_dims(m.scores);
          w.u8(static_cast<std::uint8_t>(MessageTag::score_report));
          w.u32_be(kProtocolVersion);
          w.u32_be(m.round);
          w.u32_be(m.party);
          w.matrix(m.scores);
        } else if constexpr (std::is_same_v<T, ConsensusTargets>) {
          check_matrix_dims(m.targets);
          w.u8(static_cast<std::uint8_t>(MessageTag::consensus_broadcast));
          w.u32_be(kProtocolVersion);
          w.u32_be(m.round);
          w.matrix(m.targets);
        } else if constexpr (std::is_same_v<T, SubsetSelection>) {
          if (m.indices.size() > 0xffffffffULL) throw EncodeError("subset too large");
          w.u8(static_cast<std::uint8_t>(MessageTag::subset_announcement));
          w.u32_be(kProtocolVersion);
          w.u32_be(m.round);
          w.u32_be(static_cast<std::uint32_t>(m.indices.size()));
          for (std::uint32_t i : m.indices) w.u32_be(i);
        } else {
          w.u8(static_cast<std::uint8_t>(MessageTag::round_complete));
          w.u32_be(kProtocolVersion);
          w.u32_be(m.round);
        }
      },
      msg);
  auto& bytes = w.bytes();
  const std::size_t length = bytes.size() - kLengthPrefixSize;
  if (length > kMaxFrameLength) {
    throw EncodeError("frame payload of " + std::to_string(length) + " bytes exceeds 2^31-1");
  }
  bytes[0] = static_cast<std::uint8_t>(length >> 24);
  bytes[1] = static_cast<std::uint8_t>(length >> 16);
  bytes[2] = static_cast<std::uint8_t>(length >> 8);
  bytes[3] = static_cast<std::uint8_t>(length);
  return std::move(bytes);
}

Message decode_message(std::span<const std::uint8_t> frame) {
  Reader prefix(frame, 0, frame.size());
  const std::uint32_t length = prefix.u32_be("length prefix");
  if (length > kMaxFrameLength) {
    throw DecodeError(0, "declared length " + std::to_string(length) + " exceeds 2^31-1");
  }
  if (frame.size() - kLengthPrefixSize < length) {
    throw DecodeError(frame.size(), "truncated frame: declared " + std::to_string(length) + " bytes, have " +
                                        std::to_string(frame.size() - kLengthPrefixSize));
  }
  if (frame.size() - kLengthPrefixSize > length) {
    throw DecodeError(kLengthPrefixSize + length, "bytes beyond the declared frame length");
  }
  Reader r(frame, kLengthPrefixSize, kLengthPrefixSize + length);
  const std::size_t tag_at = r.pos();
  const std::uint8_t tag = r.u8("message tag");
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32_be("protocol version");
  if (tag < 1 || tag > 4) {
    throw DecodeError(tag_at, "unknown message tag " + std::to_string(tag));
  }
  if (version != kProtocolVersion) {
    throw DecodeError(version_at, "protocol version " + std::to_string(version) + ", expected " +
                                      std::to_string(kProtocolVersion));
  }
  switch (static_cast<MessageTag>(tag)) {
    case MessageTag::score_report: {
      ScoreMatrix m;
      m.round = r.u32_be("round");
      m.party = r.u32_be("party");
      m.scores = r.matrix();
      r.finish();
      return m;
    }
    case MessageTag::consensus_broadcast: {
      ConsensusTargets m;
      m.round = r.u32_be("round");
      m.targets = r.matrix();
      r.finish();
      return m;
    }
    case MessageTag::subset_announcement: {
      SubsetSelection m;
      m.round = r.u32_be("round");
      const std::size_t count_at = r.pos();
      const std::uint32_t count = r.u32_be("index count");
      if (std::uint64_t{count} * 4 != r.remaining()) {
        throw DecodeError(count_at, "index count " + std::to_string(count) + " disagrees with frame length");
      }
      m.indices.resize(count);
      for (auto& i : m.indices) i = r.u32_be("index");
      r.finish();
      return m;
    }
    case MessageTag::round_complete: {
      RoundComplete m;
      m.round = r.u32_be("round");
      r.finish();
      return m;
    }
  }
  throw DecodeError(tag_at, "unknown message tag " + std::to_string(tag));
}

}  // namespace fedmd
