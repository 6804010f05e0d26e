#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace retide {

// Length-prefixed binary protocol for the denoising service. Every frame is
// a 16-byte header followed by payload_len payload bytes:
//   bytes 0..3   magic "RTID" (0x52544944 written big-endian, like the file magics)
//   bytes 4..5   u16 version = 1      (little-endian, as are all fields below)
//   bytes 6..7   u16 msg_type
//   bytes 8..15  u64 payload_len
// The u64 length removes any resolution ceiling; servers enforce a
// configurable cap and reject oversized frames before buffering them.

constexpr std::uint16_t kProtocolVersion = 1;
constexpr std::size_t kHeaderSize = 16;
constexpr std::uint64_t kDefaultMaxPayload = std::uint64_t(1) << 32;

enum class MsgType : std::uint16_t {
  DenoiseRequest = 1,
  DenoiseResponse = 2,
  Error = 3,
  Ping = 4,
  Pong = 5,
  ModelInfoRequest = 6,
  ModelInfoResponse = 7,
};

struct MessageHeader {
  std::uint16_t version = kProtocolVersion;
  MsgType msg_type = MsgType::Ping;
  std::uint64_t payload_len = 0;
};

struct DenoiseRequest {
  std::uint64_t job_id = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t channels = 3;  // 1 or 3
  std::uint8_t bit_depth = 8; // 8 (unsigned) or 32 (float, little-endian)
  std::uint16_t tile = 256;
  std::uint16_t overlap = 32;
  std::vector<std::uint8_t> pixels; // row-major interleaved

  std::size_t expected_bytes() const {
    return std::size_t(width) * height * channels * (bit_depth / 8);
  }
};

struct DenoiseResponse {
  std::uint64_t job_id = 0;
  std::uint8_t status = 0; // 0 = ok; image fields present only when 0
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t channels = 3;
  std::uint8_t bit_depth = 8;
  std::vector<std::uint8_t> pixels;
};

struct ErrorMsg {
  std::uint64_t job_id = 0; // 0 when the failure is not tied to a job
  std::string text;
};

struct PingMsg {};
struct PongMsg {};
struct ModelInfoRequest {};

struct ModelInfoResponse {
  std::uint8_t cin = 3;
  std::uint8_t cout = 3;
  std::uint8_t quantized = 0;
  std::int8_t input_exp = 0; // meaningful when quantized
  std::uint32_t layer_count = 0;
  std::uint64_t param_count = 0;
};

using Message = std::variant<DenoiseRequest, DenoiseResponse, ErrorMsg, PingMsg, PongMsg,
                             ModelInfoRequest, ModelInfoResponse>;

MsgType message_type(const Message& m);

// Full frame (header + payload). decode validates magic, version, type and
// the length bound before touching the payload.
std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> bytes,
                       std::uint64_t max_payload = kDefaultMaxPayload);

// Incremental path used by the socket loops.
void encode_header(const MessageHeader& h, std::uint8_t out[kHeaderSize]);
MessageHeader decode_header(std::span<const std::uint8_t> bytes,
                            std::uint64_t max_payload = kDefaultMaxPayload);
Message decode_payload(MsgType type, std::span<const std::uint8_t> payload);

} // namespace retide
