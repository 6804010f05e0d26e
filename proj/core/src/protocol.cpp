#include "retide/protocol.hpp"

#include <cstring>

#include "retide/errors.hpp"

namespace retide {

namespace {

constexpr std::uint8_t kMagic[4] = {'R', 'T', 'I', 'D'};

class Writer {
public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void i8(std::int8_t v) { out_.push_back(std::uint8_t(v)); }
  void u16(std::uint16_t v) {
    out_.push_back(std::uint8_t(v));
    out_.push_back(std::uint8_t(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void bytes(const std::uint8_t* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }

private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return take(1)[0]; }
  std::int8_t i8() { return std::int8_t(u8()); }
  std::uint16_t u16() {
    auto p = take(2);
    return std::uint16_t(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    auto p = take(4);
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  std::span<const std::uint8_t> rest() {
    auto r = b_.subspan(pos_);
    pos_ = b_.size();
    return r;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (pos_ + n > b_.size()) throw IncompleteMessage("message payload truncated");
    auto r = b_.subspan(pos_, n);
    pos_ += n;
    return r;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void validate_image_fields(std::uint8_t channels, std::uint8_t bit_depth) {
  if (channels != 1 && channels != 3)
    throw ProtocolViolation("channels must be 1 or 3");
  if (bit_depth != 8 && bit_depth != 32)
    throw ProtocolViolation("bit_depth must be 8 or 32");
}

} // namespace

MsgType message_type(const Message& m) {
  struct V {
    MsgType operator()(const DenoiseRequest&) const { return MsgType::DenoiseRequest; }
    MsgType operator()(const DenoiseResponse&) const { return MsgType::DenoiseResponse; }
    MsgType operator()(const ErrorMsg&) const { return MsgType::Error; }
    MsgType operator()(const PingMsg&) const { return MsgType::Ping; }
    MsgType operator()(const PongMsg&) const { return MsgType::Pong; }
    MsgType operator()(const ModelInfoRequest&) const { return MsgType::ModelInfoRequest; }
    MsgType operator()(const ModelInfoResponse&) const { return MsgType::ModelInfoResponse; }
  };
  return std::visit(V{}, m);
}

void encode_header(const MessageHeader& h, std::uint8_t out[kHeaderSize]) {
  std::memcpy(out, kMagic, 4);
  out[4] = std::uint8_t(h.version);
  out[5] = std::uint8_t(h.version >> 8);
  out[6] = std::uint8_t(std::uint16_t(h.msg_type));
  out[7] = std::uint8_t(std::uint16_t(h.msg_type) >> 8);
  for (int i = 0; i < 8; ++i) out[8 + i] = std::uint8_t(h.payload_len >> (8 * i));
}

MessageHeader decode_header(std::span<const std::uint8_t> bytes, std::uint64_t max_payload) {
  if (bytes.size() < kHeaderSize) throw IncompleteMessage("short header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ProtocolViolation("bad magic");
  MessageHeader h;
  h.version = std::uint16_t(bytes[4] | (bytes[5] << 8));
  if (h.version != kProtocolVersion)
    throw ProtocolViolation("unsupported protocol version " + std::to_string(h.version));
  const std::uint16_t t = std::uint16_t(bytes[6] | (bytes[7] << 8));
  if (t < 1 || t > 7) throw ProtocolViolation("unknown msg_type " + std::to_string(t));
  h.msg_type = MsgType(t);
  h.payload_len = 0;
  for (int i = 7; i >= 0; --i) h.payload_len = (h.payload_len << 8) | bytes[8 + i];
  if (h.payload_len > max_payload)
    throw PayloadTooLarge("payload of " + std::to_string(h.payload_len) +
                          " bytes exceeds limit of " + std::to_string(max_payload));
  return h;
}

std::vector<std::uint8_t> encode_message(const Message& m) {
  std::vector<std::uint8_t> payload;
  Writer w(payload);
  std::visit(
      [&]<typename T>(const T& v) {
        if constexpr (std::is_same_v<T, DenoiseRequest>) {
          w.u64(v.job_id);
          w.u32(v.width);
          w.u32(v.height);
          w.u8(v.channels);
          w.u8(v.bit_depth);
          w.u16(v.tile);
          w.u16(v.overlap);
          w.bytes(v.pixels.data(), v.pixels.size());
        } else if constexpr (std::is_same_v<T, DenoiseResponse>) {
          w.u64(v.job_id);
          w.u8(v.status);
          if (v.status == 0) {
            w.u32(v.width);
            w.u32(v.height);
            w.u8(v.channels);
            w.u8(v.bit_depth);
            w.bytes(v.pixels.data(), v.pixels.size());
          }
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          w.u64(v.job_id);
          w.u32(std::uint32_t(v.text.size()));
          w.bytes(reinterpret_cast<const std::uint8_t*>(v.text.data()), v.text.size());
        } else if constexpr (std::is_same_v<T, ModelInfoResponse>) {
          w.u8(v.cin);
          w.u8(v.cout);
          w.u8(v.quantized);
          w.i8(v.input_exp);
          w.u32(v.layer_count);
          w.u64(v.param_count);
        } else {
          (void)v; // Ping, Pong, ModelInfoRequest: empty payload
        }
      },
      m);

  std::vector<std::uint8_t> frame(kHeaderSize);
  MessageHeader h;
  h.msg_type = message_type(m);
  h.payload_len = payload.size();
  encode_header(h, frame.data());
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

Message decode_payload(MsgType type, std::span<const std::uint8_t> payload) {
  Reader r(payload);
  switch (type) {
    case MsgType::DenoiseRequest: {
      DenoiseRequest m;
      m.job_id = r.u64();
      m.width = r.u32();
      m.height = r.u32();
      m.channels = r.u8();
      m.bit_depth = r.u8();
      m.tile = r.u16();
      m.overlap = r.u16();
      validate_image_fields(m.channels, m.bit_depth);
      if (m.width == 0 || m.height == 0) throw ProtocolViolation("zero image dims");
      auto px = r.rest();
      if (px.size() != m.expected_bytes())
        throw ProtocolViolation("pixel data length mismatch: got " + std::to_string(px.size()) +
                                ", want " + std::to_string(m.expected_bytes()));
      m.pixels.assign(px.begin(), px.end());
      return m;
    }
    case MsgType::DenoiseResponse: {
      DenoiseResponse m;
      m.job_id = r.u64();
      m.status = r.u8();
      if (m.status == 0) {
        m.width = r.u32();
        m.height = r.u32();
        m.channels = r.u8();
        m.bit_depth = r.u8();
        validate_image_fields(m.channels, m.bit_depth);
        auto px = r.rest();
        const std::size_t want = std::size_t(m.width) * m.height * m.channels * (m.bit_depth / 8);
        if (px.size() != want) throw ProtocolViolation("response pixel length mismatch");
        m.pixels.assign(px.begin(), px.end());
      }
      return m;
    }
    case MsgType::Error: {
      ErrorMsg m;
      m.job_id = r.u64();
      const std::uint32_t len = r.u32();
      auto txt = r.rest();
      if (txt.size() != len) throw ProtocolViolation("error text length mismatch");
      m.text.assign(txt.begin(), txt.end());
      return m;
    }
    case MsgType::Ping:
      if (r.remaining()) throw ProtocolViolation("ping carries no payload");
      return PingMsg{};
    case MsgType::Pong:
      if (r.remaining()) throw ProtocolViolation("pong carries no payload");
      return PongMsg{};
    case MsgType::ModelInfoRequest:
      if (r.remaining()) throw ProtocolViolation("model info request carries no payload");
      return ModelInfoRequest{};
    case MsgType::ModelInfoResponse: {
      ModelInfoResponse m;
      m.cin = r.u8();
      m.cout = r.u8();
      m.quantized = r.u8();
      m.input_exp = r.i8();
      m.layer_count = r.u32();
      m.param_count = r.u64();
      return m;
    }
  }
  throw ProtocolViolation("unknown msg_type");
}

Message decode_message(std::span<const std::uint8_t> bytes, std::uint64_t max_payload) {
  const MessageHeader h = decode_header(bytes, max_payload);
  if (bytes.size() < kHeaderSize + h.payload_len)
    throw IncompleteMessage("frame shorter than header-declared length");
  if (bytes.size() > kHeaderSize + h.payload_len)
    throw ProtocolViolation("frame longer than header-declared length");
  return decode_payload(h.msg_type, bytes.subspan(kHeaderSize, h.payload_len));
}

} // namespace retide
