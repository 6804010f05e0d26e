#include "retide/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "retide/errors.hpp"

namespace retide {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'D', 'W'};

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw IncompleteMessage("RTDW: truncated");
  return std::uint16_t(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IncompleteMessage("RTDW: truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

} // namespace

void write_weight_file(std::ostream& os, const WeightFile& f) {
  os.write(kMagic, 4);
  put_u16(os, f.version);
  os.put(char(f.cin));
  os.put(char(f.cout));
  put_u16(os, std::uint16_t(f.records.size()));
  for (const auto& r : f.records) {
    put_u16(os, r.layer_id);
    os.put(char(std::uint8_t(r.dtype)));
    if (r.dtype != RecordType::F32) os.put(char(r.scale_exp));
    for (auto d : r.dims) put_u32(os, d);
    os.write(reinterpret_cast<const char*>(r.payload.data()), std::streamsize(r.payload.size()));
  }
  if (!os) throw std::runtime_error("RTDW: write failed");
}

WeightFile read_weight_file(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw ProtocolViolation("RTDW: bad magic");
  WeightFile f;
  f.version = get_u16(is);
  if (f.version != kRtdwVersion)
    throw ProtocolViolation("RTDW: unsupported version " + std::to_string(f.version));
  f.cin = std::uint8_t(is.get());
  f.cout = std::uint8_t(is.get());
  const std::uint16_t count = get_u16(is);
  f.records.reserve(count);
  for (int i = 0; i < count; ++i) {
    WeightRecord r;
    r.layer_id = get_u16(is);
    const int dt = is.get();
    if (dt < 0 || dt > 2) throw ProtocolViolation("RTDW: unknown record dtype");
    r.dtype = RecordType(dt);
    if (r.dtype != RecordType::F32) r.scale_exp = std::int8_t(is.get());
    for (auto& d : r.dims) d = get_u32(is);
    const std::size_t elems = r.element_count();
    const std::size_t bytes = elems * (r.dtype == RecordType::F32 ? 4 : 1);
    r.payload.resize(bytes);
    is.read(reinterpret_cast<char*>(r.payload.data()), std::streamsize(bytes));
    if (!is) throw IncompleteMessage("RTDW: truncated record payload");
    f.records.push_back(std::move(r));
  }
  return f;
}

void write_weight_file(const std::string& path, const WeightFile& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_weight_file(os, f);
}

WeightFile read_weight_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_weight_file(is);
}

WeightRecord make_f32_record(std::uint16_t layer_id, const TensorF32& t) {
  WeightRecord r;
  r.layer_id = layer_id;
  r.dtype = RecordType::F32;
  r.dims[0] = std::uint32_t(t.n);
  r.dims[1] = std::uint32_t(t.c);
  r.dims[2] = std::uint32_t(t.h);
  r.dims[3] = std::uint32_t(t.w);
  r.payload.resize(t.data.size() * 4);
  std::memcpy(r.payload.data(), t.data.data(), r.payload.size());
  return r;
}

WeightRecord make_i8_record(std::uint16_t layer_id, const TensorI8& t) {
  WeightRecord r;
  r.layer_id = layer_id;
  r.dtype = RecordType::I8;
  r.scale_exp = std::int8_t(t.scale_exp);
  r.dims[0] = std::uint32_t(t.n);
  r.dims[1] = std::uint32_t(t.c);
  r.dims[2] = std::uint32_t(t.h);
  r.dims[3] = std::uint32_t(t.w);
  r.payload.resize(t.data.size());
  std::memcpy(r.payload.data(), t.data.data(), r.payload.size());
  return r;
}

TensorF32 record_to_f32(const WeightRecord& r) {
  if (r.dtype != RecordType::F32) throw std::invalid_argument("record is not f32");
  TensorF32 t(int(r.dims[0]), int(r.dims[1]), int(r.dims[2]), int(r.dims[3]));
  std::memcpy(t.data.data(), r.payload.data(), r.payload.size());
  return t;
}

TensorI8 record_to_i8(const WeightRecord& r) {
  if (r.dtype != RecordType::I8) throw std::invalid_argument("record is not i8");
  TensorI8 t(int(r.dims[0]), int(r.dims[1]), int(r.dims[2]), int(r.dims[3]), r.scale_exp);
  std::memcpy(t.data.data(), r.payload.data(), r.payload.size());
  return t;
}

void save_weights(const std::string& path, const ModelGraph& g, const WeightStore& w) {
  w.validate(g);
  WeightFile f;
  f.cin = std::uint8_t(g.cin);
  f.cout = std::uint8_t(g.cout);
  for (const auto& [id, kernel] : w.kernels)
    f.records.push_back(make_f32_record(std::uint16_t(id), kernel));
  write_weight_file(path, f);
}

} // namespace retide
