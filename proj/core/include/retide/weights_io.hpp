#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "retide/model.hpp"

namespace retide {

// RTDW weight container. One format stores FP32 and quantized models:
//   magic "RTDW", u16 version = 1, u8 cin, u8 cout, u16 record count,
//   then per record: u16 layer-id, u8 dtype, i8 scale_exp (dtype != 0 only),
//   four u32 dims (n,c,h,w), payload little-endian.
// dtype 0 = f32 kernel, 1 = i8 kernel, 2 = activation scale table
// (layer-id 0xFFFF, dims (1,1,1,N), payload = N i8 exponents indexed by
// tensor position: 0 = network input, i+1 = output of layer i).

constexpr std::uint16_t kRtdwVersion = 1;
constexpr std::uint16_t kScaleTableId = 0xFFFF;

enum class RecordType : std::uint8_t { F32 = 0, I8 = 1, ScaleTable = 2 };

struct WeightRecord {
  std::uint16_t layer_id = 0;
  RecordType dtype = RecordType::F32;
  std::int8_t scale_exp = 0;
  std::uint32_t dims[4] = {1, 1, 1, 1};
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const {
    return std::size_t(dims[0]) * dims[1] * dims[2] * dims[3];
  }
};

struct WeightFile {
  std::uint16_t version = kRtdwVersion;
  std::uint8_t cin = 3;
  std::uint8_t cout = 3;
  std::vector<WeightRecord> records;
};

void write_weight_file(std::ostream& os, const WeightFile& f);
WeightFile read_weight_file(std::istream& is);

void write_weight_file(const std::string& path, const WeightFile& f);
WeightFile read_weight_file(const std::string& path);

// FP32 convenience wrappers over the record layer.
void save_weights(const std::string& path, const ModelGraph& g, const WeightStore& w);

// Record helpers shared with the quantized serializer.
WeightRecord make_f32_record(std::uint16_t layer_id, const TensorF32& t);
WeightRecord make_i8_record(std::uint16_t layer_id, const TensorI8& t);
TensorF32 record_to_f32(const WeightRecord& r);
TensorI8 record_to_i8(const WeightRecord& r);

} // namespace retide
