#pragma once

#include <cstdint>

#include "retide/model.hpp"
#include "retide/tensor.hpp"

// Independent naive implementations used only as test oracles. They share no
// code with the library kernels: plain nested loops, explicit zero padding
// (every tap multiplies, fetching 0 out of bounds), and the transposed
// convolution reads the zero-stuffed upsampled input at output resolution.
// mult_count, when given, is incremented once per multiply.

namespace ref {

retide::TensorF32 conv2d(const retide::TensorF32& x, const retide::TensorF32& w,
                         std::uint64_t* mult_count = nullptr);

retide::TensorF32 deconv2d(const retide::TensorF32& x, const retide::TensorF32& w,
                           std::uint64_t* mult_count = nullptr);

retide::TensorF32 forward(const retide::ModelGraph& g, const retide::WeightStore& w,
                          const retide::TensorF32& x, std::uint64_t* mult_count = nullptr);

} // namespace ref
