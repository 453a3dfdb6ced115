// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dimap {

enum class dtype { f32, f16 };

size_t dtype_size(dtype t);
const char * dtype_name(dtype t);

// One named tensor: little-endian element buffer plus its declared layout.
struct tensor_record {
    std::string name;
    dtype dt = dtype::f32;
    std::vector<int64_t> shape; // rank 1..4, entries >= 0
    std::vector<uint8_t> data;  // exactly numel() * dtype_size(dt) bytes

    int64_t numel() const;
    size_t rank() const { return shape.size(); }
};

// Ordered tensor collection; iteration order is the header order of the
// source file and is preserved on write.
struct checkpoint {
    std::vector<tensor_record> tensors;
    std::vector<std::pair<std::string, std::string>> metadata; // "__metadata__", order preserved

    const tensor_record * find(std::string_view name) const;
    int64_t total_params() const;
};

checkpoint read_checkpoint(const std::string & path);
void write_checkpoint(const checkpoint & ckpt, const std::string & path);

// Widen one tensor to f64 for score math. Rejects NaN/inf payloads, which
// signal a corrupt checkpoint.
std::vector<double> to_f64(const tensor_record & rec);

// IEEE 754 binary16 conversions, including subnormals.
double f16_bits_to_double(uint16_t bits);
uint16_t f16_bits_from_float(float f); // round to nearest even

// Encode a value buffer into a record of the given dtype (f16 via RNE).
tensor_record make_tensor(std::string name, dtype dt, std::vector<int64_t> shape,
                          const std::vector<double> & values);

} // namespace dimap
