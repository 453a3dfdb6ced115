// SPDX-License-Identifier: Apache-2.0
#include "dimap/tensor_store.hpp"

#include "dimap/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace dimap {

using ordered_json = nlohmann::ordered_json;

size_t dtype_size(dtype t) {
    return t == dtype::f32 ? 4 : 2;
}

const char * dtype_name(dtype t) {
    return t == dtype::f32 ? "F32" : "F16";
}

const char * errc_name(errc c) {
    switch (c) {
        case errc::malformed_header:   return "MalformedHeader";
        case errc::offset_error:       return "OffsetError";
        case errc::unsupported_dtype:  return "UnsupportedDtype";
        case errc::duplicate_name:     return "DuplicateName";
        case errc::io_error:           return "IoError";
        case errc::non_finite_value:   return "NonFiniteValue";
        case errc::invalid_record:     return "InvalidRecord";
        case errc::invalid_config:     return "InvalidConfig";
        case errc::unclassified_tensor: return "UnclassifiedTensor";
        case errc::empty_module:       return "EmptyModule";
        case errc::ratio_out_of_range: return "RatioOutOfRange";
        case errc::unknown_preset:     return "UnknownPreset";
        case errc::shape_mismatch:     return "ShapeMismatch";
        case errc::unknown_tensor:     return "UnknownTensor";
        case errc::dim_mismatch:       return "DimMismatch";
        case errc::too_large:          return "TooLarge";
        case errc::bound_violated:     return "BoundViolated";
    }
    return "UnknownError";
}

int64_t tensor_record::numel() const {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) {
            fail(errc::invalid_record, "negative dimension in tensor '" + name + "'");
        }
        if (d != 0 && n > std::numeric_limits<int64_t>::max() / d) {
            fail(errc::invalid_record, "shape product overflow in tensor '" + name + "'");
        }
        n *= d;
    }
    return n;
}

const tensor_record * checkpoint::find(std::string_view name) const {
    for (const auto & t : tensors) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

int64_t checkpoint::total_params() const {
    int64_t n = 0;
    for (const auto & t : tensors) {
        n += t.numel();
    }
    return n;
}

// ---------------------------------------------------------------------------
// binary16
// ---------------------------------------------------------------------------

double f16_bits_to_double(uint16_t bits) {
    const int sign = (bits >> 15) & 1;
    const int exp = (bits >> 10) & 0x1f;
    const int mant = bits & 0x3ff;
    double v;
    if (exp == 0) {
        v = std::ldexp(double(mant), -24); // subnormal: m * 2^-24
    } else if (exp == 31) {
        v = mant == 0 ? std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::quiet_NaN();
    } else {
        v = std::ldexp(double(mant + 1024), exp - 25); // (1 + m/1024) * 2^(e-15)
    }
    return sign ? -v : v;
}

uint16_t f16_bits_from_float(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    const uint32_t sign = (x >> 16) & 0x8000u;
    const uint32_t fexp = (x >> 23) & 0xffu;
    uint32_t m = x & 0x7fffffu;
    if (fexp == 0xff) { // inf / nan
        return uint16_t(sign | 0x7c00u | (m ? (0x200u | (m >> 13)) : 0));
    }
    const int32_t e = int32_t(fexp) - 127 + 15;
    if (e >= 31) {
        return uint16_t(sign | 0x7c00u); // overflow -> inf
    }
    if (e <= 0) {
        if (e < -10) {
            return uint16_t(sign); // underflow -> signed zero
        }
        m |= 0x800000u;
        const uint32_t shift = uint32_t(14 - e); // 14..24
        uint32_t half = m >> shift;
        const uint32_t rem = m & ((1u << shift) - 1);
        const uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half & 1))) {
            half++;
        }
        return uint16_t(sign | half);
    }
    uint16_t half = uint16_t(sign | uint32_t(e << 10) | (m >> 13));
    const uint32_t rem = m & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1))) {
        half++; // carry rolls into the exponent field, which is the correct RNE result
    }
    return half;
}

// ---------------------------------------------------------------------------
// record construction / decoding
// ---------------------------------------------------------------------------

static void validate_record(const tensor_record & rec) {
    if (rec.name.empty()) {
        fail(errc::invalid_record, "tensor with empty name");
    }
    if (rec.rank() < 1 || rec.rank() > 4) {
        fail(errc::invalid_record, "tensor '" + rec.name + "' has rank " +
                                       std::to_string(rec.rank()) + ", expected 1..4");
    }
    const int64_t n = rec.numel();
    if (rec.data.size() != size_t(n) * dtype_size(rec.dt)) {
        fail(errc::invalid_record, "tensor '" + rec.name + "' data length " +
                                       std::to_string(rec.data.size()) + " != numel*dtype_size");
    }
}

tensor_record make_tensor(std::string name, dtype dt, std::vector<int64_t> shape,
                          const std::vector<double> & values) {
    tensor_record rec;
    rec.name = std::move(name);
    rec.dt = dt;
    rec.shape = std::move(shape);
    const int64_t n = rec.numel();
    if (size_t(n) != values.size()) {
        fail(errc::invalid_record, "value count does not match shape for '" + rec.name + "'");
    }
    rec.data.resize(size_t(n) * dtype_size(dt));
    if (dt == dtype::f32) {
        for (int64_t i = 0; i < n; ++i) {
            float f = float(values[size_t(i)]);
            std::memcpy(rec.data.data() + size_t(i) * 4, &f, 4);
        }
    } else {
        for (int64_t i = 0; i < n; ++i) {
            uint16_t h = f16_bits_from_float(float(values[size_t(i)]));
            rec.data[size_t(i) * 2] = uint8_t(h & 0xff);
            rec.data[size_t(i) * 2 + 1] = uint8_t(h >> 8);
        }
    }
    return rec;
}

std::vector<double> to_f64(const tensor_record & rec) {
    validate_record(rec);
    const int64_t n = rec.numel();
    std::vector<double> out(size_t(n), 0.0);
    if (rec.dt == dtype::f32) {
        for (int64_t i = 0; i < n; ++i) {
            float f;
            std::memcpy(&f, rec.data.data() + size_t(i) * 4, 4);
            out[size_t(i)] = double(f);
        }
    } else {
        for (int64_t i = 0; i < n; ++i) {
            uint16_t bits = uint16_t(rec.data[size_t(i) * 2]) |
                            uint16_t(uint16_t(rec.data[size_t(i) * 2 + 1]) << 8);
            out[size_t(i)] = f16_bits_to_double(bits);
        }
    }
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(out[size_t(i)])) {
            fail(errc::non_finite_value, "tensor '" + rec.name + "' contains inf/NaN at index " +
                                             std::to_string(i));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// safetensors layout: [u64 LE header length][JSON header][data section]
// ---------------------------------------------------------------------------

// dtype names from the safetensors vocabulary we recognize but do not support
static bool is_known_unsupported_dtype(const std::string & s) {
    static const char * known[] = {"F64", "BF16", "F8_E4M3", "F8_E5M2", "I64", "I32",
                                   "I16", "I8",   "U8",      "U16",     "U32", "U64",
                                   "BOOL"};
    return std::find_if(std::begin(known), std::end(known),
                        [&](const char * k) { return s == k; }) != std::end(known);
}

checkpoint read_checkpoint(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot open '" + path + "' for reading");
    }
    f.seekg(0, std::ios::end);
    const uint64_t file_size = uint64_t(f.tellg());
    f.seekg(0, std::ios::beg);
    if (file_size < 8) {
        fail(errc::malformed_header, "file shorter than the 8-byte header length");
    }
    uint8_t lenbuf[8];
    f.read(reinterpret_cast<char *>(lenbuf), 8);
    uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) {
        header_len = (header_len << 8) | lenbuf[i];
    }
    if (header_len == 0) {
        fail(errc::malformed_header, "zero header length");
    }
    if (header_len > file_size - 8) {
        fail(errc::malformed_header, "header length " + std::to_string(header_len) +
                                         " exceeds file size");
    }
    std::string header(header_len, '\0');
    f.read(header.data(), std::streamsize(header_len));
    if (!f) {
        fail(errc::io_error, "short read on header of '" + path + "'");
    }
    const uint64_t data_len = file_size - 8 - header_len;

    ordered_json j = ordered_json::parse(header, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(errc::malformed_header, "header is not a JSON object");
    }

    checkpoint ckpt;
    struct range {
        uint64_t begin, end;
        std::string name;
    };
    std::vector<range> ranges;

    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string & key = it.key();
        if (key == "__metadata__") {
            if (!it.value().is_object()) {
                fail(errc::malformed_header, "__metadata__ is not an object");
            }
            for (auto m = it.value().begin(); m != it.value().end(); ++m) {
                if (!m.value().is_string()) {
                    fail(errc::malformed_header, "__metadata__ values must be strings");
                }
                ckpt.metadata.emplace_back(m.key(), m.value().get<std::string>());
            }
            continue;
        }
        const auto & entry = it.value();
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            fail(errc::malformed_header, "tensor '" + key + "' entry is malformed");
        }
        if (!entry["dtype"].is_string()) {
            fail(errc::malformed_header, "tensor '" + key + "' dtype is not a string");
        }
        const std::string dts = entry["dtype"].get<std::string>();
        dtype dt;
        if (dts == "F32") {
            dt = dtype::f32;
        } else if (dts == "F16") {
            dt = dtype::f16;
        } else if (is_known_unsupported_dtype(dts)) {
            fail(errc::unsupported_dtype, "tensor '" + key + "' has dtype " + dts);
        } else {
            fail(errc::malformed_header, "tensor '" + key + "' has unknown dtype '" + dts + "'");
        }

        tensor_record rec;
        rec.name = key;
        rec.dt = dt;
        if (!entry["shape"].is_array()) {
            fail(errc::malformed_header, "tensor '" + key + "' shape is not an array");
        }
        for (const auto & d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<int64_t>() < 0) {
                fail(errc::malformed_header, "tensor '" + key + "' has a bad dimension");
            }
            rec.shape.push_back(d.get<int64_t>());
        }
        if (rec.rank() < 1 || rec.rank() > 4) {
            fail(errc::malformed_header, "tensor '" + key + "' has rank " +
                                             std::to_string(rec.rank()) + ", expected 1..4");
        }
        const auto & off = entry["data_offsets"];
        if (!off.is_array() || off.size() != 2 || !off[0].is_number_integer() ||
            !off[1].is_number_integer()) {
            fail(errc::malformed_header, "tensor '" + key + "' data_offsets malformed");
        }
        const int64_t b = off[0].get<int64_t>();
        const int64_t e = off[1].get<int64_t>();
        if (b < 0 || e < b || uint64_t(e) > data_len) {
            fail(errc::offset_error, "tensor '" + key + "' offsets out of bounds");
        }
        int64_t n;
        try {
            n = rec.numel();
        } catch (const error &) {
            fail(errc::malformed_header, "tensor '" + key + "' shape product overflows");
        }
        if (uint64_t(e - b) != uint64_t(n) * dtype_size(dt)) {
            fail(errc::offset_error, "tensor '" + key + "' byte span does not match shape");
        }
        ranges.push_back({uint64_t(b), uint64_t(e), key});
        rec.data.resize(size_t(e - b));
        ckpt.tensors.push_back(std::move(rec));
    }

    // offsets must tile [0, data_len) exactly
    std::sort(ranges.begin(), ranges.end(), [](const range & a, const range & b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    uint64_t cursor = 0;
    for (const auto & r : ranges) {
        if (r.begin != cursor) {
            fail(errc::offset_error, "gap or overlap before tensor '" + r.name + "'");
        }
        cursor = r.end;
    }
    if (cursor != data_len) {
        fail(errc::offset_error, "data section not fully covered by tensors");
    }

    // slice the data section
    std::vector<uint8_t> data(size_t(data_len), 0);
    f.read(reinterpret_cast<char *>(data.data()), std::streamsize(data_len));
    if (!f && data_len > 0) {
        fail(errc::io_error, "short read on data section of '" + path + "'");
    }
    // map name -> range for slicing (ranges were sorted above)
    {
        std::vector<std::pair<std::string_view, const range *>> by_name;
        by_name.reserve(ranges.size());
        for (const auto & r : ranges) {
            by_name.emplace_back(r.name, &r);
        }
        std::sort(by_name.begin(), by_name.end());
        for (auto & rec : ckpt.tensors) {
            auto it = std::lower_bound(by_name.begin(), by_name.end(), rec.name,
                                       [](const auto & p, std::string_view s) { return p.first < s; });
            const range & r = *it->second;
            std::memcpy(rec.data.data(), data.data() + r.begin, size_t(r.end - r.begin));
        }
    }
    return ckpt;
}

void write_checkpoint(const checkpoint & ckpt, const std::string & path) {
    // validate records and reject duplicate names
    {
        std::vector<std::string_view> names;
        names.reserve(ckpt.tensors.size());
        for (const auto & rec : ckpt.tensors) {
            validate_record(rec);
            names.push_back(rec.name);
        }
        std::sort(names.begin(), names.end());
        auto dup = std::adjacent_find(names.begin(), names.end());
        if (dup != names.end()) {
            fail(errc::duplicate_name, "tensor '" + std::string(*dup) + "' appears twice");
        }
    }

    ordered_json header = ordered_json::object();
    if (!ckpt.metadata.empty()) {
        ordered_json meta = ordered_json::object();
        for (const auto & [k, v] : ckpt.metadata) {
            meta[k] = v;
        }
        header["__metadata__"] = std::move(meta);
    }
    uint64_t cursor = 0;
    for (const auto & rec : ckpt.tensors) {
        ordered_json entry;
        entry["dtype"] = dtype_name(rec.dt);
        entry["shape"] = rec.shape;
        entry["data_offsets"] = {cursor, cursor + rec.data.size()};
        header[rec.name] = std::move(entry);
        cursor += rec.data.size();
    }
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(errc::io_error, "cannot open '" + path + "' for writing");
    }
    uint8_t lenbuf[8];
    const uint64_t n = hs.size();
    for (int i = 0; i < 8; ++i) {
        lenbuf[i] = uint8_t((n >> (8 * i)) & 0xff);
    }
    f.write(reinterpret_cast<const char *>(lenbuf), 8);
    f.write(hs.data(), std::streamsize(hs.size()));
    for (const auto & rec : ckpt.tensors) {
        f.write(reinterpret_cast<const char *>(rec.data.data()), std::streamsize(rec.data.size()));
    }
    f.flush();
    if (!f) {
        fail(errc::io_error, "write failed for '" + path + "'");
    }
}

} // namespace dimap
