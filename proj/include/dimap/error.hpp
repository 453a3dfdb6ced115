// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dimap {

enum class errc {
    malformed_header,
    offset_error,
    unsupported_dtype,
    duplicate_name,
    io_error,
    non_finite_value,
    invalid_record,
    invalid_config,
    unclassified_tensor,
    empty_module,
    ratio_out_of_range,
    unknown_preset,
    shape_mismatch,
    unknown_tensor,
    dim_mismatch,
    too_large,
    bound_violated,
};

const char * errc_name(errc c);

class error : public std::runtime_error {
  public:
    error(errc code, const std::string & what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string & what) {
    throw error(code, what);
}

} // namespace dimap
