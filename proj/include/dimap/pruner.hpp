// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dimap/taxonomy.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dimap {

enum class prune_scheme {
    per_module,        // one threshold per module, module-aware scores
    model_as_module,   // all prunable layers pooled under one threshold
    uniform_magnitude, // one global |w| threshold (the baseline)
};

const char * prune_scheme_name(prune_scheme s);
std::optional<prune_scheme> prune_scheme_from_name(std::string_view s);

struct prune_plan {
    prune_scheme scheme = prune_scheme::per_module;
    double target_ratio = 0.0;
    std::map<module_role, double> thresholds;      // score of the largest removed weight
    std::map<module_role, int64_t> removal_counts; // exact zeros introduced per module
    int64_t prunable_total = 0;
    int64_t removed_total = 0;
};

struct tensor_mask {
    std::vector<int64_t> shape;
    std::vector<uint8_t> keep; // 1 = keep, 0 = prune, row-major

    int64_t zeros() const;
    int64_t kept() const { return int64_t(keep.size()) - zeros(); }
};

// Binary masks for prunable tensors only; AUX_M never appears.
struct mask_set {
    std::map<std::string, tensor_mask> by_name;
};

std::pair<prune_plan, mask_set> make_plan(const checkpoint & ckpt,
                                          const std::vector<layer_entry> & taxonomy,
                                          double target_ratio, prune_scheme scheme,
                                          int threads = 1);

// Hadamard product: pruned weights become exact zeros in the storage dtype,
// kept weights and unmasked tensors are copied bit-exactly.
checkpoint apply_masks(const checkpoint & ckpt, const mask_set & masks, int threads = 1);

// dimap1/2/3 target removal ratios over prunable parameters.
double preset_ratio(std::string_view name);

// Per-tensor kept counts, for effective-FLOPs accounting.
std::map<std::string, int64_t> mask_nnz(const mask_set & masks);

// Mask sidecar: F32 checkpoint of exact 0.0/1.0 values, tensors in the order
// they appear in the reference checkpoint.
checkpoint mask_sidecar(const mask_set & masks, const checkpoint & ref);

} // namespace dimap
