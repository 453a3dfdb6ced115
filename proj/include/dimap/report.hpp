// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dimap/pruner.hpp"
#include "dimap/taxonomy.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dimap {

struct keep_ratio_row {
    std::string name;
    module_role role = module_role::aux_m;
    int64_t kept = 0;
    int64_t total = 0;

    double ratio() const { return total > 0 ? double(kept) / double(total) : 1.0; }
};

// One row per prunable tensor, in network (taxonomy) order.
std::vector<keep_ratio_row> keep_ratio_table(const mask_set & masks,
                                             const std::vector<layer_entry> & taxonomy);

// Fixed-width bins over [-range, +range]; out-of-range values are clamped to
// the end bins, so counts always sum to the element count.
std::vector<int64_t> weight_histogram(const tensor_record & rec, int bins, double range);
std::vector<int64_t> value_histogram(std::span<const double> values, int bins, double range);

// Binary PGM (P5, maxval 255): 255 = kept, 128 = pruned; rows follow the
// output dimension, columns the input dimension. Large masks are max-pooled
// by the smallest integer factor that fits max_dim (0 = never downsample).
struct heatmap_info {
    std::string tensor;
    std::string path;
    int factor = 1;
    int rows = 0;
    int cols = 0;
};

heatmap_info mask_heatmap(const std::string & tensor_name, const tensor_mask & mask,
                          const std::string & path, int max_dim = 0);

struct module_param_stat {
    int64_t before = 0;
    int64_t after = 0;
};

struct prune_report {
    std::string model;
    std::string scheme_name;
    std::string arch_preset;  // "swin-t" / ... / "custom"
    std::string ratio_preset; // "dimap1" / ... / "none"
    std::string tool_version;
    std::string timestamp; // empty = omitted from the JSON
    double target_ratio = 0.0;
    std::map<module_role, double> thresholds;
    std::map<module_role, int64_t> removal_counts;
    int64_t params_before = 0;
    int64_t params_after = 0;
    int64_t prunable_before = 0;
    int64_t prunable_after = 0;
    std::map<module_role, module_param_stat> params_per_module;
    double flops_dense_before = 0;
    double flops_dense_after = 0;
    double flops_effective_after = 0;
    std::vector<keep_ratio_row> layers; // every tensor; unmasked rows read 1.0
    std::vector<heatmap_info> heatmaps; // present only when heatmaps were written
};

// Deterministic JSON: sorted keys, numbers formatted to 6 significant digits.
nlohmann::json report_to_json(const prune_report & rep);
void emit_report(const prune_report & rep, const std::string & path);

// 6-significant-digit float normalization used across report/CSV emitters.
double round6(double v);

} // namespace dimap
