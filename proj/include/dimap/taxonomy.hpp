// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dimap/tensor_store.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dimap {

enum class module_role { qkv_m, prj_m, mlp_m, aux_m };

const char * module_role_name(module_role r); // "QKV_M" ...
std::optional<module_role> module_role_from_name(std::string_view s);

// Hierarchical-ViT hyperparameters driving enumeration, synthesis and FLOPs.
struct arch_config {
    std::string name = "custom";
    int img_size = 224;
    int patch_size = 4;
    int in_channels = 3;
    int embed_dim = 96;
    std::vector<int> depths;
    std::vector<int> num_heads;
    int window_size = 7;
    double mlp_ratio = 4.0;
    int num_classes = 1000;

    int num_stages() const { return int(depths.size()); }
    int stage_dim(int s) const { return embed_dim << s; }
    int mlp_hidden(int s) const;
    int64_t tokens_at(int s) const; // (img/patch/2^s)^2
    void validate() const;          // throws InvalidConfig
};

arch_config preset_arch(std::string_view name); // swin-t / swin-s / swin-b
arch_config arch_from_json_file(const std::string & path);

// Ordered name-pattern table; first match wins, fallback is AUX_M (never
// pruned, so unrecognized names are handled conservatively).
struct class_rule {
    std::string contains;
    bool rank2_only = true;
    module_role role = module_role::aux_m;
};

struct classification_rules {
    std::vector<class_rule> rules;

    static classification_rules builtin();
    static classification_rules from_json_file(const std::string & path);

    module_role classify(std::string_view name, size_t rank) const;
    void reassign_head_to_mlp(); // --prune-head
};

module_role classify(std::string_view name, const std::vector<int64_t> & shape);

struct layer_entry {
    std::string name;
    module_role role = module_role::aux_m;
    int stage = -1;                 // -1 when the tensor sits outside the stage stack
    std::optional<int> block;
    std::vector<int64_t> shape;
    bool prunable = false;
};

// The complete expected tensor list for an architecture, in network order.
std::vector<layer_entry> enumerate_layers(const arch_config & cfg);
std::vector<layer_entry> enumerate_layers(const arch_config & cfg, const classification_rules & rules);

// Taxonomy for an existing checkpoint (stage/block parsed from names).
std::vector<layer_entry> build_taxonomy(const checkpoint & ckpt, const classification_rules & rules);

// Deterministic random checkpoint for an architecture; identical (cfg, seed,
// dtype) always produce identical bytes.
checkpoint synthesize(const arch_config & cfg, uint64_t seed, dtype dt, int threads = 1);

struct param_counts {
    int64_t total = 0;
    int64_t nonzero = 0;
    int64_t prunable_total = 0;
    int64_t prunable_nonzero = 0;
    std::map<module_role, int64_t> total_by_role;
    std::map<module_role, int64_t> nonzero_by_role;
};

param_counts count_params(const checkpoint & ckpt, const std::vector<layer_entry> & taxonomy);

// Per-tensor nonzero element counts (bit-pattern test, +/-0 both count as zero).
std::map<std::string, int64_t> nonzero_by_name(const checkpoint & ckpt);

// Convention: 1 multiply-accumulate = 1 FLOP. Window attention score/value
// matmuls are weight-independent and always dense; effective totals substitute
// per-tensor nonzero counts on prunable layers only.
struct flops_estimate {
    double dense = 0;
    double effective = 0;
    double attn_matmul = 0; // included in both totals
    std::map<module_role, double> dense_by_role;
    std::map<module_role, double> effective_by_role;
};

flops_estimate estimate_flops(const arch_config & cfg,
                              const std::map<std::string, int64_t> * prunable_nnz = nullptr,
                              const classification_rules * rules = nullptr);

} // namespace dimap
