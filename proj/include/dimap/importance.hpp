// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dimap/taxonomy.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace dimap {

// Module-aware importance of each weight: squared value divided by the
// running sum of squares of all same-layer weights of equal or larger
// magnitude. Scores are in [0, 1], the largest weight of a nonzero layer
// scores exactly 1, and ordering by score within a layer matches ordering
// by magnitude. Computed once from the dense layer (one-shot).
std::vector<double> layer_scores(std::span<const double> weights);

// |w|, the uniform magnitude baseline (one global threshold downstream).
std::vector<double> magnitude_scores(std::span<const double> weights);

struct importance_entry {
    uint32_t layer_id;   // index into the taxonomy
    uint32_t flat_index; // row-major position inside the tensor
    double score;
};

struct importance_table {
    module_role role;
    std::vector<importance_entry> entries;
};

// Concatenated layer scores of every prunable tensor with the given role.
importance_table pool_module(const checkpoint & ckpt, const std::vector<layer_entry> & taxonomy,
                             module_role role, int threads = 1);

} // namespace dimap
