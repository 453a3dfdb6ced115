// SPDX-License-Identifier: Apache-2.0
#include "dimap/pruner.hpp"

#include "dimap/error.hpp"
#include "dimap/importance.hpp"
#include "dimap/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dimap {

const char * prune_scheme_name(prune_scheme s) {
    switch (s) {
        case prune_scheme::per_module:        return "per-module";
        case prune_scheme::model_as_module:   return "model-as-module";
        case prune_scheme::uniform_magnitude: return "uniform-magnitude";
    }
    return "per-module";
}

std::optional<prune_scheme> prune_scheme_from_name(std::string_view s) {
    if (s == "per-module") return prune_scheme::per_module;
    if (s == "model-as-module") return prune_scheme::model_as_module;
    if (s == "uniform-magnitude") return prune_scheme::uniform_magnitude;
    return std::nullopt;
}

int64_t tensor_mask::zeros() const {
    int64_t z = 0;
    for (uint8_t v : keep) {
        z += v == 0;
    }
    return z;
}

double preset_ratio(std::string_view name) {
    if (name == "dimap1") return 0.145;
    if (name == "dimap2") return 0.335;
    if (name == "dimap3") return 0.525;
    fail(errc::unknown_preset, "unknown ratio preset '" + std::string(name) + "'");
}

namespace {

struct member_tensor {
    uint32_t layer_id; // index into the taxonomy
    const tensor_record * rec;
    module_role role;
    std::vector<double> scores;
};

// Selects exactly `k` removals from the pooled scores of the members listed
// in `which`, writes zeros into the matching masks, and returns the score of
// the largest removed weight. Among equal scores the larger (layer_id,
// flat_index) is removed first, so the kept set deterministically prefers
// earlier tensors and indices.
double select_removals(const std::vector<member_tensor> & members, const std::vector<size_t> & which,
                       std::vector<std::vector<uint8_t>> & masks, int64_t k, int threads) {
    if (k <= 0) {
        return 0.0;
    }
    size_t total = 0;
    for (size_t t : which) {
        total += members[t].scores.size();
    }
    // k-th order statistic over one flat copy of the pool
    double threshold;
    {
        std::vector<double> pool;
        pool.reserve(total);
        for (size_t t : which) {
            pool.insert(pool.end(), members[t].scores.begin(), members[t].scores.end());
        }
        std::nth_element(pool.begin(), pool.begin() + (k - 1), pool.end());
        threshold = pool[size_t(k - 1)];
    }

    // strict-below entries are always removed; entries equal to the threshold
    // fill the remainder in tie order
    std::vector<int64_t> below(which.size(), 0);
    std::vector<double> max_below(which.size(), 0.0);
    std::vector<std::vector<uint32_t>> tied(which.size());
    parallel_for(which.size(), threads, [&](size_t g) {
        const auto & scores = members[which[g]].scores;
        auto & mask = masks[which[g]];
        int64_t nb = 0;
        double mb = 0.0;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] < threshold) {
                mask[i] = 0;
                ++nb;
                mb = std::max(mb, scores[i]);
            } else if (scores[i] == threshold) {
                tied[g].push_back(uint32_t(i));
            }
        }
        below[g] = nb;
        max_below[g] = mb;
    });

    int64_t n_below = 0;
    double largest_removed = 0.0;
    for (size_t g = 0; g < which.size(); ++g) {
        n_below += below[g];
        if (below[g] > 0) {
            largest_removed = std::max(largest_removed, max_below[g]);
        }
    }

    const int64_t need = k - n_below;
    if (need > 0) {
        struct tie_entry {
            uint32_t layer_id;
            uint32_t member;
            uint32_t flat;
        };
        std::vector<tie_entry> ties;
        for (size_t g = 0; g < which.size(); ++g) {
            for (uint32_t i : tied[g]) {
                ties.push_back({members[which[g]].layer_id, uint32_t(which[g]), i});
            }
        }
        std::sort(ties.begin(), ties.end(), [](const tie_entry & a, const tie_entry & b) {
            return a.layer_id != b.layer_id ? a.layer_id > b.layer_id : a.flat > b.flat;
        });
        for (int64_t i = 0; i < need && size_t(i) < ties.size(); ++i) {
            masks[ties[size_t(i)].member][ties[size_t(i)].flat] = 0;
        }
        largest_removed = threshold;
    }
    return largest_removed;
}

} // namespace

std::pair<prune_plan, mask_set> make_plan(const checkpoint & ckpt,
                                          const std::vector<layer_entry> & taxonomy,
                                          double target_ratio, prune_scheme scheme, int threads) {
    if (!(target_ratio >= 0.0 && target_ratio < 1.0)) {
        fail(errc::ratio_out_of_range,
             "target ratio " + std::to_string(target_ratio) + " outside [0, 1)");
    }

    std::vector<member_tensor> members;
    for (size_t i = 0; i < taxonomy.size(); ++i) {
        const layer_entry & e = taxonomy[i];
        if (!e.prunable) {
            continue;
        }
        const tensor_record * rec = ckpt.find(e.name);
        if (!rec) {
            fail(errc::unknown_tensor, "taxonomy entry '" + e.name + "' not found in checkpoint");
        }
        members.push_back({uint32_t(i), rec, e.role, {}});
    }
    if (members.empty()) {
        fail(errc::empty_module, "checkpoint has no prunable tensors");
    }

    // score every prunable tensor once
    parallel_for(members.size(), threads, [&](size_t t) {
        const auto vals = to_f64(*members[t].rec);
        members[t].scores = scheme == prune_scheme::uniform_magnitude ? magnitude_scores(vals)
                                                                      : layer_scores(vals);
    });

    std::vector<std::vector<uint8_t>> masks(members.size());
    for (size_t t = 0; t < members.size(); ++t) {
        masks[t].assign(members[t].scores.size(), 1);
    }

    prune_plan plan;
    plan.scheme = scheme;
    plan.target_ratio = target_ratio;

    if (scheme == prune_scheme::per_module) {
        // only roles actually present take part; a checkpoint whose prunable
        // tensors all share one role degenerates to the pooled scheme
        for (module_role role : {module_role::qkv_m, module_role::prj_m, module_role::mlp_m}) {
            std::vector<size_t> which;
            int64_t module_size = 0;
            for (size_t t = 0; t < members.size(); ++t) {
                if (members[t].role == role) {
                    which.push_back(t);
                    module_size += int64_t(members[t].scores.size());
                }
            }
            if (which.empty()) {
                continue;
            }
            const int64_t k = int64_t(std::llround(target_ratio * double(module_size)));
            plan.thresholds[role] = select_removals(members, which, masks, k, threads);
            plan.removal_counts[role] = k;
        }
    } else {
        std::vector<size_t> which(members.size());
        int64_t pool_size = 0;
        for (size_t t = 0; t < members.size(); ++t) {
            which[t] = t;
            pool_size += int64_t(members[t].scores.size());
        }
        const int64_t k = int64_t(std::llround(target_ratio * double(pool_size)));
        const double thr = select_removals(members, which, masks, k, threads);
        // realized removals per module under the single shared threshold
        std::map<module_role, int64_t> realized;
        for (size_t t = 0; t < members.size(); ++t) {
            int64_t z = 0;
            for (uint8_t v : masks[t]) {
                z += v == 0;
            }
            realized[members[t].role] += z;
        }
        for (const auto & [role, z] : realized) {
            plan.thresholds[role] = thr;
            plan.removal_counts[role] = z;
        }
    }

    mask_set out;
    for (size_t t = 0; t < members.size(); ++t) {
        tensor_mask m;
        m.shape = members[t].rec->shape;
        m.keep = std::move(masks[t]);
        out.by_name.emplace(members[t].rec->name, std::move(m));
    }
    for (const auto & m : members) {
        plan.prunable_total += m.rec->numel();
    }
    for (const auto & [role, n] : plan.removal_counts) {
        plan.removed_total += n;
    }
    return {std::move(plan), std::move(out)};
}

checkpoint apply_masks(const checkpoint & ckpt, const mask_set & masks, int threads) {
    for (const auto & [name, mask] : masks.by_name) {
        const tensor_record * rec = ckpt.find(name);
        if (!rec) {
            fail(errc::unknown_tensor, "mask for unknown tensor '" + name + "'");
        }
        if (rec->shape != mask.shape) {
            fail(errc::shape_mismatch, "mask shape does not match tensor '" + name + "'");
        }
    }
    checkpoint out;
    out.metadata = ckpt.metadata;
    out.tensors = ckpt.tensors; // bit-exact copy; masked elements zeroed below
    parallel_for(out.tensors.size(), threads, [&](size_t i) {
        tensor_record & rec = out.tensors[i];
        auto it = masks.by_name.find(rec.name);
        if (it == masks.by_name.end()) {
            return;
        }
        const auto & keep = it->second.keep;
        const size_t esz = dtype_size(rec.dt);
        for (size_t j = 0; j < keep.size(); ++j) {
            if (!keep[j]) {
                std::memset(rec.data.data() + j * esz, 0, esz);
            }
        }
    });
    return out;
}

std::map<std::string, int64_t> mask_nnz(const mask_set & masks) {
    std::map<std::string, int64_t> out;
    for (const auto & [name, mask] : masks.by_name) {
        out[name] = mask.kept();
    }
    return out;
}

checkpoint mask_sidecar(const mask_set & masks, const checkpoint & ref) {
    checkpoint out;
    out.metadata = {{"format", "dimap.masks"}};
    for (const auto & rec : ref.tensors) {
        auto it = masks.by_name.find(rec.name);
        if (it == masks.by_name.end()) {
            continue;
        }
        const auto & mask = it->second;
        std::vector<double> vals(mask.keep.size());
        for (size_t i = 0; i < mask.keep.size(); ++i) {
            vals[i] = mask.keep[i] ? 1.0 : 0.0;
        }
        out.tensors.push_back(make_tensor(rec.name, dtype::f32, mask.shape, vals));
    }
    return out;
}

} // namespace dimap
