// SPDX-License-Identifier: Apache-2.0
#include "dimap/importance.hpp"

#include "dimap/error.hpp"
#include "dimap/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dimap {

static void check_finite(std::span<const double> w) {
    for (size_t i = 0; i < w.size(); ++i) {
        if (!std::isfinite(w[i])) {
            fail(errc::non_finite_value, "weight at index " + std::to_string(i) + " is not finite");
        }
    }
}

std::vector<double> layer_scores(std::span<const double> w) {
    check_finite(w);
    const size_t n = w.size();
    std::vector<std::pair<double, uint32_t>> order(n); // (w^2, flat index)
    for (size_t i = 0; i < n; ++i) {
        order[i] = {w[i] * w[i], uint32_t(i)};
    }
    // descending by w^2, ties by ascending flat index
    std::sort(order.begin(), order.end(), [](const auto & a, const auto & b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<double> scores(n, 0.0);
    double sum = 0.0, comp = 0.0; // compensated running sum of squares
    for (size_t j = 0; j < n; ++j) {
        const double s2 = order[j].first;
        const double y = s2 - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        scores[order[j].second] = sum > 0.0 ? s2 / sum : 0.0;
    }
    return scores;
}

std::vector<double> magnitude_scores(std::span<const double> w) {
    check_finite(w);
    std::vector<double> out(w.size());
    for (size_t i = 0; i < w.size(); ++i) {
        out[i] = std::abs(w[i]);
    }
    return out;
}

importance_table pool_module(const checkpoint & ckpt, const std::vector<layer_entry> & taxonomy,
                             module_role role, int threads) {
    std::vector<uint32_t> member_ids;
    std::vector<const tensor_record *> members;
    for (size_t i = 0; i < taxonomy.size(); ++i) {
        const layer_entry & e = taxonomy[i];
        if (!e.prunable || e.role != role) {
            continue;
        }
        const tensor_record * rec = ckpt.find(e.name);
        if (!rec) {
            fail(errc::unknown_tensor, "taxonomy entry '" + e.name + "' not found in checkpoint");
        }
        member_ids.push_back(uint32_t(i));
        members.push_back(rec);
    }
    if (members.empty()) {
        fail(errc::empty_module, std::string("no prunable tensors carry role ") + module_role_name(role));
    }

    std::vector<size_t> offsets(members.size() + 1, 0);
    for (size_t t = 0; t < members.size(); ++t) {
        const int64_t n = members[t]->numel();
        if (uint64_t(n) > std::numeric_limits<uint32_t>::max()) {
            fail(errc::too_large, "tensor '" + members[t]->name + "' exceeds 2^32 elements");
        }
        offsets[t + 1] = offsets[t] + size_t(n);
    }

    importance_table table;
    table.role = role;
    table.entries.resize(offsets.back());
    parallel_for(members.size(), threads, [&](size_t t) {
        const auto vals = to_f64(*members[t]);
        const auto scores = layer_scores(vals);
        importance_entry * dst = table.entries.data() + offsets[t];
        for (size_t i = 0; i < scores.size(); ++i) {
            dst[i] = {member_ids[t], uint32_t(i), scores[i]};
        }
    });
    return table;
}

} // namespace dimap
