// SPDX-License-Identifier: Apache-2.0
#include "dimap/report.hpp"

#include "dimap/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace dimap {

std::vector<keep_ratio_row> keep_ratio_table(const mask_set & masks,
                                             const std::vector<layer_entry> & taxonomy) {
    std::vector<keep_ratio_row> out;
    for (const auto & e : taxonomy) {
        if (!e.prunable) {
            continue;
        }
        auto it = masks.by_name.find(e.name);
        if (it == masks.by_name.end()) {
            continue;
        }
        keep_ratio_row row;
        row.name = e.name;
        row.role = e.role;
        row.total = int64_t(it->second.keep.size());
        row.kept = it->second.kept();
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<int64_t> value_histogram(std::span<const double> values, int bins, double range) {
    if (bins < 1) {
        fail(errc::invalid_config, "histogram needs at least one bin");
    }
    if (!(range > 0)) {
        fail(errc::invalid_config, "histogram range must be positive");
    }
    std::vector<int64_t> counts(size_t(bins), 0);
    const double width = 2.0 * range / double(bins);
    for (double v : values) {
        int b = int(std::floor((v + range) / width));
        b = std::clamp(b, 0, bins - 1); // clamp under/overflow into the end bins
        counts[size_t(b)]++;
    }
    return counts;
}

std::vector<int64_t> weight_histogram(const tensor_record & rec, int bins, double range) {
    const auto vals = to_f64(rec);
    return value_histogram(vals, bins, range);
}

heatmap_info mask_heatmap(const std::string & tensor_name, const tensor_mask & mask,
                          const std::string & path, int max_dim) {
    if (mask.shape.size() != 2) {
        fail(errc::shape_mismatch, "heatmap needs a rank-2 mask, got rank " +
                                       std::to_string(mask.shape.size()));
    }
    const int64_t rows = mask.shape[0];
    const int64_t cols = mask.shape[1];
    if (rows <= 0 || cols <= 0) {
        fail(errc::shape_mismatch, "heatmap mask has an empty dimension");
    }

    int factor = 1;
    if (max_dim > 0) {
        const int64_t longest = std::max(rows, cols);
        factor = int((longest + max_dim - 1) / max_dim);
        factor = std::max(factor, 1);
    }
    const int64_t out_rows = (rows + factor - 1) / factor;
    const int64_t out_cols = (cols + factor - 1) / factor;

    std::vector<uint8_t> pixels(size_t(out_rows) * size_t(out_cols), 128);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            if (mask.keep[size_t(r) * size_t(cols) + size_t(c)]) {
                pixels[size_t(r / factor) * size_t(out_cols) + size_t(c / factor)] = 255;
            }
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(errc::io_error, "cannot open '" + path + "' for writing");
    }
    f << "P5\n" << out_cols << " " << out_rows << "\n255\n";
    f.write(reinterpret_cast<const char *>(pixels.data()), std::streamsize(pixels.size()));
    f.flush();
    if (!f) {
        fail(errc::io_error, "write failed for '" + path + "'");
    }

    heatmap_info info;
    info.tensor = tensor_name;
    info.path = path;
    info.factor = factor;
    info.rows = int(out_rows);
    info.cols = int(out_cols);
    return info;
}

double round6(double v) {
    if (!std::isfinite(v)) {
        return v;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::strtod(buf, nullptr);
}

nlohmann::json report_to_json(const prune_report & rep) {
    nlohmann::json j; // std::map-backed: keys serialize sorted
    j["model"] = rep.model;
    j["scheme"] = rep.scheme_name;
    j["target_ratio"] = round6(rep.target_ratio);
    j["presets"] = {{"arch", rep.arch_preset}, {"ratio", rep.ratio_preset}};
    j["tool_version"] = rep.tool_version;
    if (!rep.timestamp.empty()) {
        j["timestamp"] = rep.timestamp;
    }

    nlohmann::json thresholds;
    for (const auto & [role, v] : rep.thresholds) {
        thresholds[module_role_name(role)] = round6(v);
    }
    j["thresholds"] = std::move(thresholds);

    nlohmann::json removed;
    for (const auto & [role, n] : rep.removal_counts) {
        removed[module_role_name(role)] = n;
    }
    j["removal_counts"] = std::move(removed);

    nlohmann::json per_module;
    for (const auto & [role, stat] : rep.params_per_module) {
        per_module[module_role_name(role)] = {{"before", stat.before}, {"after", stat.after}};
    }
    const double removed_total = double(rep.params_before - rep.params_after);
    const double removed_prunable = double(rep.prunable_before - rep.prunable_after);
    j["params"] = {
        {"before", rep.params_before},
        {"after", rep.params_after},
        {"prunable_before", rep.prunable_before},
        {"prunable_after", rep.prunable_after},
        {"per_module", std::move(per_module)},
        {"removed_ratio_total",
         round6(rep.params_before > 0 ? removed_total / double(rep.params_before) : 0.0)},
        {"removed_ratio_prunable",
         round6(rep.prunable_before > 0 ? removed_prunable / double(rep.prunable_before) : 0.0)},
    };

    j["flops"] = {
        {"dense_before", round6(rep.flops_dense_before)},
        {"dense_after", round6(rep.flops_dense_after)},
        {"effective_after", round6(rep.flops_effective_after)},
        {"convention", "1 MAC = 1 FLOP"},
    };

    nlohmann::json layers = nlohmann::json::array();
    for (const auto & row : rep.layers) {
        layers.push_back({
            {"name", row.name},
            {"role", module_role_name(row.role)},
            {"kept", row.kept},
            {"total", row.total},
            {"ratio", round6(row.ratio())},
        });
    }
    j["layers"] = std::move(layers);

    if (!rep.heatmaps.empty()) {
        nlohmann::json hm = nlohmann::json::array();
        for (const auto & h : rep.heatmaps) {
            hm.push_back({{"tensor", h.tensor},
                          {"path", h.path},
                          {"downsample", h.factor},
                          {"rows", h.rows},
                          {"cols", h.cols}});
        }
        j["heatmaps"] = std::move(hm);
    }
    return j;
}

void emit_report(const prune_report & rep, const std::string & path) {
    const nlohmann::json j = report_to_json(rep);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(errc::io_error, "cannot open '" + path + "' for writing");
    }
    f << j.dump(2) << "\n";
    f.flush();
    if (!f) {
        fail(errc::io_error, "write failed for '" + path + "'");
    }
}

} // namespace dimap
