// SPDX-License-Identifier: Apache-2.0
//
// dimap: module-aware weight pruning toolkit for hierarchical vision
// transformers. Subcommands: synth, prune, analyze, verify, compare.

#include "dimap/distortion.hpp"
#include "dimap/error.hpp"
#include "dimap/importance.hpp"
#include "dimap/parallel.hpp"
#include "dimap/pruner.hpp"
#include "dimap/report.hpp"
#include "dimap/taxonomy.hpp"
#include "dimap/version.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace fs = std::filesystem;
using namespace dimap;

namespace {

struct arch_args {
    std::string preset;
    std::string json_path;
};

void add_arch_options(CLI::App * sub, arch_args & args) {
    auto * p = sub->add_option("--preset-arch", args.preset, "built-in architecture (swin-t, swin-s, swin-b)");
    auto * j = sub->add_option("--arch", args.json_path, "architecture config JSON file");
    p->excludes(j);
    j->excludes(p);
}

arch_config resolve_arch(const arch_args & args) {
    if (!args.preset.empty()) {
        return preset_arch(args.preset);
    }
    if (!args.json_path.empty()) {
        return arch_from_json_file(args.json_path);
    }
    fail(errc::invalid_config, "one of --preset-arch / --arch is required");
}

classification_rules resolve_rules(const std::string & rules_path, bool prune_head) {
    classification_rules rules = rules_path.empty() ? classification_rules::builtin()
                                                    : classification_rules::from_json_file(rules_path);
    if (prune_head) {
        rules.reassign_head_to_mlp();
    }
    return rules;
}

// SOURCE_DATE_EPOCH makes report output reproducible
std::string make_timestamp() {
    std::time_t t;
    if (const char * sde = std::getenv("SOURCE_DATE_EPOCH")) {
        t = std::time_t(std::strtoll(sde, nullptr, 10));
    } else {
        t = std::time(nullptr);
    }
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string sanitize_filename(std::string name) {
    for (char & c : name) {
        if (c == '/' || c == '\\') {
            c = '_';
        }
    }
    return name;
}

void warn_name_mismatch(const checkpoint & ckpt, const arch_config & cfg,
                        const classification_rules & rules) {
    std::set<std::string> expected, actual;
    for (const auto & e : enumerate_layers(cfg, rules)) {
        expected.insert(e.name);
    }
    for (const auto & t : ckpt.tensors) {
        actual.insert(t.name);
    }
    if (expected != actual) {
        std::fprintf(stderr,
                     "warning: checkpoint tensor names do not match the '%s' layer list; "
                     "FLOPs figures cover matching names only\n",
                     cfg.name.c_str());
    }
}

void dump_scores_csv(const std::string & path, const checkpoint & ckpt,
                     const std::vector<layer_entry> & taxonomy, int threads) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        fail(errc::io_error, "cannot open '" + path + "' for writing");
    }
    f << "module,tensor_name,flat_index,weight,score\n";
    for (module_role role : {module_role::qkv_m, module_role::prj_m, module_role::mlp_m}) {
        bool present = false;
        for (const auto & e : taxonomy) {
            present = present || (e.prunable && e.role == role);
        }
        if (!present) {
            continue;
        }
        const auto table = pool_module(ckpt, taxonomy, role, threads);
        std::vector<double> vals;
        uint32_t current = UINT32_MAX;
        char buf[160];
        for (const auto & entry : table.entries) {
            if (entry.layer_id != current) {
                current = entry.layer_id;
                vals = to_f64(*ckpt.find(taxonomy[current].name));
            }
            std::snprintf(buf, sizeof(buf), "%s,%s,%u,%.9g,%.9g\n", module_role_name(role),
                          taxonomy[current].name.c_str(), entry.flat_index,
                          vals[entry.flat_index], entry.score);
            f << buf;
        }
    }
}

int cmd_synth(const arch_args & arch, uint64_t seed, const std::string & dtype_name,
              const std::string & output, int threads) {
    const arch_config cfg = resolve_arch(arch);
    const dtype dt = dtype_name == "f16" ? dtype::f16 : dtype::f32;
    const checkpoint ckpt = synthesize(cfg, seed, dt, threads);
    write_checkpoint(ckpt, output);
    const auto est = estimate_flops(cfg);
    std::printf("%s: %lld params, %.5g dense FLOPs -> %s\n", cfg.name.c_str(),
                (long long) ckpt.total_params(), est.dense, output.c_str());
    return 0;
}

struct prune_args {
    arch_args arch;
    std::string input, output, masks_path, report_path, scores_path, heatmap_dir, rules_path;
    std::string scheme_name = "per-module";
    std::string ratio_preset;
    double ratio = -1.0;
    bool prune_head = false;
    int heatmap_max_dim = 512;
    int threads = default_thread_count();
};

int cmd_prune(const prune_args & args) {
    const arch_config cfg = resolve_arch(args.arch);
    const auto rules = resolve_rules(args.rules_path, args.prune_head);
    const auto scheme = prune_scheme_from_name(args.scheme_name);
    if (!scheme) {
        fail(errc::invalid_config, "unknown scheme '" + args.scheme_name + "'");
    }
    const double ratio = args.ratio_preset.empty() ? args.ratio : preset_ratio(args.ratio_preset);

    const checkpoint ckpt = read_checkpoint(args.input);
    warn_name_mismatch(ckpt, cfg, rules);
    const auto taxonomy = build_taxonomy(ckpt, rules);

    auto [plan, masks] = make_plan(ckpt, taxonomy, ratio, *scheme, args.threads);
    const checkpoint pruned = apply_masks(ckpt, masks, args.threads);
    write_checkpoint(pruned, args.output);
    if (!args.masks_path.empty()) {
        write_checkpoint(mask_sidecar(masks, ckpt), args.masks_path);
    }
    if (!args.scores_path.empty()) {
        dump_scores_csv(args.scores_path, ckpt, taxonomy, args.threads);
    }

    const auto counts = count_params(ckpt, taxonomy);
    const auto nnz = mask_nnz(masks);
    const auto flops = estimate_flops(cfg, &nnz, &rules);

    prune_report rep;
    rep.model = cfg.name;
    rep.scheme_name = prune_scheme_name(*scheme);
    rep.arch_preset = args.arch.preset.empty() ? "custom" : args.arch.preset;
    rep.ratio_preset = args.ratio_preset.empty() ? "none" : args.ratio_preset;
    rep.tool_version = DIMAP_VERSION;
    rep.timestamp = make_timestamp();
    rep.target_ratio = plan.target_ratio;
    rep.thresholds = plan.thresholds;
    rep.removal_counts = plan.removal_counts;
    rep.params_before = counts.total;
    rep.params_after = counts.total - plan.removed_total;
    rep.prunable_before = plan.prunable_total;
    rep.prunable_after = plan.prunable_total - plan.removed_total;
    for (module_role role : {module_role::qkv_m, module_role::prj_m, module_role::mlp_m}) {
        if (!plan.removal_counts.count(role)) {
            continue;
        }
        const int64_t before = counts.total_by_role.at(role);
        rep.params_per_module[role] = {before, before - plan.removal_counts.at(role)};
    }
    rep.flops_dense_before = flops.dense;
    rep.flops_dense_after = flops.dense;
    rep.flops_effective_after = flops.effective;
    for (const auto & e : taxonomy) {
        keep_ratio_row row;
        row.name = e.name;
        row.role = e.role;
        const tensor_record * rec = ckpt.find(e.name);
        row.total = rec->numel();
        auto it = masks.by_name.find(e.name);
        row.kept = it != masks.by_name.end() ? it->second.kept() : row.total;
        rep.layers.push_back(std::move(row));
    }
    if (!args.heatmap_dir.empty()) {
        fs::create_directories(args.heatmap_dir);
        for (const auto & e : taxonomy) {
            auto it = masks.by_name.find(e.name);
            if (it == masks.by_name.end() || it->second.shape.size() != 2) {
                continue;
            }
            const std::string path =
                (fs::path(args.heatmap_dir) / (sanitize_filename(e.name) + ".pgm")).string();
            rep.heatmaps.push_back(mask_heatmap(e.name, it->second, path, args.heatmap_max_dim));
        }
    }
    emit_report(rep, args.report_path);

    const double para_down = counts.total > 0 ? double(plan.removed_total) / double(counts.total) : 0;
    const double para_down_prunable =
        plan.prunable_total > 0 ? double(plan.removed_total) / double(plan.prunable_total) : 0;
    const double flops_down = flops.dense > 0 ? 1.0 - flops.effective / flops.dense : 0;
    std::string thr;
    char buf[64];
    for (const auto & [role, v] : plan.thresholds) {
        std::snprintf(buf, sizeof(buf), " %s=%.4g", module_role_name(role), v);
        thr += buf;
    }
    std::printf("%s %s ratio=%.4g: Para.down %.2f%% (prunable %.2f%%), FLOPs.down %.2f%%, thresholds%s\n",
                cfg.name.c_str(), prune_scheme_name(*scheme), ratio, 100.0 * para_down,
                100.0 * para_down_prunable, 100.0 * flops_down, thr.c_str());
    return 0;
}

int cmd_analyze(const arch_args & arch, const std::string & input, const std::string & out_dir,
                bool histograms, int bins, double range, const std::string & rules_path,
                int threads) {
    const arch_config cfg = resolve_arch(arch);
    const auto rules = resolve_rules(rules_path, false);
    const checkpoint ckpt = read_checkpoint(input);
    warn_name_mismatch(ckpt, cfg, rules);
    const auto taxonomy = build_taxonomy(ckpt, rules);
    const auto counts = count_params(ckpt, taxonomy);

    // effective figures reflect zeros already present in the checkpoint
    std::map<std::string, int64_t> nnz;
    {
        const auto all_nnz = nonzero_by_name(ckpt);
        for (const auto & e : taxonomy) {
            if (e.prunable) {
                nnz[e.name] = all_nnz.at(e.name);
            }
        }
    }
    const auto flops = estimate_flops(cfg, &nnz, &rules);

    fs::create_directories(out_dir);
    nlohmann::json j;
    j["model"] = cfg.name;
    j["params"] = {{"total", counts.total},
                   {"nonzero", counts.nonzero},
                   {"prunable_total", counts.prunable_total},
                   {"prunable_nonzero", counts.prunable_nonzero}};
    nlohmann::json shares;
    for (const auto & [role, n] : counts.total_by_role) {
        shares[module_role_name(role)] = {
            {"params", n},
            {"param_share", round6(counts.total > 0 ? double(n) / double(counts.total) : 0)},
            {"flops", round6(flops.dense_by_role.at(role))},
            {"flops_share", round6(flops.dense > 0 ? flops.dense_by_role.at(role) / flops.dense : 0)},
        };
    }
    j["modules"] = std::move(shares);
    j["flops"] = {{"dense", round6(flops.dense)},
                  {"effective", round6(flops.effective)},
                  {"attn_matmul", round6(flops.attn_matmul)},
                  {"convention", "1 MAC = 1 FLOP"}};
    {
        std::ofstream f((fs::path(out_dir) / "analysis.json").string(), std::ios::trunc);
        if (!f) {
            fail(errc::io_error, "cannot write analysis.json");
        }
        f << j.dump(2) << "\n";
    }

    if (histograms) {
        const double width = 2.0 * range / double(bins);
        for (const auto & rec : ckpt.tensors) {
            const auto hist = weight_histogram(rec, bins, range);
            const std::string path =
                (fs::path(out_dir) / ("hist_" + sanitize_filename(rec.name) + ".csv")).string();
            std::ofstream f(path, std::ios::trunc);
            if (!f) {
                fail(errc::io_error, "cannot write '" + path + "'");
            }
            f << "bin_lo,bin_hi,count\n";
            char buf[96];
            for (int b = 0; b < bins; ++b) {
                std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%lld\n", -range + b * width,
                              -range + (b + 1) * width, (long long) hist[size_t(b)]);
                f << buf;
            }
        }
    }

    std::printf("%s: %lld params (%lld nonzero), %.5g dense FLOPs, %.5g effective\n",
                cfg.name.c_str(), (long long) counts.total, (long long) counts.nonzero, flops.dense,
                flops.effective);
    for (const auto & [role, n] : counts.total_by_role) {
        std::printf("  %s: %lld params (%.2f%%), %.2f%% of FLOPs\n", module_role_name(role),
                    (long long) n, 100.0 * double(n) / double(counts.total),
                    100.0 * flops.dense_by_role.at(role) / flops.dense);
    }
    (void) threads;
    return 0;
}

int cmd_verify(uint64_t seed, int trials, int samples, const std::string & csv_path,
               bool corrupt_bound) {
    verify_options opts;
    opts.seed = seed;
    opts.trials = trials;
    opts.samples = samples;
    opts.corrupt_bound = corrupt_bound;
    const auto res = run_verification(opts);

    for (const auto & c : res.checks) {
        std::printf("%s  %-24s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    }
    if (!csv_path.empty()) {
        std::ofstream f(csv_path, std::ios::trunc);
        if (!f) {
            fail(errc::io_error, "cannot open '" + csv_path + "' for writing");
        }
        f << "net_id,layer,sparsity,empirical_sup,analytic_bound,tightness\n";
        char buf[160];
        for (const auto & s : res.samples) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g\n", s.net_id, s.layer,
                          s.sparsity, s.empirical_sup, s.analytic_bound, s.tightness);
            f << buf;
        }
    }
    return res.all_pass() ? 0 : 2;
}

struct compare_stats {
    double variance = 0;
    int64_t empty_rows = 0;
    int64_t empty_layers = 0;
};

compare_stats stats_for(const mask_set & masks, const std::vector<layer_entry> & taxonomy) {
    compare_stats st;
    std::vector<double> ratios;
    for (const auto & e : taxonomy) {
        auto it = masks.by_name.find(e.name);
        if (it == masks.by_name.end()) {
            continue;
        }
        const auto & m = it->second;
        ratios.push_back(double(m.kept()) / double(m.keep.size()));
        if (m.kept() == 0) {
            st.empty_layers++;
        }
        if (m.shape.size() == 2) {
            const int64_t r = m.shape[0], c = m.shape[1];
            for (int64_t i = 0; i < r; ++i) {
                bool any = false;
                for (int64_t k = 0; k < c; ++k) {
                    any = any || m.keep[size_t(i) * size_t(c) + size_t(k)];
                }
                st.empty_rows += !any;
            }
        }
    }
    double mean = 0;
    for (double x : ratios) {
        mean += x;
    }
    mean /= double(ratios.size());
    for (double x : ratios) {
        st.variance += (x - mean) * (x - mean);
    }
    st.variance /= double(ratios.size());
    return st;
}

int cmd_compare(const arch_args & arch, const std::string & input,
                const std::vector<double> & ratios, const std::string & out,
                const std::string & per_layer, int threads) {
    for (double r : ratios) {
        if (!(r >= 0.0 && r < 1.0)) {
            fail(errc::ratio_out_of_range, "ratio " + std::to_string(r) + " outside [0, 1)");
        }
    }
    const arch_config cfg = resolve_arch(arch);
    const auto rules = resolve_rules("", false);
    const checkpoint ckpt = read_checkpoint(input);
    const auto taxonomy = build_taxonomy(ckpt, rules);

    std::ofstream f(out, std::ios::trunc);
    if (!f) {
        fail(errc::io_error, "cannot open '" + out + "' for writing");
    }
    f << "ratio,scheme,prunable_total,removed,keep_ratio_variance,empty_rows,empty_layers\n";
    std::ofstream fl;
    if (!per_layer.empty()) {
        fl.open(per_layer, std::ios::trunc);
        if (!fl) {
            fail(errc::io_error, "cannot open '" + per_layer + "' for writing");
        }
        fl << "ratio,scheme,tensor,role,kept,total,keep_ratio\n";
    }

    char buf[256];
    for (double ratio : ratios) {
        for (prune_scheme scheme : {prune_scheme::per_module, prune_scheme::uniform_magnitude}) {
            auto [plan, masks] = make_plan(ckpt, taxonomy, ratio, scheme, threads);
            const auto st = stats_for(masks, taxonomy);
            std::snprintf(buf, sizeof(buf), "%.9g,%s,%lld,%lld,%.9g,%lld,%lld\n", ratio,
                          prune_scheme_name(scheme), (long long) plan.prunable_total,
                          (long long) plan.removed_total, st.variance, (long long) st.empty_rows,
                          (long long) st.empty_layers);
            f << buf;
            if (fl.is_open()) {
                for (const auto & row : keep_ratio_table(masks, taxonomy)) {
                    std::snprintf(buf, sizeof(buf), "%.9g,%s,%s,%s,%lld,%lld,%.9g\n", ratio,
                                  prune_scheme_name(scheme), row.name.c_str(),
                                  module_role_name(row.role), (long long) row.kept,
                                  (long long) row.total, row.ratio());
                    fl << buf;
                }
            }
        }
    }
    std::printf("%s: wrote %zu plan rows to %s\n", cfg.name.c_str(), ratios.size() * 2, out.c_str());
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"module-aware weight pruning toolkit for hierarchical vision transformers"};
    app.set_version_flag("--version", DIMAP_VERSION);
    app.require_subcommand(1);

    // synth
    auto * synth = app.add_subcommand("synth", "write a deterministic random checkpoint");
    arch_args synth_arch;
    add_arch_options(synth, synth_arch);
    uint64_t synth_seed = 42;
    std::string synth_dtype = "f32", synth_output;
    int synth_threads = default_thread_count();
    synth->add_option("--seed", synth_seed, "PRNG seed");
    synth->add_option("--dtype", synth_dtype, "storage dtype")->check(CLI::IsMember({"f32", "f16"}));
    synth->add_option("--output", synth_output, "output checkpoint path")->required();
    synth->add_option("--threads", synth_threads, "worker threads")->check(CLI::Range(1, 1024));

    // prune
    auto * prune = app.add_subcommand("prune", "threshold and zero out low-importance weights");
    prune_args pargs;
    add_arch_options(prune, pargs.arch);
    prune->add_option("--input", pargs.input, "input checkpoint")->required();
    auto * ratio_opt = prune->add_option("--ratio", pargs.ratio, "removal ratio over prunable params, [0,1)");
    auto * preset_opt = prune->add_option("--preset", pargs.ratio_preset, "ratio preset")
                            ->check(CLI::IsMember({"dimap1", "dimap2", "dimap3"}));
    ratio_opt->excludes(preset_opt);
    preset_opt->excludes(ratio_opt);
    prune->add_option("--scheme", pargs.scheme_name, "pruning scheme")
        ->check(CLI::IsMember({"per-module", "model-as-module", "uniform-magnitude"}));
    prune->add_flag("--prune-head", pargs.prune_head, "treat the classification head as MLP_M");
    prune->add_option("--output", pargs.output, "pruned checkpoint path")->required();
    prune->add_option("--masks", pargs.masks_path, "mask sidecar path (safetensors, F32 0/1)");
    prune->add_option("--report", pargs.report_path, "report JSON path")->required();
    prune->add_option("--dump-scores", pargs.scores_path,
                      "per-weight score CSV (small models only)");
    prune->add_option("--heatmaps", pargs.heatmap_dir, "directory for mask PGM heatmaps");
    prune->add_option("--heatmap-max-dim", pargs.heatmap_max_dim,
                      "max heatmap dimension before max-pool downsampling");
    prune->add_option("--class-rules", pargs.rules_path, "classification rules JSON");
    prune->add_option("--threads", pargs.threads, "worker threads")->check(CLI::Range(1, 1024));

    // analyze
    auto * analyze = app.add_subcommand("analyze", "parameter/FLOPs breakdown and histograms");
    arch_args an_arch;
    add_arch_options(analyze, an_arch);
    std::string an_input, an_out_dir, an_rules;
    bool an_hist = false;
    int an_bins = 50, an_threads = default_thread_count();
    double an_range = 0.1;
    analyze->add_option("--input", an_input, "input checkpoint")->required();
    analyze->add_option("--out-dir", an_out_dir, "output directory")->required();
    analyze->add_flag("--histograms", an_hist, "emit per-tensor weight histograms");
    analyze->add_option("--bins", an_bins, "histogram bins")->check(CLI::Range(1, 100000));
    analyze->add_option("--range", an_range, "histogram half-range");
    analyze->add_option("--class-rules", an_rules, "classification rules JSON");
    analyze->add_option("--threads", an_threads, "worker threads")->check(CLI::Range(1, 1024));

    // verify
    auto * verify = app.add_subcommand("verify", "run the distortion-bound verification battery");
    uint64_t v_seed = 1;
    int v_trials = 100, v_samples = 1000;
    std::string v_csv;
    bool v_corrupt = false;
    verify->add_option("--seed", v_seed, "PRNG seed");
    verify->add_option("--trials", v_trials, "random nets/tensors per check")->check(CLI::Range(1, 1000000));
    verify->add_option("--samples", v_samples, "unit-sphere samples per bound trial")
        ->check(CLI::Range(1, 10000000));
    verify->add_option("--csv", v_csv, "bound tightness sample CSV");
    verify->add_flag("--corrupt-bound", v_corrupt)->group(""); // test hook, hidden from --help

    // compare
    auto * compare = app.add_subcommand("compare", "module-aware vs uniform masks over a ratio grid");
    arch_args cp_arch;
    add_arch_options(compare, cp_arch);
    std::string cp_input, cp_out, cp_layers;
    std::vector<double> cp_ratios;
    int cp_threads = default_thread_count();
    compare->add_option("--input", cp_input, "input checkpoint")->required();
    compare->add_option("--ratios", cp_ratios, "comma-separated removal ratios")
        ->required()
        ->delimiter(',');
    compare->add_option("--out", cp_out, "summary CSV path")->required();
    compare->add_option("--per-layer", cp_layers, "per-layer keep ratio CSV path");
    compare->add_option("--threads", cp_threads, "worker threads")->check(CLI::Range(1, 1024));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help / --version
        }
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(synth_arch, synth_seed, synth_dtype, synth_output, synth_threads);
        }
        if (prune->parsed()) {
            if (ratio_opt->count() + preset_opt->count() != 1) {
                std::fprintf(stderr, "error: exactly one of --ratio / --preset is required\n");
                return 1;
            }
            return cmd_prune(pargs);
        }
        if (analyze->parsed()) {
            return cmd_analyze(an_arch, an_input, an_out_dir, an_hist, an_bins, an_range, an_rules,
                               an_threads);
        }
        if (verify->parsed()) {
            return cmd_verify(v_seed, v_trials, v_samples, v_csv, v_corrupt);
        }
        if (compare->parsed()) {
            return cmd_compare(cp_arch, cp_input, cp_ratios, cp_out, cp_layers, cp_threads);
        }
    } catch (const error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.code() == errc::bound_violated ? 2 : 1;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 1;
}
