// SPDX-License-Identifier: Apache-2.0
#include "dimap/distortion.hpp"

#include "dimap/error.hpp"
#include "dimap/importance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

namespace dimap {

matrix random_matrix(int rows, int cols, rng64 & rng, double sigma) {
    matrix m = matrix::zeros(rows, cols);
    for (double & v : m.a) {
        v = sigma * rng.next_normal();
    }
    return m;
}

double frobenius_norm(const matrix & w) {
    double s = 0.0;
    for (double v : w.a) {
        s += v * v;
    }
    return std::sqrt(s);
}

void mlp_net::validate() const {
    if (layers.empty()) {
        fail(errc::dim_mismatch, "network has no layers");
    }
    for (size_t l = 0; l + 1 < layers.size(); ++l) {
        if (layers[l + 1].cols != layers[l].rows) {
            fail(errc::dim_mismatch, "layer " + std::to_string(l + 1) + " input dim " +
                                         std::to_string(layers[l + 1].cols) +
                                         " != previous output dim " + std::to_string(layers[l].rows));
        }
    }
}

int mlp_net::input_dim() const {
    return layers.empty() ? 0 : layers.front().cols;
}

int mlp_net::output_dim() const {
    return layers.empty() ? 0 : layers.back().rows;
}

std::vector<double> mlp_forward(const mlp_net & net, std::span<const double> x) {
    net.validate();
    if (int(x.size()) != net.input_dim()) {
        fail(errc::dim_mismatch, "input dim " + std::to_string(x.size()) + " != " +
                                     std::to_string(net.input_dim()));
    }
    std::vector<double> h(x.begin(), x.end());
    for (size_t l = 0; l < net.layers.size(); ++l) {
        if (l > 0) {
            for (double & v : h) {
                v = v > 0.0 ? v : 0.0; // ReLU between layers, none after the last
            }
        }
        const matrix & w = net.layers[l];
        std::vector<double> y(size_t(w.rows), 0.0);
        for (int r = 0; r < w.rows; ++r) {
            double acc = 0.0;
            const double * row = w.a.data() + size_t(r) * size_t(w.cols);
            for (int c = 0; c < w.cols; ++c) {
                acc += row[c] * h[size_t(c)];
            }
            y[size_t(r)] = acc;
        }
        h = std::move(y);
    }
    return h;
}

std::pair<double, double> frobenius_gap(const matrix & w, const std::vector<uint8_t> & keep_mask) {
    if (keep_mask.size() != w.numel()) {
        fail(errc::shape_mismatch, "mask size " + std::to_string(keep_mask.size()) +
                                       " != matrix size " + std::to_string(w.numel()));
    }
    double direct = 0.0;
    double closed = 0.0;
    for (size_t i = 0; i < w.a.size(); ++i) {
        const double masked = keep_mask[i] ? w.a[i] : 0.0;
        const double d = w.a[i] - masked;
        direct += d * d;
        if (!keep_mask[i]) {
            closed += w.a[i] * w.a[i];
        }
    }
    return {std::sqrt(direct), std::sqrt(closed)};
}

std::vector<uint8_t> brute_force_mask(const matrix & w, int keep_budget) {
    const size_t n = w.numel();
    if (n > 16) {
        fail(errc::too_large, "brute force capped at 16 elements, got " + std::to_string(n));
    }
    if (keep_budget < 0 || size_t(keep_budget) > n) {
        fail(errc::too_large, "keep budget " + std::to_string(keep_budget) + " outside [0, " +
                                  std::to_string(n) + "]");
    }
    std::vector<double> sq(n);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sq[i] = w.a[i] * w.a[i];
        total += sq[i];
    }
    const uint32_t count = 1u << n;
    std::vector<double> kept_sum(count, 0.0);
    for (uint32_t m = 1; m < count; ++m) {
        const uint32_t low = m & (~m + 1);
        kept_sum[m] = kept_sum[m & (m - 1)] + sq[size_t(std::countr_zero(low))];
    }

    // ties prefer more kept entries, then lower flat indices
    uint32_t best = 0;
    double best_dist = total;
    int best_pop = 0;
    for (uint32_t m = 0; m < count; ++m) {
        const int pop = std::popcount(m);
        if (pop > keep_budget) {
            continue;
        }
        const double dist = total - kept_sum[m];
        bool better = false;
        if (dist < best_dist) {
            better = true;
        } else if (dist == best_dist) {
            if (pop > best_pop) {
                better = true;
            } else if (pop == best_pop && m != best) {
                const uint32_t d = m ^ best;
                const uint32_t low = d & (~d + 1);
                better = (m & low) != 0;
            }
        }
        if (better) {
            best = m;
            best_dist = dist;
            best_pop = pop;
        }
    }

    std::vector<uint8_t> mask(n, 0);
    for (size_t i = 0; i < n; ++i) {
        mask[i] = (best >> i) & 1;
    }
    return mask;
}

bound_report check_bound(const mlp_net & net, int layer, const std::vector<uint8_t> & keep_mask,
                         int samples, uint64_t seed) {
    net.validate();
    if (layer < 0 || size_t(layer) >= net.layers.size()) {
        fail(errc::dim_mismatch, "layer index " + std::to_string(layer) + " out of range");
    }
    if (samples < 1) {
        fail(errc::dim_mismatch, "need at least one sample");
    }
    const matrix & w = net.layers[size_t(layer)];
    if (keep_mask.size() != w.numel()) {
        fail(errc::dim_mismatch, "mask size does not match layer " + std::to_string(layer));
    }

    mlp_net pruned = net;
    for (size_t i = 0; i < keep_mask.size(); ++i) {
        if (!keep_mask[i]) {
            pruned.layers[size_t(layer)].a[i] = 0.0;
        }
    }

    double analytic = frobenius_gap(w, keep_mask).first;
    for (size_t j = 0; j < net.layers.size(); ++j) {
        if (int(j) != layer) {
            analytic *= frobenius_norm(net.layers[j]);
        }
    }

    double sup = 0.0;
    const size_t dim = size_t(net.input_dim());
    for (int s = 0; s < samples; ++s) {
        rng64 rng(mix_seed(seed, uint64_t(s)));
        const auto x = unit_sphere_vector(rng, dim);
        const auto yd = mlp_forward(net, x);
        const auto yp = mlp_forward(pruned, x);
        double gap2 = 0.0;
        for (size_t i = 0; i < yd.size(); ++i) {
            const double d = yd[i] - yp[i];
            gap2 += d * d;
        }
        sup = std::max(sup, std::sqrt(gap2));
    }

    if (sup > analytic * (1.0 + 1e-9)) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "empirical %.17g exceeds analytic %.17g", sup, analytic);
        fail(errc::bound_violated, buf);
    }

    bound_report rep;
    rep.empirical_sup = sup;
    rep.analytic_bound = analytic;
    rep.tightness = analytic > 0.0 ? sup / analytic : 0.0;
    rep.sample_count = samples;
    return rep;
}

double spectral_norm(const matrix & w, int iterations, uint64_t seed) {
    if (iterations < 1) {
        fail(errc::dim_mismatch, "need at least one iteration");
    }
    if (w.rows == 0 || w.cols == 0) {
        return 0.0;
    }
    rng64 rng(seed);
    std::vector<double> v = unit_sphere_vector(rng, size_t(w.cols));
    std::vector<double> u(size_t(w.rows));
    for (int it = 0; it < iterations; ++it) {
        for (int r = 0; r < w.rows; ++r) {
            double acc = 0.0;
            const double * row = w.a.data() + size_t(r) * size_t(w.cols);
            for (int c = 0; c < w.cols; ++c) {
                acc += row[c] * v[size_t(c)];
            }
            u[size_t(r)] = acc;
        }
        std::vector<double> vt(size_t(w.cols), 0.0);
        for (int r = 0; r < w.rows; ++r) {
            const double * row = w.a.data() + size_t(r) * size_t(w.cols);
            for (int c = 0; c < w.cols; ++c) {
                vt[size_t(c)] += row[c] * u[size_t(r)];
            }
        }
        double nv = 0.0;
        for (double x : vt) {
            nv += x * x;
        }
        nv = std::sqrt(nv);
        if (nv == 0.0) {
            return 0.0; // W^T W v vanished; spectral norm of the reachable subspace is 0
        }
        for (size_t c = 0; c < vt.size(); ++c) {
            v[c] = vt[c] / nv;
        }
    }
    double s2 = 0.0;
    for (int r = 0; r < w.rows; ++r) {
        double acc = 0.0;
        const double * row = w.a.data() + size_t(r) * size_t(w.cols);
        for (int c = 0; c < w.cols; ++c) {
            acc += row[c] * v[size_t(c)];
        }
        s2 += acc * acc;
    }
    return std::sqrt(s2);
}

// ---------------------------------------------------------------------------
// verification battery
// ---------------------------------------------------------------------------

bool verify_result::all_pass() const {
    for (const auto & c : checks) {
        if (!c.pass) {
            return false;
        }
    }
    return true;
}

static std::string fmt_detail(const char * fmt, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), fmt, a, b);
    return buf;
}

verify_result run_verification(const verify_options & opts) {
    if (opts.trials < 1) {
        fail(errc::invalid_config, "trials must be >= 1");
    }
    if (opts.samples < 1) {
        fail(errc::invalid_config, "samples must be >= 1");
    }
    verify_result out;

    // identity: direct and closed-form Frobenius gaps agree
    {
        const int instances = opts.trials * 10;
        rng64 rng(mix_seed(opts.seed, 1));
        double worst = 0.0;
        bool pass = true;
        for (int i = 0; i < instances; ++i) {
            const int r = 1 + int(rng.next_u64() % 12);
            const int c = 1 + int(rng.next_u64() % 12);
            matrix w = random_matrix(r, c, rng);
            std::vector<uint8_t> mask(w.numel());
            for (auto & m : mask) {
                m = rng.next_unit() < 0.5 ? 1 : 0;
            }
            const auto [direct, closed] = frobenius_gap(w, mask);
            const double rel = std::abs(direct - closed) / std::max(frobenius_norm(w), 1e-300);
            worst = std::max(worst, rel);
            if (std::abs(direct - closed) >= 1e-12 * frobenius_norm(w)) {
                pass = false;
            }
        }
        out.checks.push_back({"frobenius-identity", pass,
                              fmt_detail("worst relative gap %.3g over %g instances", worst,
                                         double(instances))});
    }

    // exhaustive optimal-mask search equals the top-magnitude mask
    {
        rng64 rng(mix_seed(opts.seed, 2));
        bool pass = true;
        int done = 0;
        for (int t = 0; t < opts.trials && pass; ++t) {
            const int r = 1 + int(rng.next_u64() % 4);
            const int c = 1 + int(rng.next_u64() % 4);
            matrix w = random_matrix(r, c, rng);
            const int n = int(w.numel());
            for (int s = 0; s <= n && pass; ++s) {
                const auto brute = brute_force_mask(w, s);
                // top-s by magnitude, ties keep the lower flat index
                std::vector<int> idx(size_t(n), 0);
                for (int i = 0; i < n; ++i) {
                    idx[size_t(i)] = i;
                }
                std::sort(idx.begin(), idx.end(), [&](int a, int b) {
                    const double wa = std::abs(w.a[size_t(a)]), wb = std::abs(w.a[size_t(b)]);
                    return wa != wb ? wa > wb : a < b;
                });
                std::vector<uint8_t> top(size_t(n), 0);
                for (int i = 0; i < s; ++i) {
                    top[size_t(idx[size_t(i)])] = 1;
                }
                if (brute != top) {
                    pass = false;
                }
            }
            ++done;
        }
        out.checks.push_back({"optimal-mask-exhaustive", pass,
                              fmt_detail("%g tensors, every keep budget", double(done))});
    }

    // Monte-Carlo bound check on random ReLU nets
    {
        rng64 rng(mix_seed(opts.seed, 3));
        int violations = 0;
        double max_tightness = 0.0;
        for (int t = 0; t < opts.trials; ++t) {
            mlp_net net;
            int prev = 8 + int(rng.next_u64() % 9);
            for (int l = 0; l < 3; ++l) {
                const int next = 8 + int(rng.next_u64() % 9);
                net.layers.push_back(random_matrix(next, prev, rng, 0.5));
                prev = next;
            }
            const int layer = int(rng.next_u64() % 3);
            std::vector<uint8_t> mask(net.layers[size_t(layer)].numel());
            const double keep_p = 0.25 + 0.5 * rng.next_unit();
            int64_t zeros = 0;
            for (auto & m : mask) {
                m = rng.next_unit() < keep_p ? 1 : 0;
                zeros += m == 0;
            }
            const auto rep = check_bound(net, layer, mask, opts.samples, mix_seed(opts.seed, 1000 + uint64_t(t)));
            const double analytic = rep.analytic_bound * (opts.corrupt_bound ? 1e-6 : 1.0);
            if (rep.empirical_sup > analytic * (1.0 + 1e-9)) {
                ++violations;
            }
            max_tightness = std::max(max_tightness, rep.tightness);
            out.samples.push_back({t, layer, double(zeros) / double(mask.size()), rep.empirical_sup,
                                   rep.analytic_bound, rep.tightness});
        }
        out.checks.push_back({"bound-monte-carlo", violations == 0,
                              fmt_detail("%g violations, max tightness %.3g", double(violations),
                                         max_tightness)});
    }

    // spectral norm never exceeds the Frobenius norm
    {
        rng64 rng(mix_seed(opts.seed, 4));
        bool pass = true;
        double worst = 0.0;
        for (int t = 0; t < 500; ++t) {
            const int r = 1 + int(rng.next_u64() % 16);
            const int c = 1 + int(rng.next_u64() % 16);
            matrix w = random_matrix(r, c, rng);
            const double sp = spectral_norm(w, 50, mix_seed(opts.seed, 2000 + uint64_t(t)));
            const double fr = frobenius_norm(w);
            worst = std::max(worst, sp - fr);
            if (sp > fr + 1e-9) {
                pass = false;
            }
        }
        out.checks.push_back(
            {"spectral-vs-frobenius", pass, fmt_detail("max(spectral - frobenius) = %.3g", worst)});
    }

    // ReLU is 1-Lipschitz in the l2 norm
    {
        rng64 rng(mix_seed(opts.seed, 5));
        bool pass = true;
        for (int t = 0; t < 1000; ++t) {
            const size_t dim = 1 + rng.next_u64() % 64;
            double lhs = 0.0, rhs = 0.0;
            for (size_t i = 0; i < dim; ++i) {
                const double a = rng.next_normal();
                const double b = rng.next_normal();
                const double ra = a > 0 ? a : 0, rb = b > 0 ? b : 0;
                lhs += (ra - rb) * (ra - rb);
                rhs += (a - b) * (a - b);
            }
            if (std::sqrt(lhs) > std::sqrt(rhs) * (1.0 + 1e-12)) {
                pass = false;
            }
        }
        out.checks.push_back({"relu-lipschitz", pass, "1000 random vector pairs"});
    }

    // removing the lowest-importance weight of a layer gives the smallest
    // single-removal analytic bound
    {
        rng64 rng(mix_seed(opts.seed, 6));
        bool pass = true;
        for (int t = 0; t < opts.trials; ++t) {
            mlp_net net;
            int prev = 4 + int(rng.next_u64() % 5);
            for (int l = 0; l < 3; ++l) {
                const int next = 4 + int(rng.next_u64() % 5);
                net.layers.push_back(random_matrix(next, prev, rng, 0.5));
                prev = next;
            }
            const int layer = int(rng.next_u64() % 3);
            const matrix & w = net.layers[size_t(layer)];
            double prod = 1.0;
            for (size_t j = 0; j < net.layers.size(); ++j) {
                if (int(j) != layer) {
                    prod *= frobenius_norm(net.layers[j]);
                }
            }
            const auto scores = layer_scores(w.a);
            const size_t lowest =
                size_t(std::min_element(scores.begin(), scores.end()) - scores.begin());
            const double bound_lowest = std::abs(w.a[lowest]) * prod;
            for (size_t i = 0; i < w.a.size(); ++i) {
                if (scores[i] > scores[lowest] &&
                    bound_lowest > std::abs(w.a[i]) * prod * (1.0 + 1e-12)) {
                    pass = false;
                }
            }
        }
        out.checks.push_back(
            {"score-bound-alignment", pass, fmt_detail("%g random nets", double(opts.trials))});
    }

    return out;
}

} // namespace dimap
