// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dimap/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dimap {

// Small dense row-major matrix for the verification lab.
struct matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    static matrix zeros(int r, int c) { return {r, c, std::vector<double>(size_t(r) * size_t(c), 0.0)}; }

    double & at(int r, int c) { return a[size_t(r) * size_t(cols) + size_t(c)]; }
    double at(int r, int c) const { return a[size_t(r) * size_t(cols) + size_t(c)]; }
    size_t numel() const { return a.size(); }
};

matrix random_matrix(int rows, int cols, rng64 & rng, double sigma = 1.0);

double frobenius_norm(const matrix & w);

// ReLU chain: layers[0] is applied first, no activation after the last layer.
struct mlp_net {
    std::vector<matrix> layers;

    void validate() const; // adjacent dims must chain; throws DimMismatch
    int input_dim() const;
    int output_dim() const;
};

std::vector<double> mlp_forward(const mlp_net & net, std::span<const double> x);

// (direct, closed_form) Frobenius gap between W and M (.) W: the direct route
// materializes the difference, the closed form sums masked-out squares.
std::pair<double, double> frobenius_gap(const matrix & w, const std::vector<uint8_t> & keep_mask);

// Exhaustive minimizer of the Frobenius gap over all masks keeping at most
// `keep_budget` entries. Ties prefer more kept entries, then lower flat
// indices. Capped at 16 elements (65536 masks).
std::vector<uint8_t> brute_force_mask(const matrix & w, int keep_budget);

struct bound_report {
    double empirical_sup = 0;
    double analytic_bound = 0;
    double tightness = 0; // empirical_sup / analytic_bound, 0 when the bound is 0
    int sample_count = 0;
};

// Monte-Carlo check that the output gap from pruning layer `l` never exceeds
// ||W(l) - W~(l)||_F * prod_{j != l} ||W(j)||_F over unit-sphere inputs.
// Throws BoundViolated if a sample exceeds the bound (it is a theorem, so a
// violation signals an implementation bug).
bound_report check_bound(const mlp_net & net, int layer, const std::vector<uint8_t> & keep_mask,
                         int samples, uint64_t seed);

// Power-iteration estimate of the largest singular value.
double spectral_norm(const matrix & w, int iterations, uint64_t seed);

// ---------------------------------------------------------------------------
// verification battery (the `verify` subcommand)
// ---------------------------------------------------------------------------

struct verify_options {
    uint64_t seed = 1;
    int trials = 100;   // random nets / tensors per check
    int samples = 1000; // unit-sphere samples per bound trial
    bool corrupt_bound = false; // test hook: falsifies the bound comparison
};

struct verify_check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct bound_sample {
    int net_id = 0;
    int layer = 0;
    double sparsity = 0;
    double empirical_sup = 0;
    double analytic_bound = 0;
    double tightness = 0;
};

struct verify_result {
    std::vector<verify_check> checks;
    std::vector<bound_sample> samples;

    bool all_pass() const;
};

verify_result run_verification(const verify_options & opts);

} // namespace dimap
