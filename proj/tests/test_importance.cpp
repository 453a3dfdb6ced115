// SPDX-License-Identifier: Apache-2.0
#include "dimap/importance.hpp"

#include "dimap/error.hpp"
#include "dimap/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

using namespace dimap;

// Independent quadratic-time evaluation of the same score definition: for
// each weight, sum the squares of all weights ranked at or above it under
// (w^2 descending, index ascending).
static std::vector<double> naive_scores(const std::vector<double> & w) {
    std::vector<double> out(w.size(), 0.0);
    for (size_t i = 0; i < w.size(); ++i) {
        const double wi2 = w[i] * w[i];
        double denom = 0.0;
        for (size_t k = 0; k < w.size(); ++k) {
            const double wk2 = w[k] * w[k];
            if (wk2 > wi2 || (wk2 == wi2 && k <= i)) {
                denom += wk2;
            }
        }
        out[i] = denom > 0.0 ? wi2 / denom : 0.0;
    }
    return out;
}

static std::vector<double> random_layer(rng64 & rng, size_t n, bool with_ties) {
    std::vector<double> w(n);
    for (auto & v : w) {
        v = rng.next_normal();
        if (with_ties) {
            v = std::round(v * 4.0) / 4.0; // quantized values force duplicates
        }
    }
    return w;
}

TEST_CASE("layer_scores: frozen example") {
    const auto s = layer_scores(std::vector<double>{3.0, -2.0, 1.0});
    REQUIRE(s.size() == 3);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 4.0 / 13.0);
    CHECK(s[2] == 1.0 / 14.0);
}

TEST_CASE("layer_scores: degenerate and edge inputs") {
    CHECK(layer_scores(std::vector<double>{0.0, 0.0, 0.0}) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(layer_scores(std::vector<double>{}) == std::vector<double>{});
    CHECK(layer_scores(std::vector<double>{-5.0}) == std::vector<double>{1.0});
    // zero weights in a nonzero layer score zero
    const auto s = layer_scores(std::vector<double>{2.0, 0.0});
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 0.0);
}

TEST_CASE("layer_scores: non-finite input rejected") {
    try {
        layer_scores(std::vector<double>{1.0, std::numeric_limits<double>::infinity()});
        FAIL("expected NonFiniteValue");
    } catch (const error & e) {
        CHECK(e.code() == errc::non_finite_value);
    }
    CHECK_THROWS_AS(layer_scores(std::vector<double>{std::nan("")}), error);
    CHECK_THROWS_AS(magnitude_scores(std::vector<double>{std::nan("")}), error);
}

TEST_CASE("layer_scores: quadratic-time oracle agreement") {
    rng64 rng(7001);
    for (int iter = 0; iter < 40; ++iter) {
        const size_t n = 1 + rng.next_u64() % 1000;
        const auto w = random_layer(rng, n, iter % 2 == 0);
        const auto got = layer_scores(w);
        const auto want = naive_scores(w);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < n; ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("layer_scores: largest weight scores exactly one") {
    rng64 rng(7002);
    for (int iter = 0; iter < 50; ++iter) {
        const auto w = random_layer(rng, 1 + rng.next_u64() % 300, iter % 3 == 0);
        if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
            continue;
        }
        const auto s = layer_scores(w);
        const double m = *std::max_element(s.begin(), s.end());
        CHECK(m == 1.0);
    }
}

TEST_CASE("layer_scores: strictly decreasing along sorted rank over nonzero weights") {
    rng64 rng(7003);
    for (int iter = 0; iter < 40; ++iter) {
        const auto w = random_layer(rng, 2 + rng.next_u64() % 500, iter % 2 == 0);
        const auto s = layer_scores(w);
        std::vector<size_t> order(w.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            const double wa = w[a] * w[a], wb = w[b] * w[b];
            return wa != wb ? wa > wb : a < b;
        });
        for (size_t j = 0; j + 1 < order.size(); ++j) {
            if (w[order[j + 1]] == 0.0) {
                break; // zero tail scores zero
            }
            CHECK(s[order[j]] > s[order[j + 1]]);
        }
        for (double v : s) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("layer_scores: ranking matches magnitude ranking under the shared tie-break") {
    rng64 rng(7004);
    for (int iter = 0; iter < 50; ++iter) {
        const auto w = random_layer(rng, 1 + rng.next_u64() % 400, true);
        const auto s = layer_scores(w);
        std::vector<size_t> by_score(w.size()), by_mag(w.size());
        std::iota(by_score.begin(), by_score.end(), 0);
        by_mag = by_score;
        std::sort(by_score.begin(), by_score.end(), [&](size_t a, size_t b) {
            return s[a] != s[b] ? s[a] > s[b] : a < b;
        });
        std::sort(by_mag.begin(), by_mag.end(), [&](size_t a, size_t b) {
            const double wa = std::abs(w[a]), wb = std::abs(w[b]);
            return wa != wb ? wa > wb : a < b;
        });
        CHECK(by_score == by_mag);
    }
}

TEST_CASE("layer_scores: invariant under per-layer rescaling") {
    rng64 rng(7005);
    const auto w = random_layer(rng, 257, false);
    const auto base = layer_scores(w);

    SUBCASE("power-of-two scaling is exact") {
        std::vector<double> w4(w);
        for (auto & v : w4) {
            v *= 4.0;
        }
        CHECK(layer_scores(w4) == base);
    }

    SUBCASE("arbitrary scaling matches to rounding") {
        std::vector<double> w3(w);
        for (auto & v : w3) {
            v *= -3.7;
        }
        const auto scaled = layer_scores(w3);
        for (size_t i = 0; i < w.size(); ++i) {
            CHECK(scaled[i] == doctest::Approx(base[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("magnitude_scores") {
    CHECK(magnitude_scores(std::vector<double>{3.0, -2.0, 1.0}) ==
          std::vector<double>{3.0, 2.0, 1.0});
    CHECK(magnitude_scores(std::vector<double>{-5.0}) == std::vector<double>{5.0});
}

TEST_CASE("pool_module") {
    // two prunable tensors in one module plus aux clutter
    checkpoint ckpt;
    ckpt.tensors.push_back(make_tensor("a.mlp.fc1.weight", dtype::f32, {1, 3}, {3.0, -2.0, 1.0}));
    ckpt.tensors.push_back(make_tensor("a.mlp.fc1.bias", dtype::f32, {1}, {0.0}));
    ckpt.tensors.push_back(make_tensor("b.mlp.fc2.weight", dtype::f32, {2, 1}, {10.0, 0.1}));
    const auto taxonomy = build_taxonomy(ckpt, classification_rules::builtin());

    const auto table = pool_module(ckpt, taxonomy, module_role::mlp_m);
    REQUIRE(table.entries.size() == 5);
    CHECK(table.role == module_role::mlp_m);

    // both layers contribute a score-1.0 entry
    int ones = 0;
    for (const auto & e : table.entries) {
        if (e.score == 1.0) {
            ++ones;
        }
    }
    CHECK(ones == 2);

    // pooled entries filtered back to one layer equal that layer's scores
    const auto direct = layer_scores(std::vector<double>{3.0, -2.0, 1.0});
    std::map<uint32_t, double> from_pool;
    for (const auto & e : table.entries) {
        if (taxonomy[e.layer_id].name == "a.mlp.fc1.weight") {
            from_pool[e.flat_index] = e.score;
        }
    }
    REQUIRE(from_pool.size() == direct.size());
    for (size_t i = 0; i < direct.size(); ++i) {
        CHECK(from_pool[uint32_t(i)] == direct[i]);
    }

    SUBCASE("no duplicates of (layer_id, flat_index)") {
        std::set<std::pair<uint32_t, uint32_t>> seen;
        for (const auto & e : table.entries) {
            CHECK(seen.insert({e.layer_id, e.flat_index}).second);
        }
    }

    SUBCASE("empty module is an error") {
        try {
            pool_module(ckpt, taxonomy, module_role::qkv_m);
            FAIL("expected EmptyModule");
        } catch (const error & e) {
            CHECK(e.code() == errc::empty_module);
        }
        CHECK_THROWS_AS(pool_module(ckpt, taxonomy, module_role::aux_m), error);
    }

    SUBCASE("scheduling does not change the table") {
        const auto t4 = pool_module(ckpt, taxonomy, module_role::mlp_m, 4);
        REQUIRE(t4.entries.size() == table.entries.size());
        for (size_t i = 0; i < table.entries.size(); ++i) {
            CHECK(t4.entries[i].layer_id == table.entries[i].layer_id);
            CHECK(t4.entries[i].flat_index == table.entries[i].flat_index);
            CHECK(t4.entries[i].score == table.entries[i].score);
        }
    }
}

TEST_CASE("pool_module: entry count equals module size on a hierarchy") {
    arch_config cfg;
    cfg.name = "tiny";
    cfg.img_size = 32;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.depths = {1, 1};
    cfg.num_heads = {1, 2};
    cfg.window_size = 2;
    cfg.mlp_ratio = 2.0;
    cfg.num_classes = 10;
    const checkpoint ckpt = synthesize(cfg, 4, dtype::f32);
    const auto taxonomy = build_taxonomy(ckpt, classification_rules::builtin());
    const auto table = pool_module(ckpt, taxonomy, module_role::qkv_m);
    // sum of 3*C_s^2 over all blocks: 3*64 + 3*256
    CHECK(table.entries.size() == 3 * 64 + 3 * 256);
}
