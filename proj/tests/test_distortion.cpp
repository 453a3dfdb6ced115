// SPDX-License-Identifier: Apache-2.0
#include "dimap/distortion.hpp"

#include "dimap/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dimap;

static matrix from_values(int rows, int cols, std::vector<double> vals) {
    matrix m;
    m.rows = rows;
    m.cols = cols;
    m.a = std::move(vals);
    return m;
}

// independent top-k-by-magnitude mask with the same tie-break
static std::vector<uint8_t> top_magnitude_mask(const matrix & w, int keep) {
    std::vector<int> idx(w.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double wa = std::abs(w.a[size_t(a)]), wb = std::abs(w.a[size_t(b)]);
        return wa != wb ? wa > wb : a < b;
    });
    std::vector<uint8_t> mask(w.numel(), 0);
    for (int i = 0; i < keep && size_t(i) < w.numel(); ++i) {
        mask[size_t(idx[size_t(i)])] = 1;
    }
    return mask;
}

TEST_CASE("frobenius_gap") {
    SUBCASE("single removed weight") {
        const auto [direct, closed] = frobenius_gap(from_values(1, 2, {1.0, 2.0}), {0, 1});
        CHECK(direct == 1.0);
        CHECK(closed == 1.0);
    }

    SUBCASE("identity mask") {
        const auto [direct, closed] = frobenius_gap(from_values(1, 2, {1.0, 2.0}), {1, 1});
        CHECK(direct == 0.0);
        CHECK(closed == 0.0);
    }

    SUBCASE("mask size must match") {
        CHECK_THROWS_AS(frobenius_gap(from_values(1, 2, {1.0, 2.0}), {1}), error);
    }

    SUBCASE("direct and closed form agree on random instances") {
        rng64 rng(31);
        for (int i = 0; i < 200; ++i) {
            const int r = 1 + int(rng.next_u64() % 8);
            const int c = 1 + int(rng.next_u64() % 8);
            matrix w = random_matrix(r, c, rng);
            std::vector<uint8_t> mask(w.numel());
            for (auto & m : mask) {
                m = rng.next_u64() % 2;
            }
            const auto [direct, closed] = frobenius_gap(w, mask);
            CHECK(std::abs(direct - closed) < 1e-12 * frobenius_norm(w));
        }
    }
}

TEST_CASE("brute_force_mask") {
    SUBCASE("keeps the two largest of three") {
        const auto mask = brute_force_mask(from_values(1, 3, {0.9, 0.5, 0.1}), 2);
        CHECK(mask == std::vector<uint8_t>{1, 1, 0});
        const auto [direct, closed] = frobenius_gap(from_values(1, 3, {0.9, 0.5, 0.1}), mask);
        CHECK(direct == doctest::Approx(0.1));
    }

    SUBCASE("zero budget removes everything") {
        const matrix w = from_values(1, 3, {0.9, 0.5, 0.1});
        const auto mask = brute_force_mask(w, 0);
        CHECK(mask == std::vector<uint8_t>{0, 0, 0});
        CHECK(frobenius_gap(w, mask).first == doctest::Approx(frobenius_norm(w)));
    }

    SUBCASE("matches top-magnitude for every random tensor and every budget") {
        rng64 rng(32);
        for (int t = 0; t < 50; ++t) {
            const int r = 1 + int(rng.next_u64() % 4);
            const int c = 1 + int(rng.next_u64() % 4);
            matrix w = random_matrix(r, c, rng);
            for (int s = 0; s <= int(w.numel()); ++s) {
                CHECK(brute_force_mask(w, s) == top_magnitude_mask(w, s));
            }
        }
    }

    SUBCASE("ties and zeros resolve like the magnitude ordering") {
        const matrix dup = from_values(2, 2, {1.0, 1.0, 2.0, 2.0});
        for (int s = 0; s <= 4; ++s) {
            CHECK(brute_force_mask(dup, s) == top_magnitude_mask(dup, s));
        }
        const matrix zeros = from_values(1, 2, {1.0, 0.0});
        CHECK(brute_force_mask(zeros, 2) == std::vector<uint8_t>{1, 1});
    }

    SUBCASE("too many elements rejected") {
        matrix big = matrix::zeros(1, 17);
        try {
            brute_force_mask(big, 3);
            FAIL("expected TooLarge");
        } catch (const error & e) {
            CHECK(e.code() == errc::too_large);
        }
        CHECK_THROWS_AS(brute_force_mask(from_values(1, 2, {1.0, 2.0}), 3), error);
    }
}

TEST_CASE("mlp_forward") {
    SUBCASE("single linear layer") {
        mlp_net net;
        net.layers.push_back(from_values(1, 1, {2.0}));
        CHECK(mlp_forward(net, std::vector<double>{1.0}) == std::vector<double>{2.0});
    }

    SUBCASE("relu kills negative intermediate") {
        mlp_net net;
        net.layers.push_back(from_values(1, 1, {-1.0}));
        net.layers.push_back(from_values(1, 1, {5.0}));
        CHECK(mlp_forward(net, std::vector<double>{1.0}) == std::vector<double>{0.0});
    }

    SUBCASE("dimension mismatches") {
        mlp_net net;
        net.layers.push_back(from_values(2, 3, {1, 2, 3, 4, 5, 6}));
        CHECK_THROWS_AS(mlp_forward(net, std::vector<double>{1.0, 2.0}), error);
        net.layers.push_back(from_values(1, 3, {1, 2, 3})); // 3 != 2
        CHECK_THROWS_AS(net.validate(), error);
    }

    SUBCASE("agrees with a straight-line reimplementation") {
        rng64 rng(33);
        for (int t = 0; t < 25; ++t) {
            mlp_net net;
            int prev = 2 + int(rng.next_u64() % 5);
            const int d0 = prev;
            for (int l = 0; l < 3; ++l) {
                const int next = 2 + int(rng.next_u64() % 5);
                net.layers.push_back(random_matrix(next, prev, rng));
                prev = next;
            }
            std::vector<double> x(size_t(d0), 0.0);
            for (auto & v : x) {
                v = rng.next_normal();
            }

            // second implementation, written independently of mlp_forward
            std::vector<double> h = x;
            for (size_t l = 0; l < net.layers.size(); ++l) {
                const matrix & w = net.layers[l];
                std::vector<double> y;
                for (int r = 0; r < w.rows; ++r) {
                    double acc = 0;
                    for (int c = 0; c < w.cols; ++c) {
                        acc += w.at(r, c) * h[size_t(c)];
                    }
                    y.push_back(acc);
                }
                if (l + 1 < net.layers.size()) {
                    for (auto & v : y) {
                        v = std::max(0.0, v);
                    }
                }
                h = y;
            }

            const auto got = mlp_forward(net, x);
            REQUIRE(got.size() == h.size());
            for (size_t i = 0; i < h.size(); ++i) {
                CHECK(got[i] == doctest::Approx(h[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("check_bound") {
    SUBCASE("single-layer bound is tight") {
        mlp_net net;
        net.layers.push_back(from_values(1, 1, {2.0}));
        const auto rep = check_bound(net, 0, {0}, 8, 41);
        CHECK(rep.empirical_sup == doctest::Approx(2.0));
        CHECK(rep.analytic_bound == doctest::Approx(2.0));
        CHECK(rep.tightness == doctest::Approx(1.0));
        CHECK(rep.sample_count == 8);
    }

    SUBCASE("identity mask gives zero on both sides") {
        mlp_net net;
        net.layers.push_back(from_values(2, 2, {1, 2, 3, 4}));
        const auto rep = check_bound(net, 0, {1, 1, 1, 1}, 4, 42);
        CHECK(rep.empirical_sup == 0.0);
        CHECK(rep.analytic_bound == 0.0);
        CHECK(rep.tightness == 0.0);
    }

    SUBCASE("argument validation") {
        mlp_net net;
        net.layers.push_back(from_values(1, 1, {2.0}));
        CHECK_THROWS_AS(check_bound(net, 1, {0}, 4, 1), error);
        CHECK_THROWS_AS(check_bound(net, 0, {0, 1}, 4, 1), error);
        CHECK_THROWS_AS(check_bound(net, 0, {0}, 0, 1), error);
    }

    SUBCASE("no violations over random nets") {
        rng64 rng(34);
        for (int t = 0; t < 20; ++t) {
            mlp_net net;
            int prev = 4 + int(rng.next_u64() % 5);
            for (int l = 0; l < 3; ++l) {
                const int next = 4 + int(rng.next_u64() % 5);
                net.layers.push_back(random_matrix(next, prev, rng, 0.6));
                prev = next;
            }
            const int layer = int(rng.next_u64() % 3);
            std::vector<uint8_t> mask(net.layers[size_t(layer)].numel());
            for (auto & m : mask) {
                m = rng.next_u64() % 2;
            }
            const auto rep = check_bound(net, layer, mask, 200, mix_seed(34, uint64_t(t)));
            CHECK(rep.empirical_sup <= rep.analytic_bound * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("spectral_norm") {
    SUBCASE("identity") {
        matrix eye = matrix::zeros(3, 3);
        for (int i = 0; i < 3; ++i) {
            eye.at(i, i) = 1.0;
        }
        CHECK(spectral_norm(eye, 30, 1) == doctest::Approx(1.0));
        CHECK(frobenius_norm(eye) == doctest::Approx(std::sqrt(3.0)));
    }

    SUBCASE("rank-1 equality case") {
        rng64 rng(35);
        const int m = 5, n = 4;
        std::vector<double> u(m), v(n);
        double nu = 0, nv = 0;
        for (auto & x : u) {
            x = rng.next_normal();
            nu += x * x;
        }
        for (auto & x : v) {
            x = rng.next_normal();
            nv += x * x;
        }
        matrix w = matrix::zeros(m, n);
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < n; ++c) {
                w.at(r, c) = u[size_t(r)] * v[size_t(c)];
            }
        }
        const double expect = std::sqrt(nu) * std::sqrt(nv);
        CHECK(spectral_norm(w, 40, 2) == doctest::Approx(expect));
        CHECK(frobenius_norm(w) == doctest::Approx(expect));
    }

    SUBCASE("never exceeds the frobenius norm") {
        rng64 rng(36);
        for (int t = 0; t < 100; ++t) {
            matrix w = random_matrix(1 + int(rng.next_u64() % 10), 1 + int(rng.next_u64() % 10), rng);
            CHECK(spectral_norm(w, 50, mix_seed(36, uint64_t(t))) <= frobenius_norm(w) + 1e-9);
        }
    }

    SUBCASE("zero matrix") {
        CHECK(spectral_norm(matrix::zeros(3, 2), 10, 3) == 0.0);
    }
}

TEST_CASE("run_verification") {
    verify_options opts;
    opts.seed = 17;
    opts.trials = 10;
    opts.samples = 50;

    SUBCASE("battery passes") {
        const auto res = run_verification(opts);
        CHECK(res.all_pass());
        CHECK(res.checks.size() == 6);
        CHECK(res.samples.size() == size_t(opts.trials));
        for (const auto & s : res.samples) {
            CHECK(s.empirical_sup <= s.analytic_bound * (1.0 + 1e-9));
            CHECK(s.tightness >= 0.0);
            CHECK(s.tightness <= 1.0 + 1e-9);
        }
    }

    SUBCASE("corrupted bound comparison fails the battery") {
        opts.corrupt_bound = true;
        const auto res = run_verification(opts);
        CHECK(!res.all_pass());
        bool mc_failed = false;
        for (const auto & c : res.checks) {
            if (c.name == "bound-monte-carlo") {
                mc_failed = !c.pass;
            }
        }
        CHECK(mc_failed);
    }

    SUBCASE("bad options rejected") {
        opts.trials = 0;
        CHECK_THROWS_AS(run_verification(opts), error);
        opts.trials = 1;
        opts.samples = 0;
        CHECK_THROWS_AS(run_verification(opts), error);
    }
}
