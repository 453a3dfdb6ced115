// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dimap {

inline int default_thread_count() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : int(n);
}

// Strided partition of [0, n). Each index is visited exactly once and workers
// write only to slots derived from their own index, so results are identical
// for every thread count.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn && fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    size_t nt = std::min(size_t(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::exception_ptr first_err;
    std::mutex err_mtx;
    for (size_t t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (size_t i = t; i < n; i += nt) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mtx);
                if (!first_err) {
                    first_err = std::current_exception();
                }
            }
        });
    }
    for (auto & th : pool) {
        th.join();
    }
    if (first_err) {
        std::rethrow_exception(first_err);
    }
}

} // namespace dimap
