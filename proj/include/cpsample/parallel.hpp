// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_PARALLEL_HPP
#define CPSAMPLE_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

#include "cpsample/tensor.hpp"

namespace cpsample {

// Runs fn(lo, hi) over a contiguous split of [0, n). Work items must write
// disjoint state so the split (and thread schedule) cannot change results.
// threads <= 1 runs inline.
template <typename Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    const std::size_t workers =
        threads <= 1 ? 1 : std::min<std::size_t>(std::size_t(threads), n);
    if (workers <= 1) {
        fn(std::size_t(0), n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t base = n / workers, extra = n % workers;
    std::size_t lo = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t len = base + (w < extra ? 1 : 0);
        const std::size_t hi = lo + len;
        pool.emplace_back([&fn, &errors, w, lo, hi]() {
            try {
                fn(lo, hi);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
        lo = hi;
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace cpsample

#endif
