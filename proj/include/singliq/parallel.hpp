#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace singliq {

/// Run body(i) for i in [0, n). Each item writes only its own output slot, so
/// results are identical for any thread count; reductions happen afterwards in
/// index order.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t n_workers = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w)
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += n_workers) body(i);
        });
    for (auto& th : pool) th.join();
}

} // namespace singliq
