#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace rstop {

/// Fixed block width used by every parallel loop in the library. Reductions
/// accumulate one partial per block and combine them in block-index order,
/// so results are bit-identical for any worker count.
inline constexpr std::size_t kBlockSize = 4096;

inline int resolve_threads(int requested) noexcept {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Invokes fn(begin, end, block_index) for each block of [0, n). Blocks are
/// claimed from a shared counter; fn must only write state owned by its block.
template <class Fn>
void parallel_blocks(std::size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    const std::size_t num_blocks = (n + kBlockSize - 1) / kBlockSize;
    const int workers = std::min<std::size_t>(resolve_threads(threads), num_blocks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < num_blocks; ++b) {
            const std::size_t lo = b * kBlockSize;
            fn(lo, std::min(lo + kBlockSize, n), b);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1, std::memory_order_relaxed);
            if (b >= num_blocks) return;
            const std::size_t lo = b * kBlockSize;
            fn(lo, std::min(lo + kBlockSize, n), b);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

/// Deterministic parallel sum: fn(i) is accumulated left-to-right within each
/// block, then block partials are added in index order.
template <class Fn>
double parallel_sum(std::size_t n, int threads, Fn&& fn) {
    if (n == 0) return 0.0;
    const std::size_t num_blocks = (n + kBlockSize - 1) / kBlockSize;
    std::vector<double> partial(num_blocks, 0.0);
    parallel_blocks(n, threads, [&](std::size_t lo, std::size_t hi, std::size_t b) {
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += fn(i);
        partial[b] = acc;
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

/// Same scheme for vector-valued accumulation: fn(i, acc) adds row i into acc
/// (length dim). Block partials are combined coordinate-wise in index order.
template <class Fn>
std::vector<double> parallel_sum_vec(std::size_t n, std::size_t dim, int threads, Fn&& fn) {
    const std::size_t num_blocks = n == 0 ? 0 : (n + kBlockSize - 1) / kBlockSize;
    std::vector<double> partial(num_blocks * dim, 0.0);
    parallel_blocks(n, threads, [&](std::size_t lo, std::size_t hi, std::size_t b) {
        double* acc = partial.data() + b * dim;
        for (std::size_t i = lo; i < hi; ++i) fn(i, acc);
    });
    std::vector<double> total(dim, 0.0);
    for (std::size_t b = 0; b < num_blocks; ++b) {
        const double* acc = partial.data() + b * dim;
        for (std::size_t k = 0; k < dim; ++k) total[k] += acc[k];
    }
    return total;
}

} // namespace rstop
