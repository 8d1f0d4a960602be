#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "rstop/market.hpp"
#include "rstop/parallel.hpp"

namespace rstop {

enum class PayoffKind { max_call, custom_table };

/// Reward description. custom_table is only meaningful for finite-chain
/// oracle instances, where rewards come tabulated per (date, state).
struct PayoffSpec {
    PayoffKind kind = PayoffKind::max_call;
    double strike = 100.0;
    double rate = 0.0;  // discount rate folded into Z
};

/// Discounted max-call reward e^{-r t} * max_i (S_0^i exp(x_i) - K)_+.
/// Discounting is folded in here so Z is the literal reward process used
/// everywhere downstream.
inline double max_call_payoff(std::span<const double> log_state,
                              const MarketModel& model, double t_j) noexcept {
    double best = 0.0;
    for (std::size_t i = 0; i < log_state.size(); ++i) {
        const double intrinsic = model.spot[i] * std::exp(log_state[i]) - model.strike;
        best = std::max(best, intrinsic);
    }
    return best <= 0.0 ? 0.0 : std::exp(-model.rate * t_j) * best;
}

/// Caches Z on every (path, date) slot. Parallel across paths; slots are
/// disjoint so writes need no synchronization.
inline PathSet& fill_payoffs(PathSet& paths, const PayoffSpec& spec,
                             const MarketModel& model, int threads = 0) {
    if (spec.kind != PayoffKind::max_call)
        throw std::invalid_argument("fill_payoffs: only max_call applies to simulated paths");
    const std::size_t cols = static_cast<std::size_t>(paths.num_dates) + 1;
    parallel_blocks(paths.num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t m = lo; m < hi; ++m)
            for (int j = 0; j <= paths.num_dates; ++j)
                paths.payoffs[m * cols + static_cast<std::size_t>(j)] =
                    max_call_payoff(paths.state_at(m, j), model,
                                    paths.dates[static_cast<std::size_t>(j)]);
    });
    paths.payoffs_filled = true;
    return paths;
}

} // namespace rstop
