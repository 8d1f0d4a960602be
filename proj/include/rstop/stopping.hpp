#pragma once

#include <vector>

#include "rstop/market.hpp"
#include "rstop/parallel.hpp"
#include "rstop/policy.hpp"

namespace rstop {

/// Per-path stopping algebra of a policy on a dataset. For each path m:
///   h_values[m][j]  = h_j(X_j),                  h at date J is 1;
///   survival[m][j]  = prod_{l<j} (1 - h_l(X_l)), survival[m][0] = 1;
///   tail_value[m][k] = sum_{j>=k} Z_j h_j prod_{k<=l<j}(1 - h_l),
/// satisfying V_k = h_k Z_k + (1-h_k) V_{k+1} with V_J = Z_J. Stopping
/// probabilities p_{0,j} = h_j * survival_j sum to 1 over j because h_J = 1.
struct StoppingProfile {
    std::size_t num_paths = 0;
    int num_dates = 0;
    std::vector<double> h_values;    // [M x (J+1)]
    std::vector<double> survival;    // [M x (J+1)]
    std::vector<double> tail_value;  // [M x (J+1)]

    double h(std::size_t m, int j) const noexcept {
        return h_values[m * (static_cast<std::size_t>(num_dates) + 1) + static_cast<std::size_t>(j)];
    }
    double surv(std::size_t m, int j) const noexcept {
        return survival[m * (static_cast<std::size_t>(num_dates) + 1) + static_cast<std::size_t>(j)];
    }
    double tail(std::size_t m, int j) const noexcept {
        return tail_value[m * (static_cast<std::size_t>(num_dates) + 1) + static_cast<std::size_t>(j)];
    }
};

namespace detail {

inline void check_compatible(const PathSet& paths, const Policy& policy) {
    if (policy.num_dates != paths.num_dates)
        throw std::invalid_argument("policy/paths date count mismatch");
    const int want = policy.mode == PolicyMode::per_date ? paths.dim : paths.dim + 1;
    if (policy.features.num_vars != want)
        throw std::invalid_argument("policy feature dimension does not match path dimension");
    if (policy.mode == PolicyMode::per_date &&
        policy.coefficients.size() != static_cast<std::size_t>(paths.num_dates))
        throw std::invalid_argument("per-date policy needs one coefficient vector per date");
    if (!paths.payoffs_filled)
        throw std::invalid_argument("paths have no payoffs; run fill_payoffs first");
}

} // namespace detail

/// Evaluates h on every (path, date), then survival forward and tail values
/// backward. O(M*J); row-parallel across paths.
inline StoppingProfile compute_profile(const PathSet& paths, const Policy& policy,
                                       int threads = 0) {
    detail::check_compatible(paths, policy);
    const int J = paths.num_dates;
    const std::size_t cols = static_cast<std::size_t>(J) + 1;
    StoppingProfile prof;
    prof.num_paths = paths.num_paths;
    prof.num_dates = J;
    prof.h_values.resize(paths.num_paths * cols);
    prof.survival.resize(paths.num_paths * cols);
    prof.tail_value.resize(paths.num_paths * cols);
    parallel_blocks(paths.num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t m = lo; m < hi; ++m) {
            double* hrow = prof.h_values.data() + m * cols;
            double* srow = prof.survival.data() + m * cols;
            double* vrow = prof.tail_value.data() + m * cols;
            for (int j = 0; j < J; ++j)
                hrow[j] = eval_h(policy, j, paths.state_at(m, j),
                                 paths.dates[static_cast<std::size_t>(j)]);
            hrow[J] = 1.0;
            srow[0] = 1.0;
            for (int j = 0; j < J; ++j) srow[j + 1] = srow[j] * (1.0 - hrow[j]);
            vrow[J] = paths.payoff_at(m, J);
            for (int k = J - 1; k >= 0; --k)
                vrow[k] = hrow[k] * paths.payoff_at(m, k) + (1.0 - hrow[k]) * vrow[k + 1];
        }
    });
    return prof;
}

/// Empirical randomized value (1/M) sum_m V_0^{(m)}.
inline double randomized_value(const PathSet& paths, const Policy& policy,
                               int threads = 0) {
    const StoppingProfile prof = compute_profile(paths, policy, threads);
    const std::size_t cols = static_cast<std::size_t>(paths.num_dates) + 1;
    double acc = 0.0;
    for (std::size_t m = 0; m < paths.num_paths; ++m) acc += prof.tail_value[m * cols];
    return acc / static_cast<double>(paths.num_paths);
}

/// Weights that make the date-(k-1) backward step linear in h:
/// xi^{(m)} = Z_{k-1}^{(m)} - V_k^{(m)}. Only policy dates >= k enter V_k,
/// so coefficients at dates < k are irrelevant here.
inline std::vector<double> xi_coefficients(const PathSet& paths, const Policy& tail_policy,
                                           int k, int threads = 0) {
    if (k < 1 || k > paths.num_dates)
        throw std::invalid_argument("xi_coefficients: k must be in [1, J]");
    const StoppingProfile prof = compute_profile(paths, tail_policy, threads);
    std::vector<double> xi(paths.num_paths);
    for (std::size_t m = 0; m < paths.num_paths; ++m)
        xi[m] = paths.payoff_at(m, k - 1) - prof.tail(m, k);
    return xi;
}

} // namespace rstop
