#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstop/errors.hpp"
#include "rstop/estimate.hpp"
#include "rstop/market.hpp"
#include "rstop/payoff.hpp"
#include "rstop/rng.hpp"

namespace rstop {

// ---------------------------------------------------------------------------
// Finite-state test chains
// ---------------------------------------------------------------------------

/// Finite Markov chain with tabulated rewards; the ground-truth world where
/// stopping problems are exactly solvable.
struct FiniteChain {
    int num_states = 0;                 // S
    int num_dates = 0;                  // J
    std::vector<double> transition;     // [J x S x S], row-stochastic per (j, s)
    std::vector<double> rewards;        // [(J+1) x S], nonnegative Z values
    int initial_state = 0;
    std::vector<double> state_features; // [S x d_f]
    int feature_dim = 0;

    double p(int j, int s, int s2) const noexcept {
        return transition[(static_cast<std::size_t>(j) * num_states + s) *
                          static_cast<std::size_t>(num_states) + static_cast<std::size_t>(s2)];
    }
    double z(int j, int s) const noexcept {
        return rewards[static_cast<std::size_t>(j) * num_states + static_cast<std::size_t>(s)];
    }
};

inline void validate_chain(const FiniteChain& c) {
    if (c.num_states < 1 || c.num_dates < 1)
        throw ConfigError("chain: needs at least one state and one date");
    if (c.transition.size() != static_cast<std::size_t>(c.num_dates) * c.num_states * c.num_states)
        throw ConfigError("chain: transition size mismatch");
    if (c.rewards.size() != static_cast<std::size_t>(c.num_dates + 1) * c.num_states)
        throw ConfigError("chain: rewards size mismatch");
    if (c.initial_state < 0 || c.initial_state >= c.num_states)
        throw ConfigError("chain: initial_state out of range");
    for (int j = 0; j < c.num_dates; ++j)
        for (int s = 0; s < c.num_states; ++s) {
            double row = 0.0;
            for (int s2 = 0; s2 < c.num_states; ++s2) {
                const double pr = c.p(j, s, s2);
                if (pr < 0.0) throw ConfigError("chain: negative transition probability");
                row += pr;
            }
            if (std::fabs(row - 1.0) > 1e-12)
                throw ConfigError("chain: transition row does not sum to 1");
        }
    for (double r : c.rewards)
        if (!(r >= 0.0)) throw ConfigError("chain: rewards must be nonnegative");
}

// ---------------------------------------------------------------------------
// Exact solutions
// ---------------------------------------------------------------------------

struct DpSolution {
    double value = 0.0;                    // Snell envelope at (0, initial_state)
    std::vector<double> snell;             // [(J+1) x S]
    std::vector<std::uint8_t> stop_region; // [(J+1) x S], 1 where Z >= continuation
};

/// Backward induction: Y_J = Z_J, Y_j = max(Z_j, E[Y_{j+1} | s]); the stop
/// region is where the reward meets or beats the continuation value.
inline DpSolution dp_value(const FiniteChain& c) {
    validate_chain(c);
    const int S = c.num_states, J = c.num_dates;
    DpSolution sol;
    sol.snell.assign(static_cast<std::size_t>(J + 1) * S, 0.0);
    sol.stop_region.assign(static_cast<std::size_t>(J + 1) * S, 0);
    for (int s = 0; s < S; ++s) {
        sol.snell[static_cast<std::size_t>(J) * S + s] = c.z(J, s);
        sol.stop_region[static_cast<std::size_t>(J) * S + s] = 1;
    }
    for (int j = J - 1; j >= 0; --j)
        for (int s = 0; s < S; ++s) {
            double cont = 0.0;
            for (int s2 = 0; s2 < S; ++s2)
                cont += c.p(j, s, s2) * sol.snell[static_cast<std::size_t>(j + 1) * S + s2];
            const double stop = c.z(j, s);
            sol.snell[static_cast<std::size_t>(j) * S + s] = std::max(stop, cont);
            sol.stop_region[static_cast<std::size_t>(j) * S + s] = stop >= cont ? 1 : 0;
        }
    sol.value = sol.snell[static_cast<std::size_t>(c.initial_state)];
    return sol;
}

/// Exact randomized value by enumerating every trajectory s_0..s_J, weighting
/// by transition probabilities and the stopping distribution of the h-table.
/// Deliberately the dumbest possible implementation; guarded at 10^6 paths.
inline double brute_force_randomized_value(const FiniteChain& c,
                                           std::span<const double> h_table) {
    validate_chain(c);
    if (h_table.size() != static_cast<std::size_t>(c.num_dates + 1) * c.num_states)
        throw std::invalid_argument("brute_force: h table size mismatch");
    double traj_count = 1.0;
    for (int j = 0; j < c.num_dates; ++j) {
        traj_count *= c.num_states;
        if (traj_count > 1e6)
            throw std::invalid_argument("brute_force: S^J exceeds the 1e6 enumeration guard");
    }
    const int S = c.num_states, J = c.num_dates;
    std::vector<int> path(static_cast<std::size_t>(J) + 1, 0);
    path[0] = c.initial_state;
    double total = 0.0;
    // Depth-first over all state sequences; weight = product of transitions.
    auto rec = [&](auto&& self, int j, double weight) -> void {
        if (j == J) {
            double value = 0.0, survive = 1.0;
            for (int l = 0; l <= J; ++l) {
                const double h = h_table[static_cast<std::size_t>(l) * S + path[static_cast<std::size_t>(l)]];
                value += survive * h * c.z(l, path[static_cast<std::size_t>(l)]);
                survive *= 1.0 - h;
            }
            total += weight * value;
            return;
        }
        for (int s2 = 0; s2 < S; ++s2) {
            const double pr = c.p(j, path[static_cast<std::size_t>(j)], s2);
            if (pr == 0.0) continue;
            path[static_cast<std::size_t>(j) + 1] = s2;
            self(self, j + 1, weight * pr);
        }
    };
    rec(rec, 0, 1.0);
    return total;
}

// ---------------------------------------------------------------------------
// Chain simulation and estimation
// ---------------------------------------------------------------------------

/// N state trajectories, one SplitMix64 stream per path.
inline std::vector<int> simulate_chain_paths(const FiniteChain& c, std::size_t num_paths,
                                             std::uint64_t seed) {
    validate_chain(c);
    const int S = c.num_states, J = c.num_dates;
    std::vector<int> states(num_paths * (static_cast<std::size_t>(J) + 1));
    for (std::size_t n = 0; n < num_paths; ++n) {
        PathStream stream(seed, n);
        int s = c.initial_state;
        states[n * (static_cast<std::size_t>(J) + 1)] = s;
        for (int j = 0; j < J; ++j) {
            const double u = stream.next_uniform();
            double cum = 0.0;
            int s2 = S - 1;
            for (int cand = 0; cand < S; ++cand) {
                cum += c.p(j, s, cand);
                if (u < cum) {
                    s2 = cand;
                    break;
                }
            }
            s = s2;
            states[n * (static_cast<std::size_t>(J) + 1) + static_cast<std::size_t>(j) + 1] = s;
        }
    }
    return states;
}

/// Monte Carlo analogue of lower_bound_estimate on a finite chain with a
/// tabulated h. Same three modes as the market version.
inline EstimateReport lower_bound_estimate(const FiniteChain& c,
                                           std::span<const double> h_table,
                                           std::size_t num_paths, std::uint64_t seed,
                                           EvalMode mode) {
    if (num_paths < 1) throw std::invalid_argument("lower_bound_estimate: num_paths must be >= 1");
    if (h_table.size() != static_cast<std::size_t>(c.num_dates + 1) * c.num_states)
        throw std::invalid_argument("lower_bound_estimate: h table size mismatch");
    const std::vector<int> states = simulate_chain_paths(c, num_paths, seed);
    const int S = c.num_states, J = c.num_dates;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t n = 0; n < num_paths; ++n) {
        const int* row = states.data() + n * (static_cast<std::size_t>(J) + 1);
        double value = 0.0;
        if (mode == EvalMode::expectation) {
            double v = c.z(J, row[J]);
            for (int j = J - 1; j >= 0; --j) {
                const double h = h_table[static_cast<std::size_t>(j) * S + row[j]];
                v = h * c.z(j, row[j]) + (1.0 - h) * v;
            }
            value = v;
        } else {
            PathStream exercise(seed ^ detail::kExerciseSalt, n);
            for (int j = 0; j <= J; ++j) {
                const double h = h_table[static_cast<std::size_t>(j) * S + row[j]];
                const bool stop = mode == EvalMode::sampled ? exercise.next_uniform() < h
                                                            : h >= 0.5;
                if (stop || j == J) {
                    value = c.z(j, row[j]);
                    break;
                }
            }
        }
        sum += value;
        sumsq += value * value;
    }
    EstimateReport rep = detail::finish_report(sum, sumsq, num_paths);
    rep.evaluation_mode = mode;
    rep.seed = seed;
    return rep;
}

// ---------------------------------------------------------------------------
// Market references
// ---------------------------------------------------------------------------

/// Terminal-exercise-only value by plain MC: a sanity floor every Bermudan
/// estimate must clear up to noise.
inline EstimateReport european_reference(const MarketModel& model, std::size_t num_paths,
                                         std::uint64_t seed) {
    validate_model(model);
    if (num_paths < 1) throw std::invalid_argument("european_reference: num_paths must be >= 1");
    const double T = model.maturity;
    const double drift = (model.rate - model.dividend - 0.5 * model.vol * model.vol) * T;
    const double diff = model.vol * std::sqrt(T);
    const double disc = std::exp(-model.rate * T);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t n = 0; n < num_paths; ++n) {
        PathStream stream(seed, n);
        double best = 0.0;
        for (int i = 0; i < model.dim; ++i) {
            const double x = diff * stream.next_normal() + drift;
            best = std::max(best, model.spot[static_cast<std::size_t>(i)] * std::exp(x) -
                                      model.strike);
        }
        const double value = disc * best;
        sum += value;
        sumsq += value * value;
    }
    EstimateReport rep = detail::finish_report(sum, sumsq, num_paths);
    rep.evaluation_mode = EvalMode::expectation;
    rep.seed = seed;
    return rep;
}

/// Central finite differences, the gradient oracle for every analytic
/// gradient in the library.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double step) {
    std::vector<double> work(theta.begin(), theta.end());
    std::vector<double> grad(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = work[i];
        work[i] = orig + step;
        const double up = f(work);
        work[i] = orig - step;
        const double dn = f(work);
        work[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(dn))
            throw NumericError("finite_difference_gradient: objective is non-finite");
        grad[i] = (up - dn) / (2.0 * step);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Seeded fixtures
// ---------------------------------------------------------------------------

/// Random chain with dense strictly positive transitions, sparse-ish rewards
/// and standard-normal state features. Fully determined by the seed.
inline FiniteChain make_random_chain(std::uint64_t seed, int num_states, int num_dates,
                                     int feature_dim) {
    FiniteChain c;
    c.num_states = num_states;
    c.num_dates = num_dates;
    c.feature_dim = feature_dim;
    c.initial_state = 0;
    PathStream stream(seed, 0);
    c.transition.resize(static_cast<std::size_t>(num_dates) * num_states * num_states);
    for (int j = 0; j < num_dates; ++j)
        for (int s = 0; s < num_states; ++s) {
            double row = 0.0;
            const std::size_t base =
                (static_cast<std::size_t>(j) * num_states + s) * static_cast<std::size_t>(num_states);
            for (int s2 = 0; s2 < num_states; ++s2) {
                const double w = 0.05 + stream.next_uniform();
                c.transition[base + static_cast<std::size_t>(s2)] = w;
                row += w;
            }
            for (int s2 = 0; s2 < num_states; ++s2)
                c.transition[base + static_cast<std::size_t>(s2)] /= row;
        }
    c.rewards.resize(static_cast<std::size_t>(num_dates + 1) * num_states);
    for (double& r : c.rewards) r = 10.0 * stream.next_uniform();
    c.state_features.resize(static_cast<std::size_t>(num_states) * feature_dim);
    for (double& v : c.state_features) v = stream.next_normal();
    return c;
}

/// Random h-table with the terminal row pinned at 1.
inline std::vector<double> make_random_h_table(std::uint64_t seed, const FiniteChain& c) {
    std::vector<double> h(static_cast<std::size_t>(c.num_dates + 1) * c.num_states);
    PathStream stream(seed, 1);
    for (double& v : h) v = stream.next_uniform();
    for (int s = 0; s < c.num_states; ++s)
        h[static_cast<std::size_t>(c.num_dates) * c.num_states + s] = 1.0;
    return h;
}

// ---------------------------------------------------------------------------
// Chain serialization
// ---------------------------------------------------------------------------

inline nlohmann::json chain_to_json(const FiniteChain& c) {
    return {{"num_states", c.num_states},   {"num_dates", c.num_dates},
            {"transition", c.transition},   {"rewards", c.rewards},
            {"initial_state", c.initial_state}, {"state_features", c.state_features},
            {"feature_dim", c.feature_dim}};
}

inline FiniteChain chain_from_json(const nlohmann::json& j) {
    FiniteChain c;
    try {
        c.num_states = j.at("num_states").get<int>();
        c.num_dates = j.at("num_dates").get<int>();
        c.transition = j.at("transition").get<std::vector<double>>();
        c.rewards = j.at("rewards").get<std::vector<double>>();
        c.initial_state = j.at("initial_state").get<int>();
        c.state_features = j.at("state_features").get<std::vector<double>>();
        c.feature_dim = j.at("feature_dim").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("chain JSON: ") + e.what());
    }
    validate_chain(c);
    return c;
}

} // namespace rstop
