#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rstop/errors.hpp"
#include "rstop/fingerprint.hpp"
#include "rstop/parallel.hpp"
#include "rstop/rng.hpp"

namespace rstop {

// ---------------------------------------------------------------------------
// Market description
// ---------------------------------------------------------------------------

/// Multi-asset Black-Scholes market on a finite exercise grid. All assets
/// share one volatility and dividend rate and have independent drivers.
struct MarketModel {
    int dim = 1;                   // number of assets d
    std::vector<double> spot;      // initial prices S_0^i
    double strike = 100.0;         // K
    double rate = 0.0;             // r, per year
    double dividend = 0.0;         // delta, per year
    double vol = 0.2;              // sigma, per sqrt-year
    double maturity = 1.0;         // T, years
    int num_dates = 1;             // J, number of exercise intervals
    std::vector<double> dates;     // t_0..t_J, strictly increasing, t_0=0, t_J=T
};

/// Uniform grid {j*T/J, j=0..J}.
inline std::vector<double> make_time_grid(double T, int J) {
    if (J < 1) throw std::invalid_argument("make_time_grid: J must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("make_time_grid: T must be > 0");
    std::vector<double> grid(static_cast<std::size_t>(J) + 1);
    for (int j = 0; j <= J; ++j) grid[static_cast<std::size_t>(j)] = T * j / J;
    grid.back() = T;
    return grid;
}

inline void validate_model(const MarketModel& m) {
    if (m.dim < 1) throw ConfigError("model: dim must be >= 1");
    if (static_cast<int>(m.spot.size()) != m.dim)
        throw ConfigError("model: spot must have dim entries");
    for (double s : m.spot)
        if (!(s > 0.0)) throw ConfigError("model: spot prices must be > 0");
    if (!(m.vol > 0.0)) throw ConfigError("model: vol must be > 0");
    if (!(m.maturity > 0.0)) throw ConfigError("model: maturity must be > 0");
    if (m.num_dates < 1) throw ConfigError("model: num_dates must be >= 1");
    if (m.dates.size() != static_cast<std::size_t>(m.num_dates) + 1)
        throw ConfigError("model: dates must have num_dates + 1 entries");
    if (m.dates.front() != 0.0) throw ConfigError("model: dates must start at 0");
    for (std::size_t j = 1; j < m.dates.size(); ++j)
        if (!(m.dates[j] > m.dates[j - 1]))
            throw ConfigError("model: dates must be strictly increasing");
    if (m.dates.back() != m.maturity)
        throw ConfigError("model: dates must end at maturity");
}

inline std::uint64_t model_fingerprint(const MarketModel& m) {
    Fnv1a h;
    h.feed(m.dim);
    for (double s : m.spot) h.feed(s);
    h.feed(m.strike);
    h.feed(m.rate);
    h.feed(m.dividend);
    h.feed(m.vol);
    h.feed(m.maturity);
    h.feed(m.num_dates);
    for (double t : m.dates) h.feed(t);
    return h.value();
}

// ---------------------------------------------------------------------------
// Simulated dataset
// ---------------------------------------------------------------------------

/// M trajectories of log-prices plus cached discounted payoffs. states[m][0]
/// is always the zero vector; prices are S_0^i * exp(x_i) on demand.
struct PathSet {
    std::size_t num_paths = 0;          // M
    int num_dates = 0;                  // J
    int dim = 0;                        // d
    std::uint64_t seed = 0;
    std::vector<double> dates;          // copy of the model grid, J+1 entries
    std::vector<double> states;         // [M * (J+1) * d], layout m-major then date
    std::vector<double> payoffs;        // [M * (J+1)], zero until fill_payoffs
    bool payoffs_filled = false;

    std::span<const double> state_at(std::size_t m, int j) const noexcept {
        const std::size_t d = static_cast<std::size_t>(dim);
        return {states.data() + (m * (static_cast<std::size_t>(num_dates) + 1) +
                                 static_cast<std::size_t>(j)) * d, d};
    }
    double payoff_at(std::size_t m, int j) const noexcept {
        return payoffs[m * (static_cast<std::size_t>(num_dates) + 1) +
                       static_cast<std::size_t>(j)];
    }
};

namespace detail {

/// Writes one trajectory of log-prices into out[(J+1) x d]. Draw order is
/// date-major then asset, so a path's randoms depend only on (seed, index).
inline void simulate_path_into(const MarketModel& m, std::uint64_t seed,
                               std::uint64_t path_index, double* out) noexcept {
    PathStream stream(seed, path_index);
    const int d = m.dim;
    for (int i = 0; i < d; ++i) out[i] = 0.0;
    for (int j = 0; j < m.num_dates; ++j) {
        const double dt = m.dates[static_cast<std::size_t>(j) + 1] -
                          m.dates[static_cast<std::size_t>(j)];
        const double drift = (m.rate - m.dividend - 0.5 * m.vol * m.vol) * dt;
        const double diff = m.vol * std::sqrt(dt);
        const double* prev = out + static_cast<std::size_t>(j) * d;
        double* next = out + (static_cast<std::size_t>(j) + 1) * d;
        for (int i = 0; i < d; ++i)
            next[i] = prev[i] + diff * stream.next_normal() + drift;
    }
}

} // namespace detail

/// Exact lognormal-transition simulation. Bit-reproducible for a given
/// (model, num_paths, seed) at any worker count; payoffs stay zero until
/// fill_payoffs runs.
inline PathSet simulate_paths(const MarketModel& model, std::size_t num_paths,
                              std::uint64_t seed, int threads = 0) {
    validate_model(model);
    if (num_paths < 1) throw std::invalid_argument("simulate_paths: num_paths must be >= 1");
    PathSet ps;
    ps.num_paths = num_paths;
    ps.num_dates = model.num_dates;
    ps.dim = model.dim;
    ps.seed = seed;
    ps.dates = model.dates;
    const std::size_t row = (static_cast<std::size_t>(model.num_dates) + 1) *
                            static_cast<std::size_t>(model.dim);
    ps.states.resize(num_paths * row);
    ps.payoffs.assign(num_paths * (static_cast<std::size_t>(model.num_dates) + 1), 0.0);
    parallel_blocks(num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t p = lo; p < hi; ++p)
            detail::simulate_path_into(model, seed, p, ps.states.data() + p * row);
    });
    return ps;
}

} // namespace rstop
