#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rstop/market.hpp"
#include "rstop/payoff.hpp"

using namespace rstop;

namespace {

MarketModel two_asset(double s1, double s2) {
    MarketModel m;
    m.dim = 2;
    m.spot = {s1, s2};
    m.strike = 100.0;
    m.rate = 0.05;
    m.dividend = 0.1;
    m.vol = 0.2;
    m.maturity = 3.0;
    m.num_dates = 9;
    m.dates = make_time_grid(3.0, 9);
    return m;
}

} // namespace

TEST_CASE("max call at reference points") {
    const MarketModel below = two_asset(90.0, 95.0);
    const double zero_state[2] = {0.0, 0.0};
    CHECK(max_call_payoff({zero_state, 2}, below, 0.0) == 0.0);
    CHECK(max_call_payoff({zero_state, 2}, below, 2.0) == 0.0);

    MarketModel atm = two_asset(100.0, 100.0);
    atm.dim = 1;
    atm.spot = {100.0};
    CHECK(max_call_payoff({zero_state, 1}, atm, 0.0) == 0.0);

    // S = (120, 100), K = 100, r = 0.05, t = 1: e^{-0.05} * 20.
    const MarketModel m = two_asset(100.0, 100.0);
    const double state[2] = {std::log(1.2), 0.0};
    CHECK_THAT(max_call_payoff({state, 2}, m, 1.0),
               Catch::Matchers::WithinAbs(19.02458849001428, 1e-12));
}

TEST_CASE("discounting is nonincreasing in time") {
    const MarketModel m = two_asset(100.0, 100.0);
    const double state[2] = {0.5, -0.1};
    double prev = max_call_payoff({state, 2}, m, 0.0);
    for (double t : {0.5, 1.0, 2.0, 3.0}) {
        const double z = max_call_payoff({state, 2}, m, t);
        CHECK(z <= prev);
        prev = z;
    }
}

TEST_CASE("fill payoffs equals elementwise recomputation") {
    const MarketModel m = two_asset(90.0, 90.0);
    PathSet ps = simulate_paths(m, 2000, 11);
    const PayoffSpec spec{PayoffKind::max_call, m.strike, m.rate};
    fill_payoffs(ps, spec, m);
    REQUIRE(ps.payoffs_filled);
    for (std::size_t path = 0; path < ps.num_paths; ++path)
        for (int j = 0; j <= ps.num_dates; ++j) {
            const double direct = max_call_payoff(ps.state_at(path, j), m,
                                                  ps.dates[static_cast<std::size_t>(j)]);
            CHECK(ps.payoff_at(path, j) == direct);
            CHECK(ps.payoff_at(path, j) >= 0.0);
            CHECK(std::isfinite(ps.payoff_at(path, j)));
        }
}

TEST_CASE("all-zero states below strike give zero payoffs") {
    const MarketModel m = two_asset(90.0, 90.0);
    PathSet ps = simulate_paths(m, 50, 3);
    std::fill(ps.states.begin(), ps.states.end(), 0.0);
    fill_payoffs(ps, PayoffSpec{PayoffKind::max_call, m.strike, m.rate}, m);
    for (double z : ps.payoffs) CHECK(z == 0.0);
}

TEST_CASE("deterministic single-asset payoffs") {
    // A flat path at S = S_0 with S_0 > K: payoffs are the discounted spread.
    MarketModel m = two_asset(120.0, 120.0);
    m.dim = 1;
    m.spot = {120.0};
    PathSet ps = simulate_paths(m, 1, 5);
    std::fill(ps.states.begin(), ps.states.end(), 0.0);
    fill_payoffs(ps, PayoffSpec{PayoffKind::max_call, m.strike, m.rate}, m);
    for (int j = 0; j <= m.num_dates; ++j) {
        const double t = m.dates[static_cast<std::size_t>(j)];
        CHECK_THAT(ps.payoff_at(0, j),
                   Catch::Matchers::WithinAbs(std::exp(-0.05 * t) * 20.0, 1e-12));
    }
}
