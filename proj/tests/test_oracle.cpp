#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "rstop/market.hpp"
#include "rstop/oracle.hpp"

using namespace rstop;

#ifndef RSTOP_FIXTURE_DIR
#define RSTOP_FIXTURE_DIR "tests/fixtures"
#endif

namespace {

FiniteChain two_state_chain(double z00) {
    FiniteChain c;
    c.num_states = 2;
    c.num_dates = 1;
    c.transition = {0.3, 0.7,   // from state 0
                    0.5, 0.5};  // from state 1
    c.rewards = {z00, 0.0,      // date 0
                 0.0, 2.0};     // date 1
    c.initial_state = 0;
    c.feature_dim = 1;
    c.state_features = {0.0, 1.0};
    return c;
}

std::vector<double> indicator_table(const FiniteChain& c, const DpSolution& dp) {
    std::vector<double> h(dp.stop_region.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = dp.stop_region[i] ? 1.0 : 0.0;
    return h;
}

} // namespace

TEST_CASE("dynamic programming on a hand-checked chain") {
    const FiniteChain cont = two_state_chain(1.0);
    const DpSolution s1 = dp_value(cont);
    // Continuation from state 0 is 0.3 * 0 + 0.7 * 2 = 1.4 > 1.
    CHECK_THAT(s1.value, Catch::Matchers::WithinAbs(1.4, 1e-15));
    CHECK(s1.stop_region[0] == 0);

    const FiniteChain stop = two_state_chain(2.0);
    const DpSolution s2 = dp_value(stop);
    CHECK_THAT(s2.value, Catch::Matchers::WithinAbs(2.0, 1e-15));
    CHECK(s2.stop_region[0] == 1);
}

TEST_CASE("constant rewards value at the constant") {
    FiniteChain c = make_random_chain(12, 4, 3, 2);
    for (double& z : c.rewards) z = 3.5;
    const DpSolution dp = dp_value(c);
    CHECK_THAT(dp.value, Catch::Matchers::WithinAbs(3.5, 1e-12));
    const std::vector<double> h = make_random_h_table(9, c);
    CHECK_THAT(brute_force_randomized_value(c, h), Catch::Matchers::WithinAbs(3.5, 1e-12));
}

TEST_CASE("dp equals the best deterministic rule, found exhaustively") {
    const FiniteChain c = make_random_chain(777, 4, 3, 2);
    const DpSolution dp = dp_value(c);
    const int cells = 4 * 3;  // (j, s) decision points, terminal forced
    double best = -1.0;
    std::vector<double> h(static_cast<std::size_t>(4) * 4, 0.0);
    for (int s = 0; s < 4; ++s) h[static_cast<std::size_t>(3) * 4 + s] = 1.0;
    for (int mask = 0; mask < (1 << cells); ++mask) {
        for (int j = 0; j < 3; ++j)
            for (int s = 0; s < 4; ++s)
                h[static_cast<std::size_t>(j) * 4 + s] =
                    (mask >> (j * 4 + s)) & 1 ? 1.0 : 0.0;
        best = std::max(best, brute_force_randomized_value(c, h));
    }
    CHECK_THAT(best, Catch::Matchers::WithinAbs(dp.value, 1e-10));
}

TEST_CASE("the stop-region indicator attains the dp value") {
    for (std::uint64_t seed : {3ull, 4ull, 5ull, 6ull}) {
        const FiniteChain c = make_random_chain(seed, 3 + seed % 3, 3 + seed % 2, 2);
        const DpSolution dp = dp_value(c);
        const double v = brute_force_randomized_value(c, indicator_table(c, dp));
        CHECK_THAT(v, Catch::Matchers::WithinAbs(dp.value, 1e-10));
    }
}

TEST_CASE("no randomized table beats the dp value") {
    const FiniteChain c = make_random_chain(88, 4, 4, 2);
    const DpSolution dp = dp_value(c);
    for (int k = 0; k < 50; ++k) {
        const std::vector<double> h = make_random_h_table(100 + static_cast<std::uint64_t>(k), c);
        CHECK(brute_force_randomized_value(c, h) <= dp.value + 1e-10);
    }
}

TEST_CASE("chain Monte Carlo agrees with the exact value") {
    const FiniteChain c = make_random_chain(55, 4, 4, 2);
    const std::vector<double> h = make_random_h_table(56, c);
    const double exact = brute_force_randomized_value(c, h);
    for (EvalMode mode : {EvalMode::expectation, EvalMode::sampled}) {
        const EstimateReport rep = lower_bound_estimate(c, h, 100000, 57, mode);
        CHECK(std::fabs(rep.estimate - exact) <= 4.0 * rep.std_error);
        CHECK(rep.std_error > 0.0);
        CHECK(rep.std_error < 0.1);
    }
    const DpSolution dp = dp_value(c);
    const EstimateReport hard =
        lower_bound_estimate(c, indicator_table(c, dp), 100000, 58, EvalMode::hard_threshold);
    CHECK(std::fabs(hard.estimate - dp.value) <= 4.0 * hard.std_error);
}

TEST_CASE("chain Monte Carlo is reproducible") {
    const FiniteChain c = make_random_chain(60, 3, 3, 2);
    const std::vector<double> h = make_random_h_table(61, c);
    const EstimateReport a = lower_bound_estimate(c, h, 20000, 62, EvalMode::sampled);
    const EstimateReport b = lower_bound_estimate(c, h, 20000, 62, EvalMode::sampled);
    CHECK(a.estimate == b.estimate);
}

TEST_CASE("european reference matches the closed form") {
    MarketModel m;
    m.dim = 1;
    m.spot = {100.0};
    m.strike = 100.0;
    m.rate = 0.05;
    m.dividend = 0.1;
    m.vol = 0.2;
    m.maturity = 3.0;
    m.num_dates = 1;
    m.dates = make_time_grid(3.0, 1);
    const EstimateReport rep = european_reference(m, 1000000, 99);
    // Black-Scholes call, S = K = 100, r = 0.05, q = 0.1, sigma = 0.2, T = 3.
    const double bs = 6.020788799419936;
    CHECK(std::fabs(rep.estimate - bs) <= 4.0 * rep.std_error);
    CHECK(rep.std_error < 0.02);
}

TEST_CASE("finite differences are exact on polynomials") {
    const std::vector<double> theta = {0.4, -1.2, 2.0};

    const auto glin = finite_difference_gradient(
        [](std::span<const double> t) { return 3.0 * t[0] - 2.0 * t[1] + 0.5 * t[2]; },
        theta, 1e-4);
    CHECK_THAT(glin[0], Catch::Matchers::WithinAbs(3.0, 1e-9));
    CHECK_THAT(glin[1], Catch::Matchers::WithinAbs(-2.0, 1e-9));
    CHECK_THAT(glin[2], Catch::Matchers::WithinAbs(0.5, 1e-9));

    const auto gquad = finite_difference_gradient(
        [](std::span<const double> t) {
            return t[0] * t[0] + 3.0 * t[1] * t[1] + t[0] * t[2];
        },
        theta, 1e-5);
    CHECK_THAT(gquad[0], Catch::Matchers::WithinAbs(2.0 * 0.4 + 2.0, 1e-7));
    CHECK_THAT(gquad[1], Catch::Matchers::WithinAbs(-7.2, 1e-6));
    CHECK_THAT(gquad[2], Catch::Matchers::WithinAbs(0.4, 1e-8));

    CHECK_THROWS_AS(finite_difference_gradient(
                        [](std::span<const double>) { return std::nan(""); }, theta, 1e-5),
                    NumericError);
}

TEST_CASE("chain validation rejects malformed inputs") {
    FiniteChain c = make_random_chain(70, 3, 2, 2);
    CHECK_NOTHROW(validate_chain(c));
    FiniteChain bad = c;
    bad.transition[0] += 0.01;  // row no longer sums to one
    CHECK_THROWS_AS(validate_chain(bad), ConfigError);
    bad = c;
    bad.rewards[1] = -0.5;
    CHECK_THROWS_AS(validate_chain(bad), ConfigError);
    bad = c;
    bad.initial_state = 3;
    CHECK_THROWS_AS(validate_chain(bad), ConfigError);
    bad = c;
    bad.rewards.pop_back();
    CHECK_THROWS_AS(validate_chain(bad), ConfigError);
}

TEST_CASE("brute force guards") {
    const FiniteChain c = make_random_chain(71, 3, 3, 2);
    std::vector<double> short_table(5, 0.5);
    CHECK_THROWS_AS(brute_force_randomized_value(c, short_table), std::invalid_argument);
    const FiniteChain big = make_random_chain(72, 10, 7, 1);  // 10^7 trajectories
    const std::vector<double> h = make_random_h_table(73, big);
    CHECK_THROWS_AS(brute_force_randomized_value(big, h), std::invalid_argument);
}

TEST_CASE("chain JSON round-trips exactly") {
    const FiniteChain c = make_random_chain(80, 4, 3, 2);
    const FiniteChain d = chain_from_json(chain_to_json(c));
    CHECK(d.num_states == c.num_states);
    CHECK(d.num_dates == c.num_dates);
    CHECK(d.transition == c.transition);
    CHECK(d.rewards == c.rewards);
    CHECK(d.initial_state == c.initial_state);
    CHECK(d.state_features == c.state_features);
    CHECK(d.feature_dim == c.feature_dim);
    CHECK_THROWS_AS(chain_from_json(nlohmann::json{{"num_states", 2}}), ConfigError);
}

TEST_CASE("committed chain fixtures load and validate") {
    int loaded = 0;
    for (int i = 0; i < 10; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s/chains/chain_%02d.json", RSTOP_FIXTURE_DIR, i);
        std::ifstream in(name);
        if (!in) continue;
        nlohmann::json doc;
        in >> doc;
        const FiniteChain c = chain_from_json(doc.at("chain"));
        const std::vector<double> h = doc.at("h_table").get<std::vector<double>>();
        REQUIRE(h.size() == static_cast<std::size_t>(c.num_dates + 1) * c.num_states);
        const DpSolution dp = dp_value(c);
        CHECK(brute_force_randomized_value(c, h) <= dp.value + 1e-10);
        ++loaded;
    }
    CHECK(loaded == 10);
}
