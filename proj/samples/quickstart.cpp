// Minimal library walkthrough: simulate, fit a backward policy, estimate.
// Small path counts so it runs in a couple of seconds; see configs/ for the
// full benchmark setups.

#include <iostream>

#include "rstop/rstop.hpp"

int main() {
    using namespace rstop;

    MarketModel model;
    model.dim = 2;
    model.spot = {90.0, 90.0};
    model.strike = 100.0;
    model.rate = 0.05;
    model.dividend = 0.1;
    model.vol = 0.2;
    model.maturity = 3.0;
    model.num_dates = 9;
    model.dates = make_time_grid(model.maturity, model.num_dates);

    PathSet train = simulate_paths(model, 20000, 20240901);
    fill_payoffs(train, PayoffSpec{PayoffKind::max_call, model.strike, model.rate}, model);

    Policy tmpl = make_per_date_policy(train, model, LinkFunction::gumbel, 3);
    OptimizerConfig opt;
    opt.step_size = 0.1;
    opt.max_iters = 200;
    auto [policy, reports] = backward_fit(train, tmpl, opt);
    std::cout << "in-sample value: " << randomized_value(train, policy) << "\n";

    EstimateReport out =
        lower_bound_estimate(model, policy, 200000, 913, EvalMode::expectation);
    std::cout << "out-of-sample:   " << out.estimate << "  +/- " << 1.96 * out.std_error
              << "\n";
    return 0;
}
