// rstop: fits randomized exercise policies on simulated paths and reports
// low-biased price estimates. JSON config in, CSV/JSON artifacts out; every
// flag overrides its config-file counterpart.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rstop/rstop.hpp"

namespace {

std::vector<std::size_t> parse_sweep_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) throw rstop::ConfigError("--sweep: empty entry in list");
        try {
            out.push_back(std::stoull(cur));
        } catch (const std::exception&) {
            throw rstop::ConfigError("--sweep: '" + cur + "' is not a path count");
        }
        cur.clear();
    };
    for (char c : s) {
        if (c == ',') {
            flush();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Randomized-stopping Monte Carlo pricer"};
    std::string config_path, method, link, eval_mode, output_dir, sweep_list;
    int degree = 0, reps = 0, threads = 0;
    std::size_t train_paths = 0, eval_paths = 0;
    std::uint64_t seed_train = 0, seed_eval = 0, seed_opt = 0;

    auto* o_config = app.add_option("--config", config_path, "JSON config file");
    auto* o_method = app.add_option("--method", method, "backward|forward");
    auto* o_link = app.add_option("--link", link, "logistic|gumbel");
    auto* o_degree = app.add_option("--degree", degree, "polynomial degree");
    auto* o_train = app.add_option("--train-paths", train_paths, "training paths M");
    auto* o_eval = app.add_option("--eval-paths", eval_paths, "evaluation paths N");
    auto* o_strain = app.add_option("--seed-train", seed_train, "training path seed");
    auto* o_seval = app.add_option("--seed-eval", seed_eval, "evaluation path seed");
    auto* o_sopt = app.add_option("--seed-opt", seed_opt, "optimizer seed");
    auto* o_mode = app.add_option("--eval-mode", eval_mode, "expectation|sampled|hard");
    auto* o_output = app.add_option("--output", output_dir, "output directory");
    auto* o_sweep = app.add_option("--sweep", sweep_list, "comma-separated M list");
    auto* o_reps = app.add_option("--reps", reps, "sweep repetitions");
    auto* o_threads = app.add_option("--threads", threads, "worker cap (0 = all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        rstop::RunConfig cfg;
        if (o_config->count() > 0) cfg = rstop::load_run_config(config_path);
        if (o_method->count() > 0) {
            // Switching method by flag also moves max_iters to the new
            // method's default, unless the config pinned a custom value.
            const rstop::FitMethod new_method = rstop::method_from_string(method);
            const int old_default = cfg.method == rstop::FitMethod::forward ? 1000 : 300;
            const int new_default = new_method == rstop::FitMethod::forward ? 1000 : 300;
            if (cfg.optimizer.max_iters == old_default) cfg.optimizer.max_iters = new_default;
            cfg.method = new_method;
        }
        if (o_link->count() > 0) cfg.link = rstop::link_from_string(link);
        if (o_degree->count() > 0) cfg.degree = degree;
        if (o_train->count() > 0) cfg.train_paths = train_paths;
        if (o_eval->count() > 0) cfg.eval_paths = eval_paths;
        if (o_strain->count() > 0) cfg.seed_train = seed_train;
        if (o_seval->count() > 0) cfg.seed_eval = seed_eval;
        if (o_sopt->count() > 0) cfg.optimizer.seed = seed_opt;
        if (o_mode->count() > 0) cfg.eval_mode = rstop::eval_mode_from_string(eval_mode);
        if (o_output->count() > 0) cfg.output_dir = output_dir;
        if (o_threads->count() > 0) cfg.threads = threads;
        if (o_sweep->count() > 0) cfg.sweep_m = parse_sweep_list(sweep_list);
        if (o_reps->count() > 0) cfg.sweep_reps = reps;

        if (!cfg.sweep_m.empty()) {
            rstop::run_convergence_sweep(cfg);
        } else {
            rstop::run_price(cfg);
        }
        return 0;
    } catch (const rstop::ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const rstop::NumericError& e) {
        std::cerr << "numeric fault: " << e.what() << std::endl;
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    }
}
