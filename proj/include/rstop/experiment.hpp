#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstop/errors.hpp"
#include "rstop/estimate.hpp"
#include "rstop/fingerprint.hpp"
#include "rstop/market.hpp"
#include "rstop/optimize.hpp"
#include "rstop/oracle.hpp"
#include "rstop/payoff.hpp"
#include "rstop/policy.hpp"
#include "rstop/stopping.hpp"

namespace rstop {

enum class FitMethod { backward, forward };

inline const char* to_string(FitMethod m) noexcept {
    return m == FitMethod::backward ? "backward" : "forward";
}
inline FitMethod method_from_string(const std::string& s) {
    if (s == "backward") return FitMethod::backward;
    if (s == "forward") return FitMethod::forward;
    throw ConfigError("method: expected 'backward' or 'forward', got '" + s + "'");
}

/// Fully resolved experiment description. Defaults are the S_0 = 90 benchmark
/// at desk scale; a JSON config overrides fields, CLI flags override both.
struct RunConfig {
    // market
    int dim = 2;
    std::vector<double> spot = {90.0, 90.0};
    double strike = 100.0;
    double rate = 0.05;
    double dividend = 0.1;
    double vol = 0.2;
    double maturity = 3.0;
    int num_dates = 9;
    // experiment
    FitMethod method = FitMethod::backward;
    LinkFunction link = LinkFunction::gumbel;
    int degree = 3;
    std::size_t train_paths = 200000;
    std::size_t eval_paths = 1000000;
    std::uint64_t seed_train = 20240901;
    std::uint64_t seed_eval = 913;
    EvalMode eval_mode = EvalMode::expectation;
    OptimizerConfig optimizer;  // seed doubles as seed_opt
    std::string output_dir = "out";
    int threads = 0;
    // optional sweep section
    std::vector<std::size_t> sweep_m;
    int sweep_reps = 1;

    MarketModel model() const {
        MarketModel m;
        m.dim = dim;
        m.spot = spot;
        m.strike = strike;
        m.rate = rate;
        m.dividend = dividend;
        m.vol = vol;
        m.maturity = maturity;
        m.num_dates = num_dates;
        m.dates = make_time_grid(maturity, num_dates);
        return m;
    }
};

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T get_field(const nlohmann::json& j, const char* name, const T& fallback) {
    if (!j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config field '") + name + "' has the wrong type");
    }
}

} // namespace detail

/// Parses and validates a config document. Unknown keys are rejected so typos
/// fail loudly instead of silently falling back to defaults.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    static const std::vector<std::string> known_top = {
        "model", "method", "link", "degree", "train_paths", "eval_paths", "seed_train",
        "seed_eval", "seed_opt", "eval_mode", "optimizer", "output", "threads", "sweep", "reps"};
    static const std::vector<std::string> known_model = {
        "dim", "spot", "strike", "rate", "dividend", "vol", "maturity", "num_dates"};
    static const std::vector<std::string> known_opt = {
        "step_size", "beta1", "beta2", "epsilon", "max_iters", "minibatch",
        "tol_rel", "restarts", "warm_start"};
    for (const auto& [key, _] : j.items())
        if (std::find(known_top.begin(), known_top.end(), key) == known_top.end())
            throw ConfigError("config: unknown field '" + key + "'");

    RunConfig cfg;
    cfg.method = method_from_string(detail::get_field<std::string>(j, "method", "backward"));
    cfg.optimizer = cfg.method == FitMethod::forward ? default_forward_optimizer()
                                                     : default_backward_optimizer();
    if (j.contains("model")) {
        const auto& m = j.at("model");
        for (const auto& [key, _] : m.items())
            if (std::find(known_model.begin(), known_model.end(), key) == known_model.end())
                throw ConfigError("config: unknown model field '" + key + "'");
        cfg.dim = detail::get_field(m, "dim", cfg.dim);
        cfg.spot = detail::get_field(m, "spot", cfg.spot);
        cfg.strike = detail::get_field(m, "strike", cfg.strike);
        cfg.rate = detail::get_field(m, "rate", cfg.rate);
        cfg.dividend = detail::get_field(m, "dividend", cfg.dividend);
        cfg.vol = detail::get_field(m, "vol", cfg.vol);
        cfg.maturity = detail::get_field(m, "maturity", cfg.maturity);
        cfg.num_dates = detail::get_field(m, "num_dates", cfg.num_dates);
    }
    cfg.link = link_from_string(detail::get_field<std::string>(j, "link", "gumbel"));
    cfg.degree = detail::get_field(j, "degree", cfg.degree);
    cfg.train_paths = detail::get_field(j, "train_paths", cfg.train_paths);
    cfg.eval_paths = detail::get_field(j, "eval_paths", cfg.eval_paths);
    cfg.seed_train = detail::get_field(j, "seed_train", cfg.seed_train);
    cfg.seed_eval = detail::get_field(j, "seed_eval", cfg.seed_eval);
    cfg.optimizer.seed = detail::get_field(j, "seed_opt", cfg.optimizer.seed);
    cfg.eval_mode =
        eval_mode_from_string(detail::get_field<std::string>(j, "eval_mode", "expectation"));
    cfg.output_dir = detail::get_field<std::string>(j, "output", cfg.output_dir);
    cfg.threads = detail::get_field(j, "threads", cfg.threads);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        for (const auto& [key, _] : o.items())
            if (std::find(known_opt.begin(), known_opt.end(), key) == known_opt.end())
                throw ConfigError("config: unknown optimizer field '" + key + "'");
        cfg.optimizer.step_size = detail::get_field(o, "step_size", cfg.optimizer.step_size);
        cfg.optimizer.beta1 = detail::get_field(o, "beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = detail::get_field(o, "beta2", cfg.optimizer.beta2);
        cfg.optimizer.epsilon = detail::get_field(o, "epsilon", cfg.optimizer.epsilon);
        cfg.optimizer.max_iters = detail::get_field(o, "max_iters", cfg.optimizer.max_iters);
        cfg.optimizer.minibatch = detail::get_field(o, "minibatch", cfg.optimizer.minibatch);
        cfg.optimizer.tol_rel = detail::get_field(o, "tol_rel", cfg.optimizer.tol_rel);
        cfg.optimizer.restarts = detail::get_field(o, "restarts", cfg.optimizer.restarts);
        cfg.optimizer.warm_start = detail::get_field(o, "warm_start", cfg.optimizer.warm_start);
    }
    cfg.sweep_m = detail::get_field(j, "sweep", cfg.sweep_m);
    cfg.sweep_reps = detail::get_field(j, "reps", cfg.sweep_reps);
    return cfg;
}

inline void validate_run_config(const RunConfig& cfg) {
    validate_model(cfg.model());  // throws ConfigError naming the model field
    if (cfg.degree < 0) throw ConfigError("config field 'degree' must be >= 0");
    if (cfg.train_paths < 1) throw ConfigError("config field 'train_paths' must be >= 1");
    if (cfg.eval_paths < 1) throw ConfigError("config field 'eval_paths' must be >= 1");
    if (cfg.threads < 0) throw ConfigError("config field 'threads' must be >= 0");
    validate_optimizer(cfg.optimizer);
    if (!cfg.sweep_m.empty()) {
        for (std::size_t v : cfg.sweep_m)
            if (v < 1) throw ConfigError("config field 'sweep' entries must be >= 1");
        for (std::size_t i = 1; i < cfg.sweep_m.size(); ++i) {
            if (cfg.sweep_m[i] == cfg.sweep_m[i - 1])
                throw ConfigError("config field 'sweep' has duplicate entries");
            if (cfg.sweep_m[i] < cfg.sweep_m[i - 1])
                throw ConfigError("config field 'sweep' must be increasing");
        }
        if (cfg.sweep_reps < 1) throw ConfigError("config field 'reps' must be >= 1");
    }
}

/// Fully materialized config, the document written next to results.
inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["model"] = {{"dim", cfg.dim},           {"spot", cfg.spot},
                  {"strike", cfg.strike},     {"rate", cfg.rate},
                  {"dividend", cfg.dividend}, {"vol", cfg.vol},
                  {"maturity", cfg.maturity}, {"num_dates", cfg.num_dates}};
    j["method"] = to_string(cfg.method);
    j["link"] = to_string(cfg.link);
    j["degree"] = cfg.degree;
    j["train_paths"] = cfg.train_paths;
    j["eval_paths"] = cfg.eval_paths;
    j["seed_train"] = cfg.seed_train;
    j["seed_eval"] = cfg.seed_eval;
    j["seed_opt"] = cfg.optimizer.seed;
    j["eval_mode"] = to_string(cfg.eval_mode);
    j["optimizer"] = {{"step_size", cfg.optimizer.step_size},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"epsilon", cfg.optimizer.epsilon},
                      {"max_iters", cfg.optimizer.max_iters},
                      {"minibatch", cfg.optimizer.minibatch},
                      {"tol_rel", cfg.optimizer.tol_rel},
                      {"restarts", cfg.optimizer.restarts},
                      {"warm_start", cfg.optimizer.warm_start}};
    j["output"] = cfg.output_dir;
    j["threads"] = cfg.threads;
    if (!cfg.sweep_m.empty()) {
        j["sweep"] = cfg.sweep_m;
        j["reps"] = cfg.sweep_reps;
    }
    return j;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

/// Deterministic run identity: a hash of everything that affects the numbers
/// (output directory and worker count excluded).
inline std::string make_run_id(const RunConfig& cfg) {
    nlohmann::json j = run_config_to_json(cfg);
    j.erase("output");
    j.erase("threads");
    Fnv1a h;
    h.feed(j.dump());
    return h.hex();
}

// ---------------------------------------------------------------------------
// Price runs
// ---------------------------------------------------------------------------

struct RunOutput {
    EstimateReport report;
    RunMeta meta;
    Policy policy;
    std::vector<FitReport> fit_reports;  // one per date (backward) or single (forward)
    double train_value = 0.0;            // in-sample randomized value, diagnostic
};

/// Fit on M training paths, re-simulate N fresh paths, write artifacts.
/// Artifacts: resolved_config.json, policy.json, fit_reports.json, results.csv.
inline EstimateReport run_price(const RunConfig& cfg, RunOutput* details = nullptr,
                                std::ostream& log = std::cout) {
    validate_run_config(cfg);
    if (cfg.seed_train == cfg.seed_eval)
        std::cerr << "warning: seed_eval equals seed_train; the estimate will be in-sample"
                  << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    const MarketModel model = cfg.model();

    PathSet train = simulate_paths(model, cfg.train_paths, cfg.seed_train, cfg.threads);
    PayoffSpec pay{PayoffKind::max_call, model.strike, model.rate};
    fill_payoffs(train, pay, model, cfg.threads);

    Policy fitted;
    std::vector<FitReport> reports;
    if (cfg.method == FitMethod::backward) {
        const Policy tmpl = make_per_date_policy(train, model, cfg.link, cfg.degree);
        auto [pol, reps] = backward_fit(train, tmpl, cfg.optimizer, cfg.threads);
        fitted = std::move(pol);
        reports = std::move(reps);
    } else {
        const Policy tmpl = make_time_dependent_policy(train, model, cfg.link, cfg.degree);
        auto [pol, rep] = forward_fit(train, tmpl, cfg.optimizer, cfg.threads);
        fitted = std::move(pol);
        reports.push_back(std::move(rep));
    }
    const double train_value = randomized_value(train, fitted, cfg.threads);

    EstimateReport report = lower_bound_estimate(model, fitted, cfg.eval_paths, cfg.seed_eval,
                                                 cfg.eval_mode, cfg.threads);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunMeta meta;
    meta.run_id = make_run_id(cfg);
    meta.link = cfg.link;
    meta.degree = cfg.degree;
    meta.train_paths = cfg.train_paths;
    meta.wall_time_s = wall;

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream out(fs::path(cfg.output_dir) / "resolved_config.json");
        out << run_config_to_json(cfg).dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(cfg.output_dir) / "policy.json");
        out << policy_to_json(fitted).dump(2) << "\n";
    }
    {
        nlohmann::json fr = nlohmann::json::array();
        for (const auto& r : reports) fr.push_back(fit_report_to_json(r));
        std::ofstream out(fs::path(cfg.output_dir) / "fit_reports.json");
        out << fr.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(cfg.output_dir) / "results.csv");
        out << csv_header() << "\n" << summarize(report, meta) << "\n";
    }
    log << "method=" << to_string(cfg.method) << "  train value=" << fmt17(train_value).substr(0, 8)
        << "  " << console_summary(report, meta) << "\n";

    if (details != nullptr) {
        details->report = report;
        details->meta = meta;
        details->policy = std::move(fitted);
        details->fit_reports = std::move(reports);
        details->train_value = train_value;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Convergence sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    std::size_t train_paths = 0;
    int rep = 0;
    double estimate = 0.0;
    double std_error = 0.0;
    double gap = 0.0;  // |estimate - reference estimate|
};

struct SweepSummaryRow {
    std::size_t train_paths = 0;
    double mean_gap = 0.0;
    double sd_gap = 0.0;
};

struct SweepResult {
    double reference_estimate = 0.0;
    std::size_t reference_m = 0;
    std::vector<SweepRow> rows;
    std::vector<SweepSummaryRow> summary;
};

/// Measures estimate quality as the training set grows. The largest M in the
/// list is fitted once with the base seeds and acts as the reference; every
/// smaller M is refit reps times with shifted train/optimizer seeds, all
/// evaluated on one shared evaluation path set. Writes sweep.csv (rep rows)
/// and sweep_summary.csv (mean/sd of the gap per M).
inline SweepResult run_convergence_sweep(const RunConfig& cfg, std::ostream& log = std::cout) {
    validate_run_config(cfg);
    if (cfg.sweep_m.empty()) throw ConfigError("config field 'sweep' is required for a sweep");
    const MarketModel model = cfg.model();
    const PayoffSpec pay{PayoffKind::max_call, model.strike, model.rate};

    auto fit_and_eval = [&](std::size_t m_paths, std::uint64_t seed_train,
                            std::uint64_t seed_opt) {
        PathSet train = simulate_paths(model, m_paths, seed_train, cfg.threads);
        fill_payoffs(train, pay, model, cfg.threads);
        OptimizerConfig opt = cfg.optimizer;
        opt.seed = seed_opt;
        Policy fitted;
        if (cfg.method == FitMethod::backward) {
            const Policy tmpl = make_per_date_policy(train, model, cfg.link, cfg.degree);
            fitted = backward_fit(train, tmpl, opt, cfg.threads).first;
        } else {
            const Policy tmpl = make_time_dependent_policy(train, model, cfg.link, cfg.degree);
            fitted = forward_fit(train, tmpl, opt, cfg.threads).first;
        }
        return lower_bound_estimate(model, fitted, cfg.eval_paths, cfg.seed_eval, cfg.eval_mode,
                                    cfg.threads);
    };

    SweepResult result;
    result.reference_m = cfg.sweep_m.back();
    const EstimateReport ref =
        fit_and_eval(result.reference_m, cfg.seed_train, cfg.optimizer.seed);
    result.reference_estimate = ref.estimate;
    log << "sweep reference: M=" << result.reference_m << " estimate=" << ref.estimate << "\n";

    for (std::size_t mi = 0; mi + 1 < cfg.sweep_m.size() || cfg.sweep_m.size() == 1; ++mi) {
        const std::size_t m_paths = cfg.sweep_m[mi];
        double gsum = 0.0, gsumsq = 0.0;
        const bool degenerate = cfg.sweep_m.size() == 1;
        for (int rep = 0; rep < cfg.sweep_reps; ++rep) {
            EstimateReport er = degenerate && rep == 0
                                    ? ref
                                    : fit_and_eval(m_paths,
                                                   cfg.seed_train + 7919ull * (rep + 1),
                                                   cfg.optimizer.seed + 104729ull * (rep + 1));
            SweepRow row;
            row.train_paths = m_paths;
            row.rep = rep;
            row.estimate = er.estimate;
            row.std_error = er.std_error;
            row.gap = std::fabs(er.estimate - result.reference_estimate);
            result.rows.push_back(row);
            gsum += row.gap;
            gsumsq += row.gap * row.gap;
        }
        const double n = cfg.sweep_reps;
        SweepSummaryRow srow;
        srow.train_paths = m_paths;
        srow.mean_gap = gsum / n;
        srow.sd_gap = cfg.sweep_reps > 1
                          ? std::sqrt(std::max(0.0, (gsumsq - gsum * gsum / n) / (n - 1.0)))
                          : 0.0;
        result.summary.push_back(srow);
        log << "sweep M=" << m_paths << " mean gap=" << srow.mean_gap << " sd=" << srow.sd_gap
            << "\n";
        if (degenerate) break;
    }

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream out(fs::path(cfg.output_dir) / "resolved_config.json");
        out << run_config_to_json(cfg).dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(cfg.output_dir) / "sweep.csv");
        out << "M,rep,estimate,std_error,gap\n";
        for (const auto& r : result.rows)
            out << r.train_paths << ',' << r.rep << ',' << fmt17(r.estimate) << ','
                << fmt17(r.std_error) << ',' << fmt17(r.gap) << "\n";
    }
    {
        std::ofstream out(fs::path(cfg.output_dir) / "sweep_summary.csv");
        out << "M,mean_gap,sd_gap\n";
        for (const auto& s : result.summary)
            out << s.train_paths << ',' << fmt17(s.mean_gap) << ',' << fmt17(s.sd_gap) << "\n";
    }
    return result;
}

} // namespace rstop
