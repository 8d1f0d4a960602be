#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "rstop/errors.hpp"
#include "rstop/market.hpp"
#include "rstop/parallel.hpp"
#include "rstop/payoff.hpp"
#include "rstop/policy.hpp"

namespace rstop {

enum class EvalMode { expectation, sampled, hard_threshold };

inline const char* to_string(EvalMode m) noexcept {
    switch (m) {
        case EvalMode::expectation: return "expectation";
        case EvalMode::sampled: return "sampled";
        default: return "hard_threshold";
    }
}

inline EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "expectation") return EvalMode::expectation;
    if (s == "sampled") return EvalMode::sampled;
    if (s == "hard" || s == "hard_threshold") return EvalMode::hard_threshold;
    throw ConfigError("eval_mode: expected 'expectation', 'sampled' or 'hard', got '" + s + "'");
}

struct EstimateReport {
    double estimate = 0.0;
    double std_error = 0.0;
    double ci_low = 0.0;   // 95% normal approximation
    double ci_high = 0.0;
    std::size_t num_paths = 0;
    EvalMode evaluation_mode = EvalMode::expectation;
    std::uint64_t seed = 0;
    std::uint64_t policy_fingerprint = 0;
};

namespace detail {

/// Salt separating the exercise uniforms of sampled mode from the path noise,
/// so the simulated states are identical across evaluation modes.
inline constexpr std::uint64_t kExerciseSalt = 0xA5A5A5A55A5A5A5Aull;

inline EstimateReport finish_report(double sum, double sumsq, std::size_t n) {
    EstimateReport rep;
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    if (n > 1) {
        var = (sumsq - sum * sum / static_cast<double>(n)) / static_cast<double>(n - 1);
        var = std::max(var, 0.0);
    }
    rep.estimate = mean;
    rep.std_error = std::sqrt(var / static_cast<double>(n));
    rep.ci_low = mean - 1.96 * rep.std_error;
    rep.ci_high = mean + 1.96 * rep.std_error;
    rep.num_paths = n;
    return rep;
}

} // namespace detail

/// Low-biased re-simulation estimate of the policy value on fresh paths.
///
/// expectation mode averages the exact per-path randomized value V_0 (the
/// conditional expectation over exercise randomization); sampled mode draws
/// one uniform per (path, date) and stops at the first U < h; hard_threshold
/// stops at the first h >= 1/2. States are streamed per path, never stored.
inline EstimateReport lower_bound_estimate(const MarketModel& model, const Policy& policy,
                                           std::size_t num_paths, std::uint64_t seed,
                                           EvalMode mode, int threads = 0) {
    validate_model(model);
    if (num_paths < 1) throw std::invalid_argument("lower_bound_estimate: num_paths must be >= 1");
    const int want = policy.mode == PolicyMode::per_date ? model.dim : model.dim + 1;
    if (policy.features.num_vars != want || policy.num_dates != model.num_dates ||
        policy.model_fp != model_fingerprint(model))
        throw std::invalid_argument("lower_bound_estimate: policy does not match model");
    const int J = model.num_dates;
    const std::size_t d = static_cast<std::size_t>(model.dim);
    const std::size_t row = (static_cast<std::size_t>(J) + 1) * d;

    const std::size_t num_blocks = (num_paths + kBlockSize - 1) / kBlockSize;
    std::vector<double> partial(num_blocks * 2, 0.0);
    parallel_blocks(num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t b) {
        std::vector<double> states(row);
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t n = lo; n < hi; ++n) {
            detail::simulate_path_into(model, seed, n, states.data());
            double value = 0.0;
            if (mode == EvalMode::expectation) {
                double v = max_call_payoff({states.data() + static_cast<std::size_t>(J) * d, d},
                                           model, model.dates[static_cast<std::size_t>(J)]);
                for (int j = J - 1; j >= 0; --j) {
                    const std::span<const double> st{states.data() + static_cast<std::size_t>(j) * d, d};
                    const double t = model.dates[static_cast<std::size_t>(j)];
                    const double h = eval_h(policy, j, st, t);
                    v = h * max_call_payoff(st, model, t) + (1.0 - h) * v;
                }
                value = v;
            } else {
                PathStream exercise(seed ^ detail::kExerciseSalt, n);
                for (int j = 0; j <= J; ++j) {
                    const std::span<const double> st{states.data() + static_cast<std::size_t>(j) * d, d};
                    const double t = model.dates[static_cast<std::size_t>(j)];
                    const double h = eval_h(policy, j, st, t);
                    const bool stop = mode == EvalMode::sampled
                                          ? exercise.next_uniform() < h
                                          : h >= 0.5;
                    if (stop || j == J) {
                        value = max_call_payoff(st, model, t);
                        break;
                    }
                }
            }
            sum += value;
            sumsq += value * value;
        }
        partial[b * 2] = sum;
        partial[b * 2 + 1] = sumsq;
    });
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t b = 0; b < num_blocks; ++b) {
        sum += partial[b * 2];
        sumsq += partial[b * 2 + 1];
    }
    EstimateReport rep = detail::finish_report(sum, sumsq, num_paths);
    rep.evaluation_mode = mode;
    rep.seed = seed;
    rep.policy_fingerprint = policy_fingerprint(policy);
    return rep;
}

// ---------------------------------------------------------------------------
// Row rendering
// ---------------------------------------------------------------------------

/// Context carried next to an EstimateReport when rendering result rows.
struct RunMeta {
    std::string run_id;
    LinkFunction link = LinkFunction::gumbel;
    int degree = 0;
    std::size_t train_paths = 0;
    double wall_time_s = 0.0;
};

/// 17 significant digits: enough to round-trip any double exactly.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string csv_header() {
    return "run_id,mode,link,degree,M,N,seed,estimate,std_error,ci_low,ci_high,wall_time_s";
}

/// One CSV result row; numeric fields at 17 significant digits.
inline std::string summarize(const EstimateReport& rep, const RunMeta& meta) {
    std::ostringstream os;
    os << meta.run_id << ',' << to_string(rep.evaluation_mode) << ',' << to_string(meta.link)
       << ',' << meta.degree << ',' << meta.train_paths << ',' << rep.num_paths << ','
       << rep.seed << ',' << fmt17(rep.estimate) << ',' << fmt17(rep.std_error) << ','
       << fmt17(rep.ci_low) << ',' << fmt17(rep.ci_high) << ',' << fmt17(meta.wall_time_s);
    return os.str();
}

/// Inverse of summarize for the numeric round-trip checks.
inline std::pair<EstimateReport, RunMeta> parse_row(const std::string& row) {
    std::vector<std::string> f;
    std::string cur;
    for (char c : row) {
        if (c == ',') {
            f.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    f.push_back(cur);
    if (f.size() != 12) throw std::invalid_argument("parse_row: expected 12 fields");
    EstimateReport rep;
    RunMeta meta;
    meta.run_id = f[0];
    rep.evaluation_mode = eval_mode_from_string(f[1]);
    meta.link = link_from_string(f[2]);
    meta.degree = std::stoi(f[3]);
    meta.train_paths = std::stoull(f[4]);
    rep.num_paths = std::stoull(f[5]);
    rep.seed = std::stoull(f[6]);
    rep.estimate = std::stod(f[7]);
    rep.std_error = std::stod(f[8]);
    rep.ci_low = std::stod(f[9]);
    rep.ci_high = std::stod(f[10]);
    meta.wall_time_s = std::stod(f[11]);
    return {rep, meta};
}

/// Console rendering at 3 decimals.
inline std::string console_summary(const EstimateReport& rep, const RunMeta& meta) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s  link=%s g=%d M=%zu N=%zu  price=%.3f  se=%.3f  ci=[%.3f, %.3f]  (%.1fs)",
                  to_string(rep.evaluation_mode), to_string(meta.link), meta.degree,
                  meta.train_paths, rep.num_paths, rep.estimate, rep.std_error, rep.ci_low,
                  rep.ci_high, meta.wall_time_s);
    return buf;
}

} // namespace rstop
