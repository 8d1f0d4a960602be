#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstop/errors.hpp"
#include "rstop/market.hpp"
#include "rstop/parallel.hpp"
#include "rstop/policy.hpp"
#include "rstop/rng.hpp"
#include "rstop/stopping.hpp"

namespace rstop {

// ---------------------------------------------------------------------------
// Optimizer configuration and reporting
// ---------------------------------------------------------------------------

enum class OptMethod { adam };

struct OptimizerConfig {
    OptMethod method = OptMethod::adam;
    double step_size = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int max_iters = 300;     // per date for the backward fit
    int minibatch = 0;       // 0 = full batch
    double tol_rel = 1e-7;   // relative objective change over a 10-iteration window
    int restarts = 1;
    std::uint64_t seed = 0;
    bool warm_start = true;  // backward fit: seed each date from the next date's fit
};

inline OptimizerConfig default_backward_optimizer() { return {}; }

inline OptimizerConfig default_forward_optimizer() {
    OptimizerConfig cfg;
    cfg.max_iters = 1000;
    return cfg;
}

inline void validate_optimizer(const OptimizerConfig& cfg) {
    if (!(cfg.step_size > 0.0)) throw ConfigError("optimizer: step_size must be > 0");
    if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0)) throw ConfigError("optimizer: beta1 must be in (0,1)");
    if (!(cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) throw ConfigError("optimizer: beta2 must be in (0,1)");
    if (!(cfg.epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
    if (cfg.max_iters < 1) throw ConfigError("optimizer: max_iters must be >= 1");
    if (cfg.minibatch < 0) throw ConfigError("optimizer: minibatch must be >= 0");
    if (!(cfg.tol_rel >= 0.0)) throw ConfigError("optimizer: tol_rel must be >= 0");
    if (cfg.restarts < 1) throw ConfigError("optimizer: restarts must be >= 1");
}

struct FitReport {
    std::vector<double> objective_trace;  // winning restart, one entry per iteration
    double final_objective = 0.0;         // max over restarts of the best iterate
    int iterations_used = 0;
    int restart_index_selected = 0;
    double wall_time = 0.0;               // seconds
};

inline nlohmann::json fit_report_to_json(const FitReport& r) {
    return {{"objective_trace", r.objective_trace},
            {"final_objective", r.final_objective},
            {"iterations_used", r.iterations_used},
            {"restart_index_selected", r.restart_index_selected},
            {"wall_time", r.wall_time}};
}

// ---------------------------------------------------------------------------
// Adam update (ascent)
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> params;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
};

inline AdamState make_adam_state(std::span<const double> init) {
    AdamState st;
    st.params.assign(init.begin(), init.end());
    st.m.assign(init.size(), 0.0);
    st.v.assign(init.size(), 0.0);
    return st;
}

/// One bias-corrected ascent step; iter is 1-based. Deterministic.
inline void adam_step(AdamState& st, std::span<const double> grad, int iter,
                      const OptimizerConfig& cfg) {
    if (grad.size() != st.params.size())
        throw std::invalid_argument("adam_step: gradient dimension mismatch");
    // Validate before touching the state so a bad step leaves it intact.
    for (const double g : grad)
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient component");
    const double bc1 = 1.0 - std::pow(cfg.beta1, iter);
    const double bc2 = 1.0 - std::pow(cfg.beta2, iter);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        st.params[i] += cfg.step_size * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

// ---------------------------------------------------------------------------
// The two fitting objectives
// ---------------------------------------------------------------------------

/// Date-k backward step: maximize L(theta) = sum_m xi_m h(theta . phi_m).
/// xi and the feature rows are frozen, so every optimizer iteration is O(M).
struct BackwardStep {
    std::size_t num_paths = 0;
    std::size_t num_features = 0;
    LinkFunction link = LinkFunction::gumbel;
    std::vector<double> features;  // [M x n]
    std::vector<double> xi;        // [M]
    int threads = 0;

    double path_score(std::size_t m, std::span<const double> theta) const noexcept {
        const double* phi = features.data() + m * num_features;
        double acc = 0.0;
        for (std::size_t i = 0; i < num_features; ++i) acc += theta[i] * phi[i];
        return acc;
    }

    double value(std::span<const double> theta) const {
        return parallel_sum(num_paths, threads, [&](std::size_t m) {
            return xi[m] * link_value(link, path_score(m, theta));
        });
    }

    /// Returns the objective; writes the analytic gradient sum_m xi_m h' phi_m.
    double value_grad(std::span<const double> theta, std::vector<double>& grad) const {
        std::vector<double> acc = parallel_sum_vec(
            num_paths, num_features + 1, threads, [&](std::size_t m, double* out) {
                const double* phi = features.data() + m * num_features;
                const auto [h, slope] = link_value_slope(link, path_score(m, theta));
                const double c = xi[m] * slope;
                for (std::size_t i = 0; i < num_features; ++i) out[i] += c * phi[i];
                out[num_features] += xi[m] * h;
            });
        grad.assign(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(num_features));
        return acc[num_features];
    }

    /// Minibatch gradient over the index subset, rescaled to full-batch size.
    double value_grad_subset(std::span<const double> theta,
                             std::span<const std::uint32_t> idx,
                             std::vector<double>& grad) const {
        grad.assign(num_features, 0.0);
        double obj = 0.0;
        for (std::uint32_t m : idx) {
            const double* phi = features.data() + m * num_features;
            const auto [h, slope] = link_value_slope(link, path_score(m, theta));
            const double c = xi[m] * slope;
            for (std::size_t i = 0; i < num_features; ++i) grad[i] += c * phi[i];
            obj += xi[m] * h;
        }
        const double scale = static_cast<double>(num_paths) / static_cast<double>(idx.size());
        for (double& g : grad) g *= scale;
        return obj * scale;
    }
};

/// Builds the frozen date-j step from the running tail values V (length M,
/// currently holding V_{j+1} on every path).
inline BackwardStep make_backward_step(const PathSet& paths, const Policy& policy, int j,
                                       const std::vector<double>& tail, int threads) {
    BackwardStep step;
    step.num_paths = paths.num_paths;
    step.num_features = policy.features.num_features();
    step.link = policy.link;
    step.threads = threads;
    step.features.resize(paths.num_paths * step.num_features);
    step.xi.resize(paths.num_paths);
    parallel_blocks(paths.num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t m = lo; m < hi; ++m) {
            policy_features(policy, j, paths.state_at(m, j),
                            paths.dates[static_cast<std::size_t>(j)],
                            step.features.data() + m * step.num_features);
            step.xi[m] = paths.payoff_at(m, j) - tail[m];
        }
    });
    return step;
}

/// Forward objective: maximize the empirical randomized value
/// P(theta) = (1/M) sum_m sum_j Z_j h_j prod_{l<j}(1 - h_l) over one shared
/// time-dependent coefficient vector. The gradient uses the product-rule form
/// s_j (Z_j - V_{j+1}) h'_j phi_j, which never divides by h or (1-h).
struct ForwardProblem {
    std::size_t num_paths = 0;
    int num_dates = 0;
    std::size_t num_features = 0;
    LinkFunction link = LinkFunction::gumbel;
    const PathSet* paths = nullptr;
    std::vector<double> features;  // [M x J x n], path-major
    int threads = 0;

    static constexpr int kMaxDates = 128;

    void path_value_grad(std::size_t m, std::span<const double> theta, double* grad,
                         double& obj) const noexcept {
        const int J = num_dates;
        double h[kMaxDates], w[kMaxDates], v[kMaxDates + 1];
        const double* base = features.data() + m * static_cast<std::size_t>(J) * num_features;
        for (int j = 0; j < J; ++j) {
            const double* phi = base + static_cast<std::size_t>(j) * num_features;
            double score = 0.0;
            for (std::size_t i = 0; i < num_features; ++i) score += theta[i] * phi[i];
            const auto hs = link_value_slope(link, score);
            h[j] = hs.first;
            w[j] = hs.second;
        }
        v[J] = paths->payoff_at(m, J);
        for (int k = J - 1; k >= 0; --k)
            v[k] = h[k] * paths->payoff_at(m, k) + (1.0 - h[k]) * v[k + 1];
        obj += v[0];
        if (grad != nullptr) {
            double s = 1.0;  // survival prod_{l<j}(1-h_l)
            for (int j = 0; j < J; ++j) {
                const double c = s * (paths->payoff_at(m, j) - v[j + 1]) * w[j];
                const double* phi = base + static_cast<std::size_t>(j) * num_features;
                for (std::size_t i = 0; i < num_features; ++i) grad[i] += c * phi[i];
                s *= 1.0 - h[j];
            }
        }
    }

    double value(std::span<const double> theta) const {
        const double total = parallel_sum(num_paths, threads, [&](std::size_t m) {
            double obj = 0.0;
            path_value_grad(m, theta, nullptr, obj);
            return obj;
        });
        return total / static_cast<double>(num_paths);
    }

    double value_grad(std::span<const double> theta, std::vector<double>& grad) const {
        std::vector<double> acc = parallel_sum_vec(
            num_paths, num_features + 1, threads, [&](std::size_t m, double* out) {
                path_value_grad(m, theta, out, out[num_features]);
            });
        const double inv = 1.0 / static_cast<double>(num_paths);
        grad.assign(num_features, 0.0);
        for (std::size_t i = 0; i < num_features; ++i) grad[i] = acc[i] * inv;
        return acc[num_features] * inv;
    }

    double value_grad_subset(std::span<const double> theta,
                             std::span<const std::uint32_t> idx,
                             std::vector<double>& grad) const {
        grad.assign(num_features, 0.0);
        double obj = 0.0;
        for (std::uint32_t m : idx) path_value_grad(m, theta, grad.data(), obj);
        const double inv = 1.0 / static_cast<double>(idx.size());
        for (double& g : grad) g *= inv;
        return obj * inv;
    }
};

inline ForwardProblem make_forward_problem(const PathSet& paths, const Policy& policy,
                                           int threads) {
    detail::check_compatible(paths, policy);
    if (paths.num_dates > ForwardProblem::kMaxDates)
        throw std::invalid_argument("forward fit supports at most 128 dates");
    ForwardProblem prob;
    prob.num_paths = paths.num_paths;
    prob.num_dates = paths.num_dates;
    prob.num_features = policy.features.num_features();
    prob.link = policy.link;
    prob.paths = &paths;
    prob.threads = threads;
    prob.features.resize(paths.num_paths * static_cast<std::size_t>(paths.num_dates) *
                         prob.num_features);
    parallel_blocks(paths.num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t m = lo; m < hi; ++m)
            for (int j = 0; j < paths.num_dates; ++j)
                policy_features(policy, j, paths.state_at(m, j),
                                paths.dates[static_cast<std::size_t>(j)],
                                prob.features.data() +
                                    (m * static_cast<std::size_t>(paths.num_dates) +
                                     static_cast<std::size_t>(j)) * prob.num_features);
    });
    return prob;
}

// ---------------------------------------------------------------------------
// Shared Adam driver
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr int kStopWindow = 10;

struct RestartResult {
    std::vector<double> best_theta;
    double best_objective = 0.0;
    std::vector<double> trace;
    int iterations = 0;
    bool aborted = false;
};

/// Runs one restart. With minibatch > 0 an "iteration" is one epoch (a full
/// shuffled pass); the trace and stopping rule always use full-batch values.
/// The returned iterate is the best full-batch objective seen, including the
/// initial point, so the fit never ends below its initialization.
template <class Problem>
RestartResult run_adam(const Problem& prob, std::span<const double> theta0,
                       const OptimizerConfig& cfg, std::uint64_t shuffle_salt) {
    RestartResult res;
    AdamState st = make_adam_state(theta0);
    res.best_theta = st.params;
    res.best_objective = -std::numeric_limits<double>::infinity();
    std::vector<double> grad;
    std::vector<std::uint32_t> order;
    const bool minibatch = cfg.minibatch > 0 &&
                           static_cast<std::size_t>(cfg.minibatch) < prob.num_paths;
    if (minibatch) {
        order.resize(prob.num_paths);
        std::iota(order.begin(), order.end(), 0u);
    }
    int adam_iter = 0;
    try {
        if (minibatch) {
            // Score the initial point up front; the epoch loop below only
            // evaluates after stepping.
            const double obj0 = prob.value(st.params);
            if (!std::isfinite(obj0)) throw NumericError("objective became non-finite");
            res.trace.push_back(obj0);
            res.best_objective = obj0;
        }
        for (int it = 0; it < cfg.max_iters; ++it) {
            double obj;
            if (minibatch) {
                PathStream shuffle(cfg.seed ^ shuffle_salt, static_cast<std::uint64_t>(it));
                for (std::size_t i = prob.num_paths - 1; i > 0; --i) {
                    const std::size_t k = static_cast<std::size_t>(
                        (static_cast<unsigned __int128>(shuffle.next_u64()) * (i + 1)) >> 64);
                    std::swap(order[i], order[k]);
                }
                const std::size_t B = static_cast<std::size_t>(cfg.minibatch);
                for (std::size_t lo = 0; lo < prob.num_paths; lo += B) {
                    const std::size_t hi = std::min(lo + B, prob.num_paths);
                    prob.value_grad_subset(st.params,
                                           std::span<const std::uint32_t>(order.data() + lo, hi - lo),
                                           grad);
                    adam_step(st, grad, ++adam_iter, cfg);
                }
                obj = prob.value(st.params);  // full-batch check after the epoch
                if (!std::isfinite(obj)) throw NumericError("objective became non-finite");
                res.trace.push_back(obj);
                if (obj > res.best_objective) {
                    res.best_objective = obj;
                    res.best_theta = st.params;
                }
            } else {
                obj = prob.value_grad(st.params, grad);
                if (!std::isfinite(obj)) throw NumericError("objective became non-finite");
                res.trace.push_back(obj);
                if (obj > res.best_objective) {
                    res.best_objective = obj;
                    res.best_theta = st.params;
                }
                adam_step(st, grad, ++adam_iter, cfg);
            }
            res.iterations = it + 1;
            const std::size_t n = res.trace.size();
            if (n > static_cast<std::size_t>(kStopWindow)) {
                const double prev = res.trace[n - 1 - kStopWindow];
                if (std::fabs(obj - prev) <= cfg.tol_rel * std::max(1.0, std::fabs(prev)))
                    break;
            }
        }
        if (!minibatch) {
            // The last step produced a theta the loop never scored.
            const double obj = prob.value(st.params);
            if (std::isfinite(obj)) {
                res.trace.push_back(obj);
                if (obj > res.best_objective) {
                    res.best_objective = obj;
                    res.best_theta = st.params;
                }
            }
        }
    } catch (const NumericError&) {
        res.aborted = true;
    }
    return res;
}

/// Perturbs a base init with centered uniform noise of half-width 0.1;
/// restart 0 is the unperturbed base.
inline std::vector<double> restart_init(std::span<const double> base, int restart,
                                        std::uint64_t seed, std::uint64_t salt) {
    std::vector<double> theta(base.begin(), base.end());
    if (restart > 0) {
        PathStream noise(seed ^ salt, static_cast<std::uint64_t>(restart));
        for (double& t : theta) t += 0.2 * (noise.next_uniform() - 0.5);
    }
    return theta;
}

template <class Problem>
RestartResult fit_with_restarts(const Problem& prob, std::span<const double> base_init,
                                const OptimizerConfig& cfg, std::uint64_t salt,
                                int& restart_selected) {
    RestartResult best;
    best.aborted = true;
    restart_selected = 0;
    for (int rs = 0; rs < cfg.restarts; ++rs) {
        const std::vector<double> theta0 = restart_init(base_init, rs, cfg.seed, salt);
        RestartResult r = run_adam(prob, theta0, cfg,
                                   salt ^ 0x6b79d2c1u ^ (static_cast<std::uint64_t>(rs) << 32));
        if (r.aborted) continue;
        if (best.aborted || r.best_objective > best.best_objective) {
            best = std::move(r);
            restart_selected = rs;
        }
    }
    return best;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Backward fit
// ---------------------------------------------------------------------------

/// Fits theta_{J-1}..theta_0 one date at a time against frozen tail values.
/// Each date's weights xi are computed once; Adam then maximizes the linear
/// functional sum xi h. With warm_start, date j initializes from the fitted
/// date j+1 coefficients (the exercise boundary moves slowly between dates),
/// which is also what restart perturbations are centered on.
inline std::pair<Policy, std::vector<FitReport>> backward_fit(const PathSet& paths,
                                                              const Policy& policy_template,
                                                              const OptimizerConfig& opt,
                                                              int threads = 0) {
    validate_optimizer(opt);
    detail::check_compatible(paths, policy_template);
    if (policy_template.mode != PolicyMode::per_date)
        throw std::invalid_argument("backward_fit needs a per_date policy template");
    Policy fitted = policy_template;
    const int J = paths.num_dates;
    const std::size_t n = fitted.features.num_features();
    std::vector<FitReport> reports(static_cast<std::size_t>(J));

    // Running tail values, initially V_J = Z_J.
    std::vector<double> tail(paths.num_paths);
    for (std::size_t m = 0; m < paths.num_paths; ++m) tail[m] = paths.payoff_at(m, J);

    std::vector<double> base(n, 0.0);
    for (int j = J - 1; j >= 0; --j) {
        const auto t0 = std::chrono::steady_clock::now();
        const BackwardStep step = make_backward_step(paths, fitted, j, tail, threads);
        if (opt.warm_start && j < J - 1)
            base = fitted.coefficients[static_cast<std::size_t>(j) + 1];
        else
            std::fill(base.begin(), base.end(), 0.0);

        int selected = 0;
        detail::RestartResult r = detail::fit_with_restarts(
            step, base, opt, 0x1000003ull * static_cast<std::uint64_t>(j + 1), selected);
        if (r.aborted)
            throw NumericError("backward_fit: every restart diverged at date " + std::to_string(j));
        fitted.coefficients[static_cast<std::size_t>(j)] = r.best_theta;

        FitReport& rep = reports[static_cast<std::size_t>(j)];
        rep.objective_trace = std::move(r.trace);
        rep.final_objective = r.best_objective;
        rep.iterations_used = r.iterations;
        rep.restart_index_selected = selected;
        rep.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        // Fold the fitted date into the tail: V_j = h Z_j + (1-h) V_{j+1}.
        const auto& theta = fitted.coefficients[static_cast<std::size_t>(j)];
        parallel_blocks(paths.num_paths, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
            for (std::size_t m = lo; m < hi; ++m) {
                const double h = link_value(step.link, step.path_score(m, theta));
                tail[m] = h * paths.payoff_at(m, j) + (1.0 - h) * tail[m];
            }
        });
    }
    return {std::move(fitted), std::move(reports)};
}

// ---------------------------------------------------------------------------
// Forward fit
// ---------------------------------------------------------------------------

/// Jointly fits the single time-dependent coefficient vector by maximizing
/// the empirical randomized value over the whole horizon.
inline std::pair<Policy, FitReport> forward_fit(const PathSet& paths,
                                                const Policy& policy_template,
                                                const OptimizerConfig& opt,
                                                int threads = 0) {
    validate_optimizer(opt);
    if (policy_template.mode != PolicyMode::time_dependent)
        throw std::invalid_argument("forward_fit needs a time_dependent policy template");
    const auto t0 = std::chrono::steady_clock::now();
    const ForwardProblem prob = make_forward_problem(paths, policy_template, threads);
    Policy fitted = policy_template;
    const std::vector<double> base(prob.num_features, 0.0);

    int selected = 0;
    detail::RestartResult r =
        detail::fit_with_restarts(prob, base, opt, 0x2000029ull, selected);
    if (r.aborted) throw NumericError("forward_fit: every restart diverged");
    fitted.coefficients[0] = r.best_theta;

    FitReport rep;
    rep.objective_trace = std::move(r.trace);
    rep.final_objective = r.best_objective;
    rep.iterations_used = r.iterations;
    rep.restart_index_selected = selected;
    rep.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(fitted), std::move(rep)};
}

} // namespace rstop
