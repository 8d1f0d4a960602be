#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstop/errors.hpp"
#include "rstop/fingerprint.hpp"
#include "rstop/market.hpp"

namespace rstop {

// ---------------------------------------------------------------------------
// Link functions
// ---------------------------------------------------------------------------

enum class LinkFunction { logistic, gumbel };
enum class PolicyMode { per_date, time_dependent };

/// Scores are clamped to this window before the link; Gumbel's exp(exp(p))
/// overflows beyond it while both links are already within 1e-13 of {0,1}.
inline constexpr double kScoreClamp = 30.0;

inline double clamp_score(double p) noexcept {
    return std::clamp(p, -kScoreClamp, kScoreClamp);
}

/// h = link(p). Logistic uses the branch form so e^p is never taken at p > 0.
inline double link_value(LinkFunction link, double p) noexcept {
    p = clamp_score(p);
    if (link == LinkFunction::logistic) {
        if (p >= 0.0) return 1.0 / (1.0 + std::exp(-p));
        const double e = std::exp(p);
        return e / (1.0 + e);
    }
    return 1.0 - std::exp(-std::exp(p));
}

/// Returns {h, dh/dp}. Logistic slope h(1-h); Gumbel slope e^{p-e^p}.
inline std::pair<double, double> link_value_slope(LinkFunction link, double p) noexcept {
    p = clamp_score(p);
    if (link == LinkFunction::logistic) {
        const double h = link_value(LinkFunction::logistic, p);
        return {h, h * (1.0 - h)};
    }
    const double ep = std::exp(p);
    const double surv = std::exp(-ep);  // 1 - h
    return {1.0 - surv, surv * ep};
}

// ---------------------------------------------------------------------------
// Polynomial feature map
// ---------------------------------------------------------------------------

/// Affine per-variable standardization z = (x - shift) / scale applied before
/// monomial expansion. Frozen at fit time so re-simulation sees identical h.
struct Standardizer {
    std::vector<double> shift;
    std::vector<double> scale;  // strictly positive
};

/// Monomial basis of total degree <= g over num_vars standardized variables,
/// in graded lexicographic order with the constant first. Each non-constant
/// monomial stores the index of a one-step-smaller parent so evaluation is a
/// single multiply per monomial.
struct FeatureMap {
    int num_vars = 0;
    int degree = 0;
    std::vector<std::vector<int>> exponents;
    std::vector<Standardizer> standardizers;  // per exercise date, or one shared entry
    std::vector<int> parent;                  // parent monomial index (constant: -1)
    std::vector<int> parent_var;              // variable multiplied onto parent

    std::size_t num_features() const noexcept { return exponents.size(); }
};

/// Hard caps for the fixed evaluation buffers below.
inline constexpr int kMaxVars = 16;
inline constexpr std::size_t kMaxFeatures = 256;

namespace detail {

inline std::string u64_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline void enumerate_grlex(int num_vars, int degree,
                            std::vector<std::vector<int>>& out) {
    std::vector<int> cur(static_cast<std::size_t>(num_vars), 0);
    // Within a grade, exponent tuples descend lexicographically from the
    // first variable; grades ascend. Constant monomial comes out first.
    auto rec = [&](auto&& self, int var, int remaining) -> void {
        if (var == num_vars - 1) {
            cur[static_cast<std::size_t>(var)] = remaining;
            out.push_back(cur);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            cur[static_cast<std::size_t>(var)] = e;
            self(self, var + 1, remaining - e);
        }
    };
    for (int g = 0; g <= degree; ++g) rec(rec, 0, g);
}

inline void build_parent_chain(FeatureMap& fm) {
    std::map<std::vector<int>, int> index;
    for (std::size_t i = 0; i < fm.exponents.size(); ++i)
        index[fm.exponents[i]] = static_cast<int>(i);
    fm.parent.assign(fm.exponents.size(), -1);
    fm.parent_var.assign(fm.exponents.size(), -1);
    for (std::size_t i = 0; i < fm.exponents.size(); ++i) {
        const auto& alpha = fm.exponents[i];
        for (int v = 0; v < fm.num_vars; ++v) {
            if (alpha[static_cast<std::size_t>(v)] > 0) {
                std::vector<int> reduced = alpha;
                --reduced[static_cast<std::size_t>(v)];
                fm.parent[i] = index.at(reduced);
                fm.parent_var[i] = v;
                break;
            }
        }
    }
}

} // namespace detail

/// Basis with an identity standardizer; mainly for tests and fixtures.
inline FeatureMap make_monomial_basis(int num_vars, int degree) {
    if (num_vars < 1 || num_vars > kMaxVars)
        throw std::invalid_argument("feature map: num_vars must be in [1, 16]");
    if (degree < 0) throw std::invalid_argument("feature map: degree must be >= 0");
    FeatureMap fm;
    fm.num_vars = num_vars;
    fm.degree = degree;
    detail::enumerate_grlex(num_vars, degree, fm.exponents);
    if (fm.exponents.size() > kMaxFeatures)
        throw std::invalid_argument("feature map: monomial count exceeds 256");
    detail::build_parent_chain(fm);
    Standardizer s;
    s.shift.assign(static_cast<std::size_t>(num_vars), 0.0);
    s.scale.assign(static_cast<std::size_t>(num_vars), 1.0);
    fm.standardizers.push_back(std::move(s));
    return fm;
}

/// Fits a mean/std standardizer per raw variable from row-major samples.
/// Sample std is floored at 1e-12 so constant variables stay well-defined.
inline Standardizer fit_standardizer(int num_vars, std::span<const double> sample_rows) {
    if (sample_rows.empty() || sample_rows.size() % static_cast<std::size_t>(num_vars) != 0)
        throw std::invalid_argument("fit_standardizer: sample must be nonempty rows of num_vars");
    const std::size_t rows = sample_rows.size() / static_cast<std::size_t>(num_vars);
    Standardizer s;
    s.shift.assign(static_cast<std::size_t>(num_vars), 0.0);
    s.scale.assign(static_cast<std::size_t>(num_vars), 1.0);
    for (int v = 0; v < num_vars; ++v) {
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r)
            mean += sample_rows[r * static_cast<std::size_t>(num_vars) + static_cast<std::size_t>(v)];
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double dv =
                sample_rows[r * static_cast<std::size_t>(num_vars) + static_cast<std::size_t>(v)] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(rows);
        s.shift[static_cast<std::size_t>(v)] = mean;
        s.scale[static_cast<std::size_t>(v)] = std::max(std::sqrt(var), 1e-12);
    }
    return s;
}

/// Monomial basis plus a standardizer fitted on the given samples.
inline FeatureMap build_feature_map(int num_vars, int degree,
                                    std::span<const double> sample_rows) {
    FeatureMap fm = make_monomial_basis(num_vars, degree);
    fm.standardizers[0] = fit_standardizer(num_vars, sample_rows);
    return fm;
}

/// Evaluates all monomials at raw variables vars using the standardizer at
/// std_index. out must hold num_features() slots; out[0] = 1 always.
inline void eval_features(const FeatureMap& fm, std::size_t std_index,
                          std::span<const double> vars, double* out) {
    const Standardizer& s = fm.standardizers[std_index];
    double z[kMaxVars];
    for (int v = 0; v < fm.num_vars; ++v)
        z[v] = (vars[static_cast<std::size_t>(v)] - s.shift[static_cast<std::size_t>(v)]) /
               s.scale[static_cast<std::size_t>(v)];
    out[0] = 1.0;
    for (std::size_t i = 1; i < fm.exponents.size(); ++i)
        out[i] = out[fm.parent[i]] * z[fm.parent_var[i]];
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Exercise-probability family h_theta. per_date holds one coefficient vector
/// per date 0..J-1; time_dependent holds a single vector with time as the
/// last feature variable. h at date J is pinned to 1 structurally.
struct Policy {
    PolicyMode mode = PolicyMode::per_date;
    LinkFunction link = LinkFunction::gumbel;
    FeatureMap features;
    int num_dates = 0;                            // J
    std::vector<std::vector<double>> coefficients;
    std::uint64_t model_fp = 0;                   // market the standardizers were fit on

    const std::vector<double>& theta(int j) const noexcept {
        return mode == PolicyMode::per_date ? coefficients[static_cast<std::size_t>(j)]
                                            : coefficients[0];
    }
    std::vector<double>& theta(int j) noexcept {
        return mode == PolicyMode::per_date ? coefficients[static_cast<std::size_t>(j)]
                                            : coefficients[0];
    }
};

namespace detail {

inline void check_date(const Policy& p, int j) {
    if (j < 0 || j > p.num_dates)
        throw std::invalid_argument("policy: date index out of range");
}

} // namespace detail

/// Fills the feature row the policy uses at date j < J.
inline void policy_features(const Policy& p, int j, std::span<const double> state,
                            double t_j, double* out) {
    if (p.mode == PolicyMode::per_date) {
        eval_features(p.features, static_cast<std::size_t>(j), state, out);
    } else {
        double vars[kMaxVars];
        for (int v = 0; v + 1 < p.features.num_vars; ++v)
            vars[v] = state[static_cast<std::size_t>(v)];
        vars[p.features.num_vars - 1] = t_j;
        eval_features(p.features, 0,
                      {vars, static_cast<std::size_t>(p.features.num_vars)}, out);
    }
}

/// Score p = theta . phi(state, t) before the link, clamped.
inline double policy_score(const Policy& p, int j, std::span<const double> state, double t_j) {
    double phi[kMaxFeatures];
    policy_features(p, j, state, t_j, phi);
    const auto& th = p.theta(j);
    double acc = 0.0;
    for (std::size_t i = 0; i < th.size(); ++i) acc += th[i] * phi[i];
    return clamp_score(acc);
}

/// Exercise probability at date j; exactly 1 at the terminal date.
inline double eval_h(const Policy& p, int j, std::span<const double> state, double t_j) {
    detail::check_date(p, j);
    if (j == p.num_dates) return 1.0;
    return link_value(p.link, policy_score(p, j, state, t_j));
}

/// Returns h and dh/dtheta (= link slope times the feature row). The terminal
/// date has no parameters.
inline std::pair<double, std::vector<double>> eval_h_grad(const Policy& p, int j,
                                                          std::span<const double> state,
                                                          double t_j) {
    detail::check_date(p, j);
    if (j == p.num_dates)
        throw std::invalid_argument("eval_h_grad: terminal date has no parameters");
    const std::size_t n = p.features.num_features();
    std::vector<double> grad(n);
    double phi[kMaxFeatures];
    policy_features(p, j, state, t_j, phi);
    const auto& th = p.theta(j);
    double score = 0.0;
    for (std::size_t i = 0; i < n; ++i) score += th[i] * phi[i];
    const auto [h, slope] = link_value_slope(p.link, score);
    for (std::size_t i = 0; i < n; ++i) grad[i] = slope * phi[i];
    return {h, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Policy factories on simulated paths
// ---------------------------------------------------------------------------

/// Per-date policy template: one standardizer per exercise date, fitted on
/// the training states at that date; coefficients start at zero.
inline Policy make_per_date_policy(const PathSet& paths, const MarketModel& model,
                                   LinkFunction link, int degree) {
    Policy p;
    p.mode = PolicyMode::per_date;
    p.link = link;
    p.num_dates = paths.num_dates;
    p.model_fp = model_fingerprint(model);
    p.features = make_monomial_basis(paths.dim, degree);
    p.features.standardizers.clear();
    std::vector<double> col(paths.num_paths * static_cast<std::size_t>(paths.dim));
    for (int j = 0; j < paths.num_dates; ++j) {
        for (std::size_t m = 0; m < paths.num_paths; ++m) {
            const auto st = paths.state_at(m, j);
            for (int v = 0; v < paths.dim; ++v)
                col[m * static_cast<std::size_t>(paths.dim) + static_cast<std::size_t>(v)] = st[static_cast<std::size_t>(v)];
        }
        p.features.standardizers.push_back(fit_standardizer(paths.dim, col));
    }
    p.coefficients.assign(static_cast<std::size_t>(paths.num_dates),
                          std::vector<double>(p.features.num_features(), 0.0));
    return p;
}

/// Time-dependent policy template: variables are the d log-prices plus t_j,
/// standardized over all (path, date < J) rows pooled together.
inline Policy make_time_dependent_policy(const PathSet& paths, const MarketModel& model,
                                         LinkFunction link, int degree) {
    Policy p;
    p.mode = PolicyMode::time_dependent;
    p.link = link;
    p.num_dates = paths.num_dates;
    p.model_fp = model_fingerprint(model);
    const int nv = paths.dim + 1;
    p.features = make_monomial_basis(nv, degree);
    std::vector<double> rows;
    rows.reserve(paths.num_paths * static_cast<std::size_t>(paths.num_dates) *
                 static_cast<std::size_t>(nv));
    for (std::size_t m = 0; m < paths.num_paths; ++m)
        for (int j = 0; j < paths.num_dates; ++j) {
            const auto st = paths.state_at(m, j);
            for (int v = 0; v < paths.dim; ++v) rows.push_back(st[static_cast<std::size_t>(v)]);
            rows.push_back(paths.dates[static_cast<std::size_t>(j)]);
        }
    p.features.standardizers[0] = fit_standardizer(nv, rows);
    p.coefficients.assign(1, std::vector<double>(p.features.num_features(), 0.0));
    return p;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline const char* to_string(LinkFunction l) noexcept {
    return l == LinkFunction::logistic ? "logistic" : "gumbel";
}
inline const char* to_string(PolicyMode m) noexcept {
    return m == PolicyMode::per_date ? "per_date" : "time_dependent";
}

inline LinkFunction link_from_string(const std::string& s) {
    if (s == "logistic") return LinkFunction::logistic;
    if (s == "gumbel") return LinkFunction::gumbel;
    throw ConfigError("link: expected 'logistic' or 'gumbel', got '" + s + "'");
}
inline PolicyMode mode_from_string(const std::string& s) {
    if (s == "per_date") return PolicyMode::per_date;
    if (s == "time_dependent") return PolicyMode::time_dependent;
    throw ConfigError("mode: expected 'per_date' or 'time_dependent', got '" + s + "'");
}

inline nlohmann::json policy_to_json(const Policy& p) {
    nlohmann::json j;
    j["mode"] = to_string(p.mode);
    j["link"] = to_string(p.link);
    j["degree"] = p.features.degree;
    j["num_vars"] = p.features.num_vars;
    j["num_dates"] = p.num_dates;
    j["exponents"] = p.features.exponents;
    nlohmann::json stds = nlohmann::json::array();
    for (const auto& s : p.features.standardizers)
        stds.push_back({{"shift", s.shift}, {"scale", s.scale}});
    j["standardizer"] = std::move(stds);
    j["coefficients"] = p.coefficients;
    j["model_fingerprint"] = detail::u64_hex(p.model_fp);
    return j;
}

inline Policy policy_from_json(const nlohmann::json& j) {
    Policy p;
    try {
        p.mode = mode_from_string(j.at("mode").get<std::string>());
        p.link = link_from_string(j.at("link").get<std::string>());
        p.num_dates = j.at("num_dates").get<int>();
        p.features.num_vars = j.at("num_vars").get<int>();
        p.features.degree = j.at("degree").get<int>();
        p.features.exponents = j.at("exponents").get<std::vector<std::vector<int>>>();
        for (const auto& s : j.at("standardizer")) {
            Standardizer st;
            st.shift = s.at("shift").get<std::vector<double>>();
            st.scale = s.at("scale").get<std::vector<double>>();
            p.features.standardizers.push_back(std::move(st));
        }
        p.coefficients = j.at("coefficients").get<std::vector<std::vector<double>>>();
        p.model_fp = std::stoull(j.at("model_fingerprint").get<std::string>(), nullptr, 16);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("policy JSON: ") + e.what());
    }
    detail::build_parent_chain(p.features);
    return p;
}

/// Stable identity of a fitted policy: every number that affects evaluation.
inline std::uint64_t policy_fingerprint(const Policy& p) {
    Fnv1a h;
    h.feed(std::string_view(to_string(p.mode)));
    h.feed(std::string_view(to_string(p.link)));
    h.feed(p.features.num_vars);
    h.feed(p.features.degree);
    h.feed(p.num_dates);
    for (const auto& alpha : p.features.exponents)
        for (int e : alpha) h.feed(e);
    for (const auto& s : p.features.standardizers) {
        for (double v : s.shift) h.feed(v);
        for (double v : s.scale) h.feed(v);
    }
    for (const auto& th : p.coefficients)
        for (double v : th) h.feed(v);
    h.feed(p.model_fp);
    return h.value();
}

} // namespace rstop
