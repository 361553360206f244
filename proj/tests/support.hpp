// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls into the library's numerics.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "droid/core.hpp"

namespace droid::testing {

inline double log_choose(int n, int k) { return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0); }

// Pr(pi > t) for pi ~ Beta(a, b) with integer a, b, via
// Pr(pi <= t) = Pr(Binomial(a + b - 1, t) >= a).
inline double beta_upper_tail_int(int a, int b, double t) {
    const int n = a + b - 1;
    if (t <= 0.0) return 1.0;
    if (t >= 1.0) return 0.0;
    double upper = 0.0;
    for (int k = 0; k <= a - 1; ++k) {
        upper += std::exp(log_choose(n, k) + k * std::log(t) + (n - k) * std::log1p(-t));
    }
    return upper;
}

// Exact minimiser of sum w_i (x_i - v_i)^2 over non-decreasing x restricted to
// the grid lo, lo + step, ..., hi. Dynamic programming over the grid with a
// running prefix minimum, so every monotone grid vector is searched.
inline std::vector<double> isotonic_grid_oracle(const std::vector<double>& v, const std::vector<double>& w, double lo,
                                                double hi, double step) {
    const int n = static_cast<int>(v.size());
    const int G = static_cast<int>(std::floor((hi - lo) / step + 0.5)) + 1;
    auto grid = [&](int g) { return lo + g * step; };
    std::vector<std::vector<double>> cost(n, std::vector<double>(G));
    std::vector<std::vector<int>> arg(n, std::vector<int>(G, 0));
    for (int g = 0; g < G; ++g) cost[0][g] = w[0] * (grid(g) - v[0]) * (grid(g) - v[0]);
    for (int i = 1; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_g = 0;
        for (int g = 0; g < G; ++g) {
            if (cost[i - 1][g] < best) {
                best = cost[i - 1][g];
                best_g = g;
            }
            cost[i][g] = best + w[i] * (grid(g) - v[i]) * (grid(g) - v[i]);
            arg[i][g] = best_g;
        }
    }
    int g = static_cast<int>(std::min_element(cost[n - 1].begin(), cost[n - 1].end()) - cost[n - 1].begin());
    std::vector<double> x(n);
    for (int i = n - 1; i >= 0; --i) {
        x[i] = grid(g);
        if (i > 0) g = arg[i][g];
    }
    return x;
}

inline double weighted_sse(const std::vector<double>& x, const std::vector<double>& v, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * (x[i] - v[i]) * (x[i] - v[i]);
    return s;
}

struct TrialCount {
    double effective_dose = 0.0;
    int n = 0;
    int events = 0;
};

// Posterior mean of alpha under logit p = alpha0 + alpha * d, alpha ~ Exp(rate),
// by midpoint quadrature on (0, upper].
inline double alpha_posterior_mean_quadrature(const std::vector<TrialCount>& data, double alpha0, double rate,
                                              double upper = 20.0, int nodes = 200000) {
    const double h = upper / nodes;
    std::vector<double> logf(nodes);
    double peak = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < nodes; ++i) {
        const double a = (i + 0.5) * h;
        double lf = -rate * a;
        for (const auto& c : data) {
            const double eta = alpha0 + a * c.effective_dose;
            // log expit and log(1 - expit) without cancellation
            const double log_p = -std::log1p(std::exp(-eta));
            const double log_q = -std::log1p(std::exp(eta));
            lf += c.events * log_p + (c.n - c.events) * log_q;
        }
        logf[i] = lf;
        peak = std::max(peak, lf);
    }
    double num = 0.0, den = 0.0;
    for (int i = 0; i < nodes; ++i) {
        const double wgt = std::exp(logf[i] - peak);
        num += (i + 0.5) * h * wgt;
        den += wgt;
    }
    return num / den;
}

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Mean of expit(alpha0 + alpha d) over the Exp(rate) prior.
inline double prior_mean_tox(double alpha0, double rate, double d, int nodes = 200000, double upper = 40.0) {
    const double h = upper / nodes;
    double s = 0.0;
    for (int i = 0; i < nodes; ++i) {
        const double a = (i + 0.5) * h;
        s += rate * std::exp(-rate * a) * expit(alpha0 + a * d) * h;
    }
    return s;
}

struct PatientSpec {
    int level = 1;
    int y_T = 0;
    double y_S = 0.0;
    std::optional<int> y_E = 0;
    int stage = 1;
};

// A trial state assembled directly from patient records, bypassing the
// allocation rules. Only for exercising pure functions.
inline TrialState state_with(const DesignConfig& cfg, const std::vector<PatientSpec>& pts) {
    TrialState s = new_trial(cfg);
    int id = 0;
    for (const auto& p : pts) {
        PatientRecord r;
        r.id = ++id;
        r.level = p.level;
        r.y_T = p.y_T;
        r.y_S = p.y_S;
        r.y_E = p.y_E;
        r.enroll_order = id;
        r.stage = p.stage;
        s.patients.push_back(r);
    }
    return s;
}

// `n` patients at `level` with `tox` DLTs, PD values `pd` and `eff` responders.
inline void add_patients(std::vector<PatientSpec>& out, int level, int n, int tox, double pd, int eff = 0,
                         int stage = 1) {
    for (int i = 0; i < n; ++i) out.push_back({level, i < tox ? 1 : 0, pd, i < eff ? 1 : 0, stage});
}

}  // namespace droid::testing
