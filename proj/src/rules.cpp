#include "droid/rules.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "droid/inference.hpp"
#include "droid/serialize.hpp"

namespace droid::rules {

namespace inf = droid::inference;

BoinBoundaries boin_boundaries(double phi_T, double phi_S) {
    const double phi1 = 0.6 * phi_T;
    const double phi2 = 1.4 * phi_T;
    BoinBoundaries b;
    b.lambda_e = std::log((1 - phi1) / (1 - phi_T)) / std::log(phi_T * (1 - phi1) / (phi1 * (1 - phi_T)));
    b.lambda_d = std::log((1 - phi_T) / (1 - phi2)) / std::log(phi2 * (1 - phi_T) / (phi_T * (1 - phi2)));
    b.gamma_e = 0.8 * phi_S;
    b.gamma_d = 1.2 * phi_S;
    return b;
}

namespace {

int closest_level(std::span<const double> est, double target) {
    int best = 1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < est.size(); ++j) {
        const double dist = std::abs(est[j] - target);
        // strict comparison keeps the lower level on ties; the tolerance
        // absorbs representation error in hand-entered estimates
        if (dist < best_dist - 1e-12) {
            best_dist = dist;
            best = static_cast<int>(j) + 1;
        }
    }
    return best;
}

int step_towards(int current, int target, int J) {
    if (target > current) return std::min(current + 1, J);
    if (target < current) return std::max(current - 1, 1);
    return current;
}

}  // namespace

int mad_candidate_model_based(int j_S, std::span<const double> mu_hat, double phi_S) {
    const int J = static_cast<int>(mu_hat.size());
    return step_towards(j_S, closest_level(mu_hat, phi_S), J);
}

int mtd_candidate_model_based(int j_T, std::span<const double> p_hat, double phi_T) {
    const int J = static_cast<int>(p_hat.size());
    return step_towards(j_T, closest_level(p_hat, phi_T), J);
}

bool Eliminated::all(int J) const {
    for (int j = 1; j <= J; ++j) {
        if (!blocks(j)) return false;
    }
    return true;
}

int mad_candidate_model_assisted(int j_S, int n_at_level, double mu_bar, const BoinBoundaries& b, int J,
                                 const Eliminated& elim) {
    if (n_at_level < 1) throw ValidationError("no data at current level");
    int cand = j_S;
    if (elim.low && j_S <= *elim.low) {
        cand = std::min(j_S + 1, J);  // current level is futile: move up
    } else if (mu_bar <= b.gamma_e) {
        cand = std::min(j_S + 1, J);
    } else if (mu_bar > b.gamma_d) {
        cand = std::max(j_S - 1, 1);
    }
    return elim.blocks(cand) && cand != j_S ? j_S : cand;
}

int mtd_candidate_model_assisted(int j_T, int n_at_level, double p_bar, const BoinBoundaries& b, int J,
                                 const Eliminated& elim) {
    if (n_at_level < 1) throw ValidationError("no data at current level");
    if ((elim.high && j_T >= *elim.high) || p_bar > b.lambda_d) {
        // de-escalation for safety is never blocked
        return std::max(j_T - 1, 1);
    }
    if (p_bar <= b.lambda_e) {
        const int cand = std::min(j_T + 1, J);
        return elim.blocks(cand) ? j_T : cand;
    }
    return j_T;
}

double pooled_pd_variance(std::span<const DoseData> data) {
    double ssd = 0.0;
    int df = 0;
    for (const auto& d : data) {
        if (d.n < 1) continue;
        ssd += d.pd_ssd;
        df += d.n - 1;
    }
    if (df < 1 || !(ssd > 0.0)) return 0.25 * 0.25;
    return ssd / df;
}

double tox_exceed_probability(const DoseData& d, double phi_T) {
    return inf::beta_binomial_posterior(d.tox, d.n, {1.0, 1.0}).prob_greater(phi_T);
}

double futility_probability(const DoseData& d, double pooled_variance, double phi_S) {
    // prior Normal(phi_S, 1), known variance
    const double precision = 1.0 + d.n / pooled_variance;
    const double mean = (phi_S + d.pd_sum / pooled_variance) / precision;
    boost::math::normal_distribution<double> z;
    return boost::math::cdf(z, (phi_S - mean) * std::sqrt(precision));
}

EliminationResult elimination_check(std::span<const DoseData> data, double phi_T, double phi_S, double c_T,
                                    double c_S) {
    const int J = static_cast<int>(data.size());
    EliminationResult r;
    r.tox_prob.assign(J, 0.0);
    r.futility_prob.assign(J, 0.0);
    const double var = pooled_pd_variance(data);
    for (int j = 1; j <= J; ++j) {
        const auto& d = data[j - 1];
        if (d.n < kEvidenceFloor) continue;
        r.tox_prob[j - 1] = tox_exceed_probability(d, phi_T);
        r.futility_prob[j - 1] = futility_probability(d, var, phi_S);
        if (r.tox_prob[j - 1] > c_T && !r.eliminated.high) r.eliminated.high = j;
        if (r.futility_prob[j - 1] > c_S) r.eliminated.low = j;
    }
    return r;
}

const char* to_string(DecisionKind k) {
    switch (k) {
        case DecisionKind::Single: return "single";
        case DecisionKind::Split: return "split";
        case DecisionKind::Stop: return "stop";
    }
    return "?";
}

const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::None: return "none";
        case StopReason::Toxicity: return "toxicity";
        case StopReason::Futility: return "futility";
    }
    return "?";
}

json to_json(const AllocationDecision& d) {
    json j = {{"kind", to_string(d.kind)},
              {"candidate_T", d.candidate_T},
              {"candidate_S", d.candidate_S},
              {"cohorts", d.cohorts},
              {"trace", d.trace}};
    if (d.kind == DecisionKind::Stop) j["reason"] = to_string(d.reason);
    return j;
}

StopCheck stage1_stopping(const TrialState& state, const PosteriorSnapshot& snapshot) {
    const auto& cfg = state.config;
    const int J = cfg.grid.size();
    StopCheck out;
    if (state.patients.empty()) return out;

    if (cfg.stage1_mode == Stage1Mode::ModelBased) {
        if (snapshot.has_toxicity_fit) {
            out.tox_prob = inf::prob_tox_above(snapshot, cfg.alpha0, 1, cfg.phi_T);
        }
        if (snapshot.has_emax_fit) {
            out.futility_prob = inf::prob_pd_below(snapshot, cfg.grid.doses, J, cfg.phi_S);
        }
    } else {
        const auto data = dose_data(state);
        if (data.front().n >= kEvidenceFloor) out.tox_prob = tox_exceed_probability(data.front(), cfg.phi_T);
        if (data.back().n >= kEvidenceFloor) {
            out.futility_prob = futility_probability(data.back(), pooled_pd_variance(data), cfg.phi_S);
        }
        const Eliminated elim{state.eliminated_high, state.eliminated_low};
        if (elim.all(J)) {
            out.reason = elim.high ? StopReason::Toxicity : StopReason::Futility;
            return out;
        }
    }

    if (out.tox_prob > cfg.cutoffs.tox_stop) {
        out.reason = StopReason::Toxicity;
    } else if (out.futility_prob > cfg.cutoffs.futility_stop) {
        out.reason = StopReason::Futility;
    }
    return out;
}

AllocationDecision allocate_candidates(int candidate_T, int candidate_S, int cohort_size, int remaining_budget) {
    AllocationDecision d;
    d.candidate_T = candidate_T;
    d.candidate_S = candidate_S;
    if (remaining_budget <= 0) throw ValidationError("stage-I budget exhausted");
    if (candidate_T <= candidate_S) {
        d.kind = DecisionKind::Single;
        d.cohorts = {{candidate_T, std::min(cohort_size, remaining_budget)}};
    } else if (remaining_budget <= cohort_size) {
        d.kind = DecisionKind::Single;
        d.cohorts = {{candidate_S, remaining_budget}};
    } else {
        d.kind = DecisionKind::Split;
        d.cohorts = {{candidate_T, std::min(cohort_size, remaining_budget - cohort_size)}, {candidate_S, cohort_size}};
    }
    return d;
}

AllocationDecision next_allocation(const TrialState& state, const PosteriorSnapshot& snapshot) {
    const auto& cfg = state.config;
    if (state.stage != Phase::Stage1 || state.status != TrialStatus::Active) {
        throw ValidationError("stage mismatch: allocation rules apply to an active stage I");
    }
    const int J = cfg.grid.size();
    const int remaining = cfg.stage1_budget() - stage_patient_count(state, 1);

    if (state.patients.empty()) {
        auto d = allocate_candidates(1, 1, cfg.cohort_size, remaining);
        d.trace = {{"rule", "first cohort at the lowest dose"}};
        return d;
    }

    const auto stop = stage1_stopping(state, snapshot);
    if (stop.reason != StopReason::None) {
        AllocationDecision d;
        d.kind = DecisionKind::Stop;
        d.reason = stop.reason;
        d.candidate_T = state.j_T;
        d.candidate_S = state.j_S;
        d.trace = {{"rule", "stage-I stopping"},
                   {"pr_tox_lowest", stop.tox_prob},
                   {"pr_futile_highest", stop.futility_prob}};
        return d;
    }

    int cand_T = state.j_T;
    int cand_S = state.j_S;
    json trace;
    if (cfg.stage1_mode == Stage1Mode::ModelBased) {
        cand_T = mtd_candidate_model_based(state.j_T, snapshot.p_hat, cfg.phi_T);
        cand_S = mad_candidate_model_based(state.j_S, snapshot.mu_hat, cfg.phi_S);
        trace = {{"rule", "model-based"}, {"p_hat", snapshot.p_hat}, {"mu_hat", snapshot.mu_hat}};
    } else {
        const auto data = dose_data(state);
        const auto b = boin_boundaries(cfg.phi_T, cfg.phi_S);
        const Eliminated elim{state.eliminated_high, state.eliminated_low};
        const auto& dT = data[state.j_T - 1];
        const auto& dS = data[state.j_S - 1];
        if (dT.n > 0) cand_T = mtd_candidate_model_assisted(state.j_T, dT.n, dT.tox_rate(), b, J, elim);
        if (dS.n > 0) cand_S = mad_candidate_model_assisted(state.j_S, dS.n, dS.pd_mean(), b, J, elim);
        trace = {{"rule", "model-assisted"},
                 {"p_bar_at_jT", dT.tox_rate()},
                 {"mu_bar_at_jS", dS.pd_mean()},
                 {"lambda_e", b.lambda_e},
                 {"lambda_d", b.lambda_d},
                 {"gamma_e", b.gamma_e},
                 {"gamma_d", b.gamma_d}};
    }
    auto d = allocate_candidates(cand_T, cand_S, cfg.cohort_size, remaining);
    trace["j_T"] = state.j_T;
    trace["j_S"] = state.j_S;
    d.trace = std::move(trace);
    return d;
}

Tdr select_tdr_discrete(std::span<const double> p_est, std::span<const double> mu_est,
                        const std::vector<bool>& eligible, double phi_T, double phi_S) {
    const int J = static_cast<int>(p_est.size());
    int mtd = 0, mad = 0;
    for (int j = 1; j <= J; ++j) {
        if (eligible[j - 1] && p_est[j - 1] <= phi_T) mtd = j;
    }
    for (int j = J; j >= 1; --j) {
        if (eligible[j - 1] && mu_est[j - 1] >= phi_S) mad = j;
    }
    Tdr t;
    if (mtd == 0 || mad == 0 || mad > mtd) return t;
    t.kind = TdrKind::Discrete;
    t.lo = mad;
    t.hi = mtd;
    return t;
}

namespace {

template <class Get>
std::vector<double> isotonic_over_tried(std::span<const DoseData> data, Get get) {
    std::vector<double> vals, w;
    std::vector<int> idx;
    for (std::size_t j = 0; j < data.size(); ++j) {
        if (data[j].n == 0) continue;
        vals.push_back(get(data[j]));
        w.push_back(static_cast<double>(data[j].n));
        idx.push_back(static_cast<int>(j));
    }
    std::vector<double> out(data.size(), std::numeric_limits<double>::quiet_NaN());
    if (vals.empty()) return out;
    const auto fit = inf::pava_isotonic(vals, w);
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = fit[k];
    return out;
}

// Bisection for the smallest dose in [lo, hi] where an increasing f reaches
// `target`; returns nullopt if f(hi) < target.
template <class F>
std::optional<double> invert_increasing(F f, double target, double lo, double hi) {
    if (f(hi) < target) return std::nullopt;
    if (f(lo) >= target) return lo;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) >= target) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

// Largest dose in [lo, hi] where an increasing f stays at or below `target`.
template <class F>
std::optional<double> invert_upper(F f, double target, double lo, double hi) {
    if (f(lo) > target) return std::nullopt;
    if (f(hi) <= target) return hi;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) <= target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return lo;
}

}  // namespace

std::vector<double> isotonic_tox(std::span<const DoseData> data) {
    return isotonic_over_tried(data, [](const DoseData& d) { return d.tox_rate(); });
}

std::vector<double> isotonic_pd(std::span<const DoseData> data) {
    return isotonic_over_tried(data, [](const DoseData& d) { return d.pd_mean(); });
}

Tdr select_tdr(const TrialState& state, const PosteriorSnapshot& snapshot, TdrMode mode) {
    const auto& cfg = state.config;
    const int J = cfg.grid.size();
    const auto data = dose_data(state);
    const Eliminated elim{state.eliminated_high, state.eliminated_low};

    std::vector<bool> eligible(J);
    for (int j = 1; j <= J; ++j) eligible[j - 1] = data[j - 1].n > 0 && !elim.blocks(j);

    if (mode == TdrMode::Discrete) {
        if (cfg.stage1_mode == Stage1Mode::ModelAssisted) {
            const auto p = isotonic_tox(data);
            const auto mu = isotonic_pd(data);
            return select_tdr_discrete(p, mu, eligible, cfg.phi_T, cfg.phi_S);
        }
        if (!snapshot.has_toxicity_fit || !snapshot.has_emax_fit) {
            throw ValidationError("model-based TDR selection needs toxicity and Emax fits");
        }
        return select_tdr_discrete(snapshot.p_hat, snapshot.mu_hat, eligible, cfg.phi_T, cfg.phi_S);
    }

    if (!snapshot.has_toxicity_fit || !snapshot.has_emax_fit) {
        throw ValidationError("continuous TDR selection needs toxicity and Emax fits");
    }
    const auto& doses = cfg.grid.doses;
    const double d1 = doses.front();
    const double dJ = doses.back();
    auto pd_curve = [&](double d) { return inf::mean_pd_curve(snapshot, d); };
    auto tox_curve = [&](double d) { return inf::mean_tox_curve(snapshot, cfg.alpha0, doses, d); };

    const double search_lo = mode == TdrMode::Extrapolated ? 1e-9 : d1;
    const auto lower = invert_increasing(pd_curve, cfg.phi_S, search_lo, dJ);
    const auto upper = invert_upper(tox_curve, cfg.phi_T, search_lo, dJ);

    Tdr t;
    if (!lower || !upper || *lower > *upper) return t;
    t.kind = TdrKind::Continuous;
    t.lo_dose = *lower;
    t.hi_dose = *upper;
    t.lo = J + 1;
    t.hi = 0;
    for (int j = 1; j <= J; ++j) {
        const double d = doses[j - 1];
        if (d >= t.lo_dose - 1e-12 && d <= t.hi_dose + 1e-12 && !elim.blocks(j)) {
            t.lo = std::min(t.lo, j);
            t.hi = std::max(t.hi, j);
        }
    }
    if (t.hi == 0) {
        t.lo = 0;  // range contains no grid dose
    }
    return t;
}

std::vector<int> select_rp2s(const Tdr& tdr, std::span<const double> pi_hat, const std::vector<bool>& eligible,
                             int K, double phi_E) {
    std::vector<int> pass;
    if (tdr.empty()) return pass;
    for (int j = tdr.lo; j <= tdr.hi; ++j) {
        if (eligible[j - 1] && pi_hat[j - 1] > phi_E) pass.push_back(j);
    }
    // highest estimate first, lower dose on ties
    std::stable_sort(pass.begin(), pass.end(), [&](int a, int b) { return pi_hat[a - 1] > pi_hat[b - 1]; });
    if (static_cast<int>(pass.size()) > K) pass.resize(K);
    std::sort(pass.begin(), pass.end());
    return pass;
}

std::vector<int> select_rp2s(const Tdr& tdr, std::span<const DoseData> data, const DesignConfig& cfg) {
    const int J = static_cast<int>(data.size());
    std::vector<double> pi_hat(J, 0.0);
    std::vector<bool> eligible(J, false);
    std::vector<double> score(J, 0.0);
    for (int j = 0; j < J; ++j) {
        const auto post = inf::beta_binomial_posterior(data[j].eff, data[j].eff_n, cfg.efficacy_prior);
        pi_hat[j] = post.mean();
        eligible[j] = data[j].eff_n > 0;
        if (cfg.rp2s_rule == Rp2sRule::PosteriorProbability) {
            // gate on Pr(pi > phi_E) > C_E, rank by posterior mean
            eligible[j] = eligible[j] && post.prob_greater(cfg.phi_E) > cfg.cutoffs.efficacy;
        }
    }
    if (cfg.rp2s_rule == Rp2sRule::PosteriorProbability) {
        // threshold already applied through `eligible`
        return select_rp2s(tdr, pi_hat, eligible, cfg.max_rp2s, -1.0);
    }
    return select_rp2s(tdr, pi_hat, eligible, cfg.max_rp2s, cfg.phi_E);
}

std::vector<DecisionTableRow> boin_decision_table(const DesignConfig& cfg) {
    const auto b = boin_boundaries(cfg.phi_T, cfg.phi_S);
    std::vector<DecisionTableRow> rows;
    for (int n = 1; n <= cfg.per_dose_cap; ++n) {
        DecisionTableRow r;
        r.n = n;
        r.escalate_max = static_cast<int>(std::floor(n * b.lambda_e + 1e-12));
        r.deescalate_min = static_cast<int>(std::floor(n * b.lambda_d + 1e-12)) + 1;
        if (n >= kEvidenceFloor) {
            for (int x = 0; x <= n; ++x) {
                DoseData d;
                d.n = n;
                d.tox = x;
                if (tox_exceed_probability(d, cfg.phi_T) > cfg.cutoffs.tox_elim) {
                    r.eliminate_min = x;
                    break;
                }
            }
        }
        rows.push_back(r);
    }
    return rows;
}

std::string format_decision_table(const DesignConfig& cfg) {
    const auto b = boin_boundaries(cfg.phi_T, cfg.phi_S);
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "toxicity boundaries: lambda_e=" << b.lambda_e << " lambda_d=" << b.lambda_d << "\n";
    os << "PD boundaries: gamma_e=" << b.gamma_e << " gamma_d=" << b.gamma_d << "\n";
    os << std::setw(4) << "n" << std::setw(12) << "escalate" << std::setw(14) << "de-escalate" << std::setw(12)
       << "eliminate" << "\n";
    for (const auto& r : boin_decision_table(cfg)) {
        os << std::setw(4) << r.n << std::setw(12) << ("<=" + std::to_string(r.escalate_max));
        os << std::setw(14) << (r.deescalate_min <= r.n ? ">=" + std::to_string(r.deescalate_min) : "NA");
        os << std::setw(12) << (r.eliminate_min ? ">=" + std::to_string(*r.eliminate_min) : "NA") << "\n";
    }
    return os.str();
}

}  // namespace droid::rules
