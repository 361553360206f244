#include "droid/engine.hpp"

#include <algorithm>
#include <cmath>

#include "droid/inference.hpp"
#include "droid/random.hpp"
#include "droid/rules.hpp"
#include "droid/serialize.hpp"

namespace droid::engine {

namespace inf = droid::inference;

namespace {

enum Purpose : std::uint64_t { kStage1Fit = 1, kStage2Fit, kCloseFit, kFinalFit, kRandomize, kSummaryFit };

json last_decision(const TrialState& state) {
    for (auto it = state.decision_log.rbegin(); it != state.decision_log.rend(); ++it) {
        if (it->rule == "allocate") return it->inputs.at("decision");
    }
    return json{{"kind", "pending"}, {"cohorts", state.pending}};
}

bool needs_model_fits(const DesignConfig& cfg) {
    return cfg.stage1_mode == Stage1Mode::ModelBased || cfg.tdr_mode != TdrMode::Discrete;
}

json opt_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

// Merges the model-assisted elimination result into the state; eliminated
// sets only grow.
void update_elimination(TrialState& state) {
    const auto& cfg = state.config;
    if (cfg.stage1_mode != Stage1Mode::ModelAssisted || state.patients.empty()) return;
    const auto data = dose_data(state);
    const auto r = rules::elimination_check(data, cfg.phi_T, cfg.phi_S, cfg.cutoffs.tox_elim, cfg.cutoffs.futility_elim);
    auto high = state.eliminated_high;
    auto low = state.eliminated_low;
    if (r.eliminated.high) high = high ? std::min(*high, *r.eliminated.high) : r.eliminated.high;
    if (r.eliminated.low) low = low ? std::max(*low, *r.eliminated.low) : r.eliminated.low;
    if (high == state.eliminated_high && low == state.eliminated_low) return;
    commit(state, "eliminate",
           {{"tox_prob", r.tox_prob}, {"futility_prob", r.futility_prob}},
           {{"eliminated_high", opt_json(high)}, {"eliminated_low", opt_json(low)}});
}

int stage2_budget_left(const TrialState& state) {
    if (state.config.n2_max <= 0) return 1 << 30;
    return state.config.n2_max - stage_patient_count(state, 2);
}

// Closes stage II when no RP2S dose can take more patients.
void maybe_close_stage2(TrialState& state) {
    if (state.stage != Phase::Stage2 || !state.pending.empty()) return;
    const bool open = !stage2::eligible_levels(state, state.config.per_dose_cap).empty() && stage2_budget_left(state) > 0;
    if (open) return;
    commit(state, "close_stage2", {{"dropped", state.dropped}, {"rp2s", state.rp2s}}, {{"stage", "done"}});
}

std::vector<double> quantiles(std::vector<double> v, const std::vector<double>& probs) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double p : probs) {
        const double h = (v.size() - 1) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, v.size() - 1);
        out.push_back(v[lo] + (h - lo) * (v[hi] - v[lo]));
    }
    return out;
}

}  // namespace

std::uint64_t fit_seed(const TrialState& state, std::uint64_t purpose) {
    return derive_seed(state.config.mcmc.seed,
                       {purpose, static_cast<std::uint64_t>(state.patients.size()),
                        static_cast<std::uint64_t>(state.decision_log.size())});
}

PosteriorSnapshot build_snapshot(const TrialState& state, bool toxicity, bool emax, std::uint64_t seed) {
    const auto& cfg = state.config;
    const int J = cfg.grid.size();
    const auto data = dose_data(state);

    PosteriorSnapshot s;
    const auto tox_spec = inf::ToxicityModelSpec::from_config(cfg);
    s.effective_doses = tox_spec.effective_doses;
    for (const auto& d : data) {
        const auto post = inf::beta_binomial_posterior(d.eff, d.eff_n, cfg.efficacy_prior);
        s.pi_posterior.push_back({post.a, post.b});
        s.pi_hat.push_back(post.mean());
    }
    if (state.patients.empty()) return s;

    if (toxicity) {
        std::vector<inf::BinomialCount> counts;
        for (const auto& d : data) counts.push_back({d.n, d.tox});
        auto mcmc = cfg.mcmc;
        mcmc.seed = derive_seed(seed, {1});
        auto fit = inf::fit_toxicity(counts, tox_spec, mcmc);
        s.p_hat = fit.p_hat;
        s.alpha_draws = std::move(fit.draws.values);
        s.has_toxicity_fit = true;
    }
    if (emax) {
        std::vector<inf::PdSummary> pd;
        for (const auto& d : data) pd.push_back({d.n, d.pd_mean(), d.pd_ssd});
        auto mcmc = cfg.mcmc;
        mcmc.seed = derive_seed(seed, {2});
        const auto fit = inf::fit_emax(pd, inf::EmaxModelSpec::from_config(cfg), mcmc);
        s.mu_hat = fit.mu_hat;
        s.emax_draws.resize(fit.draws.rows);
        for (int i = 0; i < fit.draws.rows; ++i) {
            for (int k = 0; k < 5; ++k) s.emax_draws[i][k] = fit.draws.at(i, k);
        }
        s.has_emax_fit = true;
    }
    if (s.mu_hat.empty()) s.mu_hat.assign(J, 0.0);
    if (s.p_hat.empty()) s.p_hat.assign(J, 0.0);
    return s;
}

json recommend(TrialState& state) {
    const auto& cfg = state.config;

    if (state.status == TrialStatus::StoppedToxicity || state.status == TrialStatus::StoppedFutility) {
        return {{"kind", "stop"},
                {"reason", state.status == TrialStatus::StoppedToxicity ? "toxicity" : "futility"},
                {"detail", state.terminal_reason}};
    }
    if (state.status == TrialStatus::Completed) {
        return {{"kind", "complete"}, {"detail", state.terminal_reason}};
    }
    if (!state.pending.empty()) return last_decision(state);

    if (state.stage == Phase::Done) {
        return {{"kind", "final-analysis-due"}, {"detail", "stage II complete; run the final analysis"}};
    }

    if (state.stage == Phase::Stage1) {
        if (stage1_budget_exhausted(state)) {
            return {{"kind", "advance"}, {"detail", "stage-I sample size reached; close out stage I"}};
        }
        update_elimination(state);
        const bool fits = cfg.stage1_mode == Stage1Mode::ModelBased && !state.patients.empty();
        const auto snap = build_snapshot(state, fits, fits, fit_seed(state, kStage1Fit));
        const auto d = rules::next_allocation(state, snap);
        const json dj = rules::to_json(d);
        if (d.kind == rules::DecisionKind::Stop) {
            const bool tox = d.reason == rules::StopReason::Toxicity;
            commit(state, "stop", {{"decision", dj}},
                   {{"pending", json::array()},
                    {"stage", "done"},
                    {"status", tox ? "stopped-toxicity" : "stopped-futility"},
                    {"terminal_reason", tox ? "stage-I stop for toxicity" : "stage-I stop for futility"}});
            return dj;
        }
        int jT = d.candidate_T, jS = d.candidate_S;
        if (d.candidate_T <= d.candidate_S) jS = jT;
        commit(state, "allocate", {{"decision", dj}}, {{"pending", d.cohorts}, {"j_T", jT}, {"j_S", jS}});
        return dj;
    }

    // stage II
    maybe_close_stage2(state);
    if (state.stage == Phase::Done) return recommend(state);
    const bool adaptive = cfg.rand_scheme == RandScheme::Adaptive;
    const auto snap = build_snapshot(state, false, adaptive, fit_seed(state, kStage2Fit));
    const auto policy = stage2::RandPolicy::from_state(state, snap);
    auto rng = make_rng(cfg.mcmc.seed, {kRandomize, static_cast<std::uint64_t>(state.patients.size()),
                                        static_cast<std::uint64_t>(state.decision_log.size())});
    const int level = stage2::randomize_next(state, policy, rng);
    const int room = cfg.per_dose_cap - patients_per_dose(state)[level - 1];
    const int size = std::min({cfg.cohort_size, room, stage2_budget_left(state)});
    const std::vector<PendingCohort> cohorts{{level, size}};
    const json dj = {{"kind", "randomize"},
                     {"cohorts", cohorts},
                     {"trace",
                      {{"rule", "stage-II randomization"},
                       {"scheme", to_string(cfg.rand_scheme)},
                       {"eligible", stage2::eligible_levels(state, cfg.per_dose_cap)},
                       {"probabilities", stage2::randomization_probabilities(state, policy)}}}};
    commit(state, "allocate", {{"decision", dj}}, {{"pending", cohorts}});
    return dj;
}

void enroll(TrialState& state, int level, const std::vector<Outcome>& outcomes) {
    record_cohort(state, level, outcomes);
    if (state.stage != Phase::Stage2 || !state.pending.empty()) return;

    const auto& cfg = state.config;
    const bool fits = needs_model_fits(cfg);
    const auto snap = build_snapshot(state, fits, fits, fit_seed(state, kStage2Fit));
    const auto mon = stage2::stage2_monitor(state, snap);
    json outcome = {{"dropped", mon.dropped}};
    if (cfg.allow_dose_addition) {
        TrialState probe = state;
        probe.dropped = mon.dropped;
        outcome["rp2s"] = stage2::refresh_rp2s(probe, snap);
    }
    if (outcome["dropped"] != json(state.dropped) || (outcome.contains("rp2s") && outcome["rp2s"] != json(state.rp2s))) {
        commit(state, "monitor", {{"tox_prob", mon.tox_prob}, {"futility_prob", mon.futility_prob}},
               std::move(outcome));
    }
    maybe_close_stage2(state);
}

json advance_stage(TrialState& state) {
    const auto& cfg = state.config;
    if (state.status != TrialStatus::Active || state.stage != Phase::Stage1) {
        throw ValidationError("stage mismatch: stage I is not open");
    }
    if (!state.pending.empty()) throw ValidationError("stage I has pending cohorts");
    if (!stage1_budget_exhausted(state)) throw ValidationError("stage-I sample size not reached");

    update_elimination(state);
    const bool fits = needs_model_fits(cfg);
    const auto snap = build_snapshot(state, fits, fits, fit_seed(state, kCloseFit));
    const Tdr tdr = rules::select_tdr(state, snap, cfg.tdr_mode);
    const auto data = dose_data(state);
    std::vector<int> rp2s;
    if (!tdr.empty()) rp2s = rules::select_rp2s(tdr, data, cfg);

    json outcome = {{"tdr", tdr}, {"rp2s", rp2s}};
    if (tdr.empty()) {
        outcome.update({{"stage", "done"}, {"status", "completed"}, {"terminal_reason", "empty TDR"}});
    } else if (rp2s.empty()) {
        outcome.update({{"stage", "done"}, {"status", "completed"}, {"terminal_reason", "empty RP2S"}});
    } else {
        outcome["stage"] = "stage2";
    }
    json inputs = {{"p_hat", snap.p_hat}, {"mu_hat", snap.mu_hat}, {"pi_hat", snap.pi_hat},
                   {"isotonic_tox", rules::isotonic_tox(data)}, {"isotonic_pd", rules::isotonic_pd(data)}};
    for (auto& v : inputs) {
        for (auto& x : v) {
            if (x.is_number() && !std::isfinite(x.get<double>())) x = nullptr;
        }
    }
    commit(state, "close_stage1", std::move(inputs), outcome);
    maybe_close_stage2(state);
    return outcome;
}

bool final_analysis_due(const TrialState& state) {
    return state.stage == Phase::Done && state.status == TrialStatus::Active && state.final_analysis.is_null();
}

stage2::FinalAnalysis run_final_analysis(TrialState& state) {
    if (!final_analysis_due(state)) {
        if (!state.final_analysis.is_null()) throw ValidationError("final analysis already recorded");
        throw ValidationError("stage mismatch: stage II is not complete");
    }
    for (const auto& p : state.patients) {
        if (!p.y_E) throw ValidationError("efficacy pending for patient " + std::to_string(p.id));
    }
    const auto snap = build_snapshot(state, false, true, fit_seed(state, kFinalFit));
    const auto f = stage2::final_analysis(state, snap);
    commit(state, "final_analysis", {{"fit_seed", fit_seed(state, kFinalFit)}},
           {{"final_analysis", stage2::to_json(f)},
            {"status", "completed"},
            {"terminal_reason", f.optimal ? "optimal dose " + std::to_string(*f.optimal) : "no dose selected"}});
    return f;
}

json analysis_summary(const TrialState& state) {
    if (!state.final_analysis.is_null()) {
        json j = state.final_analysis;
        j["pending"] = false;
        return j;
    }
    return {{"pending", true},
            {"stage", to_string(state.stage)},
            {"status", to_string(state.status)},
            {"terminal_reason", state.terminal_reason},
            {"tdr", state.tdr},
            {"rp2s", state.rp2s},
            {"dropped_stage2", state.dropped},
            {"n", patients_per_dose(state)},
            {"optimal_dose", nullptr}};
}

json posterior_summary(const TrialState& state, int mesh_points) {
    const auto& cfg = state.config;
    const auto data = dose_data(state);
    const bool any = !state.patients.empty();
    const auto snap = build_snapshot(state, any, any, fit_seed(state, kSummaryFit));

    json per_dose = json::array();
    for (int j = 0; j < cfg.grid.size(); ++j) {
        per_dose.push_back({{"dose_index", j + 1},
                            {"dose", cfg.grid.doses[j]},
                            {"n", data[j].n},
                            {"dlt", data[j].tox},
                            {"responses", data[j].eff},
                            {"efficacy_observed", data[j].eff_n},
                            {"p_hat", snap.p_hat.empty() ? json(nullptr) : json(snap.p_hat[j])},
                            {"mu_hat", snap.mu_hat.empty() ? json(nullptr) : json(snap.mu_hat[j])},
                            {"pi_hat", snap.pi_hat[j]}});
    }
    json out = {{"per_dose", per_dose}, {"draws", snap.draw_count()}};
    if (!any) return out;

    const std::vector<double> probs{0.025, 0.25, 0.5, 0.75, 0.975};
    const double lo = cfg.grid.doses.front(), hi = cfg.grid.doses.back();
    json mesh = json::array(), tox = json::array(), pd = json::array();
    for (int m = 0; m < mesh_points; ++m) {
        const double d = mesh_points == 1 ? lo : lo + (hi - lo) * m / (mesh_points - 1);
        mesh.push_back(d);
        const double eff = inf::interpolate_effective_dose(cfg.grid.doses, snap.effective_doses, d);
        std::vector<double> tv, pv;
        for (double a : snap.alpha_draws) tv.push_back(inf::tox_probability(cfg.alpha0, a, eff));
        for (const auto& e : snap.emax_draws) pv.push_back(inf::snapshot_mu(e, d));
        tox.push_back(quantiles(tv, probs));
        pd.push_back(quantiles(pv, probs));
    }
    out["curves"] = {{"quantiles", probs}, {"dose", mesh}, {"toxicity", tox}, {"pd", pd}};
    return out;
}

}  // namespace droid::engine
