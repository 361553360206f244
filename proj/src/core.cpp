#include "droid/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "droid/serialize.hpp"

namespace droid {

double GammaPrior::sd() const { return std::sqrt(shape) / rate; }

DesignConfig reference_design() {
    DesignConfig cfg;
    cfg.grid.doses = {0.1, 0.3, 0.5, 0.7, 0.9};
    cfg.grid.skeleton = {0.05, 0.15, 0.30, 0.40, 0.55};
    return cfg;
}

namespace {

bool open_unit(double x) { return x > 0.0 && x < 1.0; }

void check_prob(std::vector<std::string>& out, const char* name, double v) {
    if (!open_unit(v)) {
        std::ostringstream os;
        os << name << " outside (0,1)";
        out.push_back(os.str());
    }
}

void check_gamma(std::vector<std::string>& out, const char* name, const GammaPrior& g) {
    if (!(g.shape > 0.0) || !(g.rate > 0.0)) {
        out.push_back(std::string(name) + " prior shape/rate must be positive");
    }
}

}  // namespace

std::vector<std::string> config_violations(const DesignConfig& cfg) {
    std::vector<std::string> out;
    const auto& g = cfg.grid;
    const int J = g.size();

    if (J < 2 || J > 10) out.push_back("dose grid must have between 2 and 10 doses");
    if (g.skeleton.size() != g.doses.size()) out.push_back("skeleton length differs from dose grid");
    for (int j = 0; j < J; ++j) {
        if (!(g.doses[j] > 0.0)) {
            out.push_back("dose grid contains a non-positive dose");
            break;
        }
    }
    for (int j = 1; j < J; ++j) {
        if (!(g.doses[j] > g.doses[j - 1])) {
            out.push_back("dose grid not increasing");
            break;
        }
    }
    for (double q : g.skeleton) {
        if (!open_unit(q)) {
            out.push_back("skeleton value outside (0,1)");
            break;
        }
    }
    for (std::size_t j = 1; j < g.skeleton.size(); ++j) {
        if (!(g.skeleton[j] > g.skeleton[j - 1])) {
            out.push_back("skeleton not strictly increasing");
            break;
        }
    }

    check_prob(out, "phi_T", cfg.phi_T);
    check_prob(out, "phi_E", cfg.phi_E);
    if (!std::isfinite(cfg.phi_S)) out.push_back("phi_S must be finite");

    if (cfg.cohort_size < 1) out.push_back("cohort_size must be positive");
    if (cfg.n1_cohorts < 1) out.push_back("n1_cohorts must be positive");
    if (cfg.max_rp2s < 1) out.push_back("K (max_rp2s) must be at least 1");
    if (cfg.n2_max < 0) out.push_back("n2_max must be nonnegative");
    if (!(cfg.delta > 0.0 && cfg.delta <= 1.0)) out.push_back("delta outside (0,1]");
    if (cfg.per_dose_cap < 1) {
        out.push_back("M (per_dose_cap) must be positive");
    } else if (J >= 1 && cfg.cohort_size >= 1 && cfg.n1_cohorts >= 1) {
        const int need = (cfg.stage1_budget() + J - 1) / J;
        if (cfg.per_dose_cap < need) out.push_back("M below stage-I feasibility");
    }

    const auto& c = cfg.cutoffs;
    check_prob(out, "C_T1", c.tox_stop);
    check_prob(out, "C_S1", c.futility_stop);
    check_prob(out, "C_T", c.tox_elim);
    check_prob(out, "C_S", c.futility_elim);
    check_prob(out, "C_E", c.efficacy);
    check_prob(out, "C_T2", c.tox_drop);
    check_prob(out, "C_S2", c.futility_drop);
    check_prob(out, "C_DRI", c.dri);
    check_prob(out, "C_1", c.plateau);
    check_prob(out, "C_2", c.response);

    if (!std::isfinite(cfg.alpha0)) out.push_back("alpha0 must be finite");
    if (!(cfg.alpha_prior_rate > 0.0)) out.push_back("alpha prior rate must be positive");
    check_gamma(out, "eta", cfg.emax_priors.eta);
    check_gamma(out, "tau", cfg.emax_priors.tau);
    check_gamma(out, "beta", cfg.emax_priors.beta);
    check_gamma(out, "gamma", cfg.emax_priors.gamma);
    if (!(cfg.emax_priors.sigma_scale > 0.0)) out.push_back("sigma prior scale must be positive");
    if (!(cfg.efficacy_prior.a > 0.0) || !(cfg.efficacy_prior.b > 0.0)) {
        out.push_back("efficacy prior parameters must be positive");
    }
    if (cfg.mcmc.burn_in < 0 || cfg.mcmc.draws < 1 || cfg.mcmc.thin < 1) {
        out.push_back("mcmc settings invalid (burn_in >= 0, draws >= 1, thin >= 1)");
    }
    return out;
}

const DesignConfig& validate_config(const DesignConfig& cfg) {
    auto v = config_violations(cfg);
    if (!v.empty()) {
        std::string msg;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) msg += "; ";
            msg += v[i];
        }
        throw ValidationError(msg);
    }
    return cfg;
}

TrialState new_trial(const DesignConfig& cfg) {
    validate_config(cfg);
    TrialState s;
    s.config = cfg;
    return s;
}

std::vector<DoseData> dose_data(const TrialState& state) {
    const int J = state.config.grid.size();
    std::vector<DoseData> d(J);
    for (const auto& p : state.patients) {
        auto& x = d[p.level - 1];
        x.n += 1;
        x.tox += p.y_T;
        x.pd_sum += p.y_S;
        if (p.y_E) {
            x.eff_n += 1;
            x.eff += *p.y_E;
        }
    }
    for (const auto& p : state.patients) {
        auto& x = d[p.level - 1];
        const double r = p.y_S - x.pd_mean();
        x.pd_ssd += r * r;
    }
    return d;
}

std::vector<int> patients_per_dose(const TrialState& state) {
    std::vector<int> n(state.config.grid.size(), 0);
    for (const auto& p : state.patients) n[p.level - 1] += 1;
    return n;
}

int stage_patient_count(const TrialState& state, int stage) {
    return static_cast<int>(std::count_if(state.patients.begin(), state.patients.end(),
                                          [stage](const PatientRecord& p) { return p.stage == stage; }));
}

int highest_tried_level(const TrialState& state) {
    int h = 0;
    for (const auto& p : state.patients) h = std::max(h, p.level);
    return h;
}

bool stage1_budget_exhausted(const TrialState& state) {
    return stage_patient_count(state, 1) >= state.config.stage1_budget();
}

int PosteriorSnapshot::draw_count() const {
    if (has_emax_fit) return static_cast<int>(emax_draws.size());
    if (has_toxicity_fit) return static_cast<int>(alpha_draws.size());
    return 0;
}

const char* to_string(Phase p) {
    switch (p) {
        case Phase::Stage1: return "stage1";
        case Phase::Stage2: return "stage2";
        case Phase::Done: return "done";
    }
    return "?";
}

const char* to_string(TrialStatus s) {
    switch (s) {
        case TrialStatus::Active: return "active";
        case TrialStatus::StoppedToxicity: return "stopped-toxicity";
        case TrialStatus::StoppedFutility: return "stopped-futility";
        case TrialStatus::Completed: return "completed";
    }
    return "?";
}

namespace {

std::optional<int> opt_int(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<int>();
}

}  // namespace

// Outcome keys understood by the ledger. Each key patches one field; entries
// never recompute anything, which is what makes replay exact.
void apply_entry(TrialState& state, LogEntry entry) {
    const json& o = entry.outcome;
    if (o.is_object()) {
        if (o.contains("patients")) {
            for (const auto& pj : o.at("patients")) state.patients.push_back(pj.get<PatientRecord>());
        }
        if (o.contains("consume_level")) {
            const int lvl = o.at("consume_level").get<int>();
            auto it = std::find_if(state.pending.begin(), state.pending.end(),
                                   [lvl](const PendingCohort& c) { return c.level == lvl; });
            if (it != state.pending.end()) state.pending.erase(it);
        }
        if (o.contains("efficacy")) {
            const int id = o.at("efficacy").at("patient_id").get<int>();
            for (auto& p : state.patients) {
                if (p.id == id) p.y_E = o.at("efficacy").at("y_E").get<int>();
            }
        }
        if (o.contains("pending")) state.pending = o.at("pending").get<std::vector<PendingCohort>>();
        if (o.contains("j_T")) state.j_T = o.at("j_T").get<int>();
        if (o.contains("j_S")) state.j_S = o.at("j_S").get<int>();
        if (o.contains("eliminated_high")) state.eliminated_high = opt_int(o.at("eliminated_high"));
        if (o.contains("eliminated_low")) state.eliminated_low = opt_int(o.at("eliminated_low"));
        if (o.contains("tdr")) state.tdr = o.at("tdr").get<Tdr>();
        if (o.contains("rp2s")) state.rp2s = o.at("rp2s").get<std::vector<int>>();
        if (o.contains("dropped")) state.dropped = o.at("dropped").get<std::vector<int>>();
        if (o.contains("stage")) state.stage = parse_phase(o.at("stage").get<std::string>());
        if (o.contains("status")) state.status = parse_status(o.at("status").get<std::string>());
        if (o.contains("terminal_reason")) state.terminal_reason = o.at("terminal_reason").get<std::string>();
        if (o.contains("final_analysis")) state.final_analysis = o.at("final_analysis");
    }
    state.decision_log.push_back(std::move(entry));
}

void commit(TrialState& state, std::string rule, json inputs, json outcome) {
    LogEntry e;
    e.seq = static_cast<int>(state.decision_log.size()) + 1;
    e.rule = std::move(rule);
    e.inputs = std::move(inputs);
    e.outcome = std::move(outcome);
    apply_entry(state, std::move(e));
}

TrialState replay(const DesignConfig& cfg, const std::vector<LogEntry>& log) {
    TrialState s = new_trial(cfg);
    for (const auto& e : log) apply_entry(s, e);
    return s;
}

void record_cohort(TrialState& state, int level, const std::vector<Outcome>& outcomes) {
    const auto& cfg = state.config;
    if (state.status != TrialStatus::Active || state.stage == Phase::Done) {
        throw ValidationError("trial not active");
    }
    if (level < 1 || level > cfg.grid.size()) throw ValidationError("dose level outside grid");
    auto it = std::find_if(state.pending.begin(), state.pending.end(),
                           [level](const PendingCohort& c) { return c.level == level; });
    if (it == state.pending.end()) {
        throw ValidationError("dose " + std::to_string(level) + " is not currently recommended");
    }
    if (outcomes.empty()) throw ValidationError("cohort has no patients");
    if (static_cast<int>(outcomes.size()) > it->size) {
        throw ValidationError("cohort larger than the recommended cohort size");
    }

    const int stage = state.stage == Phase::Stage1 ? 1 : 2;
    const int n_new = static_cast<int>(outcomes.size());
    if (stage == 1) {
        if (stage_patient_count(state, 1) + n_new > cfg.stage1_budget()) {
            throw ValidationError("cap exceeded: stage-I sample size");
        }
    } else {
        const int at_dose = patients_per_dose(state)[level - 1];
        if (at_dose + n_new > cfg.per_dose_cap) throw ValidationError("cap exceeded: per-dose cap M");
    }

    json patients = json::array();
    int next_id = state.patients.empty() ? 1 : state.patients.back().id + 1;
    int order = static_cast<int>(state.patients.size());
    for (const auto& o : outcomes) {
        if (o.y_T != 0 && o.y_T != 1) throw ValidationError("y_T must be 0 or 1");
        if (o.y_E && *o.y_E != 0 && *o.y_E != 1) throw ValidationError("y_E must be 0, 1 or pending");
        if (!std::isfinite(o.y_S)) throw ValidationError("y_S must be finite");
        PatientRecord p;
        p.id = next_id++;
        p.level = level;
        p.y_T = o.y_T;
        p.y_S = o.y_S;
        p.y_E = o.y_E;
        p.enroll_order = ++order;
        p.stage = stage;
        patients.push_back(p);
    }

    json inputs = {{"level", level}, {"outcomes", outcomes}};
    json outcome = {{"patients", patients}, {"consume_level", level}};
    commit(state, "enroll", std::move(inputs), std::move(outcome));
}

void record_efficacy(TrialState& state, int patient_id, int y_E) {
    if (y_E != 0 && y_E != 1) throw ValidationError("y_E must be 0 or 1");
    auto it = std::find_if(state.patients.begin(), state.patients.end(),
                           [patient_id](const PatientRecord& p) { return p.id == patient_id; });
    if (it == state.patients.end()) throw ValidationError("unknown patient id " + std::to_string(patient_id));
    if (it->y_E) throw ValidationError("efficacy already recorded for patient " + std::to_string(patient_id));
    commit(state, "efficacy", {{"patient_id", patient_id}, {"y_E", y_E}},
           {{"efficacy", {{"patient_id", patient_id}, {"y_E", y_E}}}});
}

}  // namespace droid
