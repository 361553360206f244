#include "droid/serialize.hpp"

namespace droid {

namespace {

template <class T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void merge_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) from_json(j.at(key), out);
}

// Rejects keys that the reference document does not have, so a misspelt
// option fails loudly instead of being ignored.
void reject_unknown_keys(const json& j, const json& ref, const std::string& prefix) {
    for (const auto& [key, value] : j.items()) {
        if (!ref.contains(key)) throw ValidationError("unknown config key '" + prefix + key + "'");
        if (value.is_object() && ref.at(key).is_object()) reject_unknown_keys(value, ref.at(key), prefix + key + ".");
    }
}

}  // namespace

void to_json(json& j, const DoseGrid& g) { j = {{"doses", g.doses}, {"skeleton", g.skeleton}}; }

void from_json(const json& j, DoseGrid& g) {
    read_if(j, "doses", g.doses);
    read_if(j, "skeleton", g.skeleton);
}

void to_json(json& j, const GammaPrior& g) { j = {{"shape", g.shape}, {"rate", g.rate}}; }

void from_json(const json& j, GammaPrior& g) {
    read_if(j, "shape", g.shape);
    read_if(j, "rate", g.rate);
}

void to_json(json& j, const BetaPrior& b) { j = {{"a", b.a}, {"b", b.b}}; }

void from_json(const json& j, BetaPrior& b) {
    read_if(j, "a", b.a);
    read_if(j, "b", b.b);
}

void to_json(json& j, const McmcSettings& m) {
    j = {{"burn_in", m.burn_in}, {"draws", m.draws}, {"thin", m.thin}, {"seed", m.seed}};
}

void from_json(const json& j, McmcSettings& m) {
    read_if(j, "burn_in", m.burn_in);
    read_if(j, "draws", m.draws);
    read_if(j, "thin", m.thin);
    read_if(j, "seed", m.seed);
}

void to_json(json& j, const EmaxPriors& p) {
    j = {{"eta", p.eta}, {"tau", p.tau}, {"beta", p.beta}, {"gamma", p.gamma}, {"sigma_scale", p.sigma_scale}};
}

void from_json(const json& j, EmaxPriors& p) {
    merge_if(j, "eta", p.eta);
    merge_if(j, "tau", p.tau);
    merge_if(j, "beta", p.beta);
    merge_if(j, "gamma", p.gamma);
    read_if(j, "sigma_scale", p.sigma_scale);
}

void to_json(json& j, const Cutoffs& c) {
    j = {{"C_T1", c.tox_stop},   {"C_S1", c.futility_stop}, {"C_T", c.tox_elim},
         {"C_S", c.futility_elim}, {"C_E", c.efficacy},      {"C_T2", c.tox_drop},
         {"C_S2", c.futility_drop}, {"C_DRI", c.dri},        {"C_1", c.plateau},
         {"C_2", c.response}};
}

void from_json(const json& j, Cutoffs& c) {
    read_if(j, "C_T1", c.tox_stop);
    read_if(j, "C_S1", c.futility_stop);
    read_if(j, "C_T", c.tox_elim);
    read_if(j, "C_S", c.futility_elim);
    read_if(j, "C_E", c.efficacy);
    read_if(j, "C_T2", c.tox_drop);
    read_if(j, "C_S2", c.futility_drop);
    read_if(j, "C_DRI", c.dri);
    read_if(j, "C_1", c.plateau);
    read_if(j, "C_2", c.response);
}

std::string to_string(Stage1Mode m) { return m == Stage1Mode::ModelBased ? "model-based" : "model-assisted"; }

std::string to_string(TdrMode m) {
    switch (m) {
        case TdrMode::Discrete: return "discrete";
        case TdrMode::Continuous: return "continuous";
        case TdrMode::Extrapolated: return "extrapolated";
    }
    return "?";
}

std::string to_string(RandScheme m) {
    switch (m) {
        case RandScheme::Equal: return "equal";
        case RandScheme::BalanceToM: return "balance-to-M";
        case RandScheme::Adaptive: return "adaptive";
    }
    return "?";
}

std::string to_string(SelectionRule m) { return m == SelectionRule::Posterior ? "posterior" : "point"; }
std::string to_string(Rp2sRule m) { return m == Rp2sRule::PosteriorMean ? "mean" : "probability"; }

Stage1Mode parse_stage1_mode(const std::string& s) {
    if (s == "model-based") return Stage1Mode::ModelBased;
    if (s == "model-assisted") return Stage1Mode::ModelAssisted;
    throw ValidationError("unknown stage1_mode '" + s + "'");
}

TdrMode parse_tdr_mode(const std::string& s) {
    if (s == "discrete") return TdrMode::Discrete;
    if (s == "continuous") return TdrMode::Continuous;
    if (s == "extrapolated") return TdrMode::Extrapolated;
    throw ValidationError("unknown tdr_mode '" + s + "'");
}

RandScheme parse_rand_scheme(const std::string& s) {
    if (s == "equal") return RandScheme::Equal;
    if (s == "balance-to-M") return RandScheme::BalanceToM;
    if (s == "adaptive") return RandScheme::Adaptive;
    throw ValidationError("unknown rand_scheme '" + s + "'");
}

SelectionRule parse_selection_rule(const std::string& s) {
    if (s == "posterior") return SelectionRule::Posterior;
    if (s == "point") return SelectionRule::Point;
    throw ValidationError("unknown selection_rule '" + s + "'");
}

Rp2sRule parse_rp2s_rule(const std::string& s) {
    if (s == "mean") return Rp2sRule::PosteriorMean;
    if (s == "probability") return Rp2sRule::PosteriorProbability;
    throw ValidationError("unknown rp2s_rule '" + s + "'");
}

Phase parse_phase(const std::string& s) {
    if (s == "stage1") return Phase::Stage1;
    if (s == "stage2") return Phase::Stage2;
    if (s == "done") return Phase::Done;
    throw ValidationError("unknown stage '" + s + "'");
}

TrialStatus parse_status(const std::string& s) {
    if (s == "active") return TrialStatus::Active;
    if (s == "stopped-toxicity") return TrialStatus::StoppedToxicity;
    if (s == "stopped-futility") return TrialStatus::StoppedFutility;
    if (s == "completed") return TrialStatus::Completed;
    throw ValidationError("unknown status '" + s + "'");
}

void to_json(json& j, const DesignConfig& c) {
    j = {{"grid", c.grid},
         {"phi_T", c.phi_T},
         {"phi_S", c.phi_S},
         {"phi_E", c.phi_E},
         {"cohort_size", c.cohort_size},
         {"n1_cohorts", c.n1_cohorts},
         {"M", c.per_dose_cap},
         {"K", c.max_rp2s},
         {"n2_max", c.n2_max},
         {"delta", c.delta},
         {"cutoffs", c.cutoffs},
         {"stage1_mode", to_string(c.stage1_mode)},
         {"tdr_mode", to_string(c.tdr_mode)},
         {"rand_scheme", to_string(c.rand_scheme)},
         {"selection_rule", to_string(c.selection_rule)},
         {"rp2s_rule", to_string(c.rp2s_rule)},
         {"allow_dose_addition", c.allow_dose_addition},
         {"alpha0", c.alpha0},
         {"alpha_prior_rate", c.alpha_prior_rate},
         {"emax_priors", c.emax_priors},
         {"efficacy_prior", c.efficacy_prior},
         {"mcmc", c.mcmc}};
}

void from_json(const json& j, DesignConfig& c) {
    if (!j.is_object()) throw ValidationError("design config must be a JSON object");
    reject_unknown_keys(j, json(c), "");
    merge_if(j, "grid", c.grid);
    read_if(j, "phi_T", c.phi_T);
    read_if(j, "phi_S", c.phi_S);
    read_if(j, "phi_E", c.phi_E);
    read_if(j, "cohort_size", c.cohort_size);
    read_if(j, "n1_cohorts", c.n1_cohorts);
    read_if(j, "M", c.per_dose_cap);
    read_if(j, "K", c.max_rp2s);
    read_if(j, "n2_max", c.n2_max);
    read_if(j, "delta", c.delta);
    merge_if(j, "cutoffs", c.cutoffs);
    if (j.contains("stage1_mode")) c.stage1_mode = parse_stage1_mode(j.at("stage1_mode").get<std::string>());
    if (j.contains("tdr_mode")) c.tdr_mode = parse_tdr_mode(j.at("tdr_mode").get<std::string>());
    if (j.contains("rand_scheme")) c.rand_scheme = parse_rand_scheme(j.at("rand_scheme").get<std::string>());
    if (j.contains("selection_rule")) {
        c.selection_rule = parse_selection_rule(j.at("selection_rule").get<std::string>());
    }
    if (j.contains("rp2s_rule")) c.rp2s_rule = parse_rp2s_rule(j.at("rp2s_rule").get<std::string>());
    read_if(j, "allow_dose_addition", c.allow_dose_addition);
    read_if(j, "alpha0", c.alpha0);
    read_if(j, "alpha_prior_rate", c.alpha_prior_rate);
    merge_if(j, "emax_priors", c.emax_priors);
    merge_if(j, "efficacy_prior", c.efficacy_prior);
    merge_if(j, "mcmc", c.mcmc);
}

void to_json(json& j, const PatientRecord& p) {
    j = {{"id", p.id},       {"dose_index", p.level},         {"y_T", p.y_T},
         {"y_S", p.y_S},     {"y_E", p.y_E ? json(*p.y_E) : json("pending")},
         {"enroll_order", p.enroll_order}, {"stage", p.stage}};
}

namespace {

std::optional<int> read_efficacy(const json& j) {
    if (!j.contains("y_E")) return std::nullopt;
    const auto& v = j.at("y_E");
    if (v.is_null() || (v.is_string() && v.get<std::string>() == "pending")) return std::nullopt;
    if (v.is_string()) throw ValidationError("y_E must be 0, 1 or \"pending\"");
    return v.get<int>();
}

}  // namespace

void from_json(const json& j, PatientRecord& p) {
    p.id = j.at("id").get<int>();
    p.level = j.at("dose_index").get<int>();
    p.y_T = j.at("y_T").get<int>();
    p.y_S = j.at("y_S").get<double>();
    p.y_E = read_efficacy(j);
    p.enroll_order = j.at("enroll_order").get<int>();
    p.stage = j.at("stage").get<int>();
}

void to_json(json& j, const Outcome& o) {
    j = {{"y_T", o.y_T}, {"y_S", o.y_S}, {"y_E", o.y_E ? json(*o.y_E) : json("pending")}};
}

void from_json(const json& j, Outcome& o) {
    if (!j.contains("y_T") || !j.contains("y_S")) throw ValidationError("outcome needs y_T and y_S");
    if (!j.at("y_S").is_number()) throw ValidationError("y_S must be numeric");
    o.y_T = j.at("y_T").get<int>();
    o.y_S = j.at("y_S").get<double>();
    o.y_E = read_efficacy(j);
}

void to_json(json& j, const Tdr& t) {
    const char* kind = t.kind == TdrKind::Empty ? "empty" : t.kind == TdrKind::Discrete ? "discrete" : "continuous";
    j = {{"kind", kind}, {"lo", t.lo}, {"hi", t.hi}, {"lo_dose", t.lo_dose}, {"hi_dose", t.hi_dose}};
}

void from_json(const json& j, Tdr& t) {
    const auto kind = j.at("kind").get<std::string>();
    t.kind = kind == "discrete" ? TdrKind::Discrete : kind == "continuous" ? TdrKind::Continuous : TdrKind::Empty;
    t.lo = j.at("lo").get<int>();
    t.hi = j.at("hi").get<int>();
    t.lo_dose = j.at("lo_dose").get<double>();
    t.hi_dose = j.at("hi_dose").get<double>();
}

void to_json(json& j, const PendingCohort& c) { j = {{"dose_index", c.level}, {"size", c.size}}; }

void from_json(const json& j, PendingCohort& c) {
    c.level = j.at("dose_index").get<int>();
    c.size = j.at("size").get<int>();
}

void to_json(json& j, const LogEntry& e) {
    j = {{"seq", e.seq}, {"rule", e.rule}, {"inputs", e.inputs}, {"outcome", e.outcome}};
}

void from_json(const json& j, LogEntry& e) {
    e.seq = j.at("seq").get<int>();
    e.rule = j.at("rule").get<std::string>();
    e.inputs = j.at("inputs");
    e.outcome = j.at("outcome");
}

namespace {

json opt_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void to_json(json& j, const TrialState& s) {
    j = {{"config", s.config},
         {"patients", s.patients},
         {"j_T", s.j_T},
         {"j_S", s.j_S},
         {"stage", to_string(s.stage)},
         {"eliminated_high", opt_json(s.eliminated_high)},
         {"eliminated_low", opt_json(s.eliminated_low)},
         {"tdr", s.tdr},
         {"rp2s", s.rp2s},
         {"dropped_stage2", s.dropped},
         {"status", to_string(s.status)},
         {"terminal_reason", s.terminal_reason},
         {"pending", s.pending},
         {"final_analysis", s.final_analysis},
         {"decision_log", s.decision_log}};
}

void from_json(const json& j, TrialState& s) {
    s = TrialState{};
    s.config = DesignConfig{};
    from_json(j.at("config"), s.config);
    s.patients = j.at("patients").get<std::vector<PatientRecord>>();
    s.j_T = j.at("j_T").get<int>();
    s.j_S = j.at("j_S").get<int>();
    s.stage = parse_phase(j.at("stage").get<std::string>());
    s.eliminated_high = j.at("eliminated_high").is_null() ? std::nullopt
                                                          : std::optional<int>(j.at("eliminated_high").get<int>());
    s.eliminated_low = j.at("eliminated_low").is_null() ? std::nullopt
                                                        : std::optional<int>(j.at("eliminated_low").get<int>());
    s.tdr = j.at("tdr").get<Tdr>();
    s.rp2s = j.at("rp2s").get<std::vector<int>>();
    s.dropped = j.at("dropped_stage2").get<std::vector<int>>();
    s.status = parse_status(j.at("status").get<std::string>());
    s.terminal_reason = j.at("terminal_reason").get<std::string>();
    s.pending = j.at("pending").get<std::vector<PendingCohort>>();
    s.final_analysis = j.at("final_analysis");
    s.decision_log = j.at("decision_log").get<std::vector<LogEntry>>();
}

json encode_trial(const TrialState& s) {
    json j = s;
    j["schema_version"] = kSchemaVersion;
    return j;
}

TrialState decode_trial(const json& j) {
    if (!j.contains("schema_version")) throw ValidationError("trial document missing schema_version");
    const int v = j.at("schema_version").get<int>();
    if (v != kSchemaVersion) {
        throw ValidationError("unsupported schema_version " + std::to_string(v));
    }
    return j.get<TrialState>();
}

}  // namespace droid
