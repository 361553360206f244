// Trial-core: design configuration, patient records and the trial-state ledger.
//
// Dose levels are 1-based everywhere in the public API (level 1 is the lowest
// dose). Per-dose vectors are indexed by level - 1.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace droid {

using json = nlohmann::json;

// Errors carry the HTTP-style category used by the service layer.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DoseGrid {
    std::vector<double> doses;
    std::vector<double> skeleton;

    int size() const { return static_cast<int>(doses.size()); }
};

struct GammaPrior {
    double shape = 1.0;
    double rate = 1.0;

    double mean() const { return shape / rate; }
    double sd() const;
};

struct BetaPrior {
    double a = 1.0;
    double b = 1.0;
};

enum class Stage1Mode { ModelBased, ModelAssisted };
enum class TdrMode { Discrete, Continuous, Extrapolated };
enum class RandScheme { Equal, BalanceToM, Adaptive };
enum class SelectionRule { Posterior, Point };
enum class Rp2sRule { PosteriorMean, PosteriorProbability };

struct McmcSettings {
    int burn_in = 2000;
    int draws = 2000;
    int thin = 1;
    std::uint64_t seed = 20220501;
};

struct EmaxPriors {
    GammaPrior eta{1.0, 10.0};
    GammaPrior tau{7.1, 17.8};
    GammaPrior beta{4.0, 8.0};
    GammaPrior gamma{1.0 / 9.0, 1.0 / 18.0};
    double sigma_scale = 0.5;  // half-normal scale on sigma
};

struct Cutoffs {
    double tox_stop = 0.95;       // C_T1
    double futility_stop = 0.95;  // C_S1
    double tox_elim = 0.95;       // C_T
    double futility_elim = 0.95;  // C_S
    double efficacy = 0.95;       // C_E
    double tox_drop = 0.95;       // C_T2
    double futility_drop = 0.95;  // C_S2
    double dri = 0.7;             // C_DRI
    double plateau = 0.37;        // C_1
    double response = 0.15;       // C_2
};

struct DesignConfig {
    DoseGrid grid;
    double phi_T = 0.3;
    double phi_S = 0.1;
    double phi_E = 0.3;
    int cohort_size = 3;
    int n1_cohorts = 12;
    int per_dose_cap = 20;  // M, total per dose including stage I
    int max_rp2s = 3;       // K
    int n2_max = 0;         // stage-II patient budget; 0 means "until caps are filled"
    double delta = 0.9;
    Cutoffs cutoffs;
    Stage1Mode stage1_mode = Stage1Mode::ModelAssisted;
    TdrMode tdr_mode = TdrMode::Discrete;
    RandScheme rand_scheme = RandScheme::BalanceToM;
    SelectionRule selection_rule = SelectionRule::Posterior;
    Rp2sRule rp2s_rule = Rp2sRule::PosteriorMean;
    bool allow_dose_addition = false;
    double alpha0 = 3.0;
    double alpha_prior_rate = 1.0;  // alpha ~ Exponential(rate)
    EmaxPriors emax_priors;
    BetaPrior efficacy_prior;
    McmcSettings mcmc;

    int stage1_budget() const { return n1_cohorts * cohort_size; }
};

// Configuration used in the published simulation study.
DesignConfig reference_design();

// Returns every violated invariant; an empty list means the config is valid.
std::vector<std::string> config_violations(const DesignConfig& cfg);

// Throws ValidationError listing all violations.
const DesignConfig& validate_config(const DesignConfig& cfg);

struct PatientRecord {
    int id = 0;
    int level = 1;
    int y_T = 0;
    double y_S = 0.0;
    std::optional<int> y_E;  // nullopt while the response assessment is pending
    int enroll_order = 0;
    int stage = 1;
};

struct Outcome {
    int y_T = 0;
    double y_S = 0.0;
    std::optional<int> y_E;
};

enum class Phase { Stage1, Stage2, Done };
enum class TrialStatus { Active, StoppedToxicity, StoppedFutility, Completed };

enum class TdrKind { Empty, Discrete, Continuous };

// Therapeutic dose range. For continuous ranges lo/hi are the grid levels
// that fall inside [lo_dose, hi_dose].
struct Tdr {
    TdrKind kind = TdrKind::Empty;
    int lo = 0;
    int hi = 0;
    double lo_dose = 0.0;
    double hi_dose = 0.0;

    bool empty() const { return kind == TdrKind::Empty || lo > hi || lo == 0; }
    bool contains(int level) const { return !empty() && level >= lo && level <= hi; }
};

struct PendingCohort {
    int level = 1;
    int size = 0;
};

struct LogEntry {
    int seq = 0;
    std::string rule;
    json inputs;
    json outcome;
};

struct TrialState {
    DesignConfig config;
    std::vector<PatientRecord> patients;
    int j_T = 1;
    int j_S = 1;
    Phase stage = Phase::Stage1;
    std::optional<int> eliminated_high;  // lowest level eliminated for toxicity
    std::optional<int> eliminated_low;   // highest level eliminated for futility
    Tdr tdr;
    std::vector<int> rp2s;
    std::vector<int> dropped;
    TrialStatus status = TrialStatus::Active;
    std::string terminal_reason;
    std::vector<PendingCohort> pending;
    json final_analysis;  // null until the final analysis has run
    std::vector<LogEntry> decision_log;
};

TrialState new_trial(const DesignConfig& cfg);

// Sufficient statistics per dose level.
struct DoseData {
    int n = 0;
    int tox = 0;
    int eff_n = 0;  // patients with observed Y_E
    int eff = 0;
    double pd_sum = 0.0;
    double pd_ssd = 0.0;  // sum of squared deviations from the dose mean

    double pd_mean() const { return n > 0 ? pd_sum / n : 0.0; }
    double tox_rate() const { return n > 0 ? static_cast<double>(tox) / n : 0.0; }
};

std::vector<DoseData> dose_data(const TrialState& state);
std::vector<int> patients_per_dose(const TrialState& state);
int stage_patient_count(const TrialState& state, int stage);
int highest_tried_level(const TrialState& state);
bool stage1_budget_exhausted(const TrialState& state);

// Per-dose posterior summaries and retained draws. Emax draws are stored as
// (eta, tau, beta, gamma, sigma) rows.
struct PosteriorSnapshot {
    std::vector<double> p_hat;
    std::vector<double> mu_hat;
    std::vector<double> pi_hat;
    std::vector<BetaPrior> pi_posterior;
    std::vector<double> alpha_draws;
    std::vector<std::array<double, 5>> emax_draws;
    std::vector<double> effective_doses;
    bool has_toxicity_fit = false;
    bool has_emax_fit = false;

    int draw_count() const;
};

// The only mutation path: applies an entry's outcome and appends it to the log.
void apply_entry(TrialState& state, LogEntry entry);

// Convenience wrapper assigning the next sequence number.
void commit(TrialState& state, std::string rule, json inputs, json outcome);

// Rebuilds a trial from its configuration and log.
TrialState replay(const DesignConfig& cfg, const std::vector<LogEntry>& log);

// Appends a cohort at `level`. The level must match a pending allocation.
void record_cohort(TrialState& state, int level, const std::vector<Outcome>& outcomes);

// Fills in a previously pending efficacy assessment.
void record_efficacy(TrialState& state, int patient_id, int y_E);

const char* to_string(Phase p);
const char* to_string(TrialStatus s);

}  // namespace droid
