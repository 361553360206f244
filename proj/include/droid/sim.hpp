// Scenario calibration, correlated outcome generation, trial replication,
// the CRM comparator and operating-characteristic aggregation.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "droid/core.hpp"
#include "droid/random.hpp"
#include "droid/stage2.hpp"

namespace droid::sim {

struct Scenario {
    std::string name;
    std::vector<double> toxicity;  // true marginal Pr(Y_T = 1) per dose
    std::vector<double> orr;       // true marginal Pr(Y_E = 1) per dose
    std::vector<double> pd;        // true mean PD per dose
    std::optional<int> optimal_dose;
    double sigma_true = 0.1;
    double tau0 = 1.0;
    double xi1 = 1.0;
    double zeta1 = 1.0;
    std::vector<double> xi0;    // calibrated toxicity intercepts
    std::vector<double> zeta0;  // calibrated ORR intercepts

    int size() const { return static_cast<int>(toxicity.size()); }
};

// E[expit(intercept + slope * Y + theta)] for Y ~ N(mean, sd^2), theta ~ N(0, tau0^2).
double expected_probability(double intercept, double slope, double mean, double sd, double tau0);

// Bisection root of expected_probability = target on [-30, 30].
double calibrate_intercept(double target, double slope, double mean, double sd, double tau0);

Scenario calibrate_scenario(Scenario s);

struct PatientDraw {
    double y_S = 0.0;
    int y_T = 0;
    int y_E = 0;
};

PatientDraw generate_patient(const Scenario& s, int level, Rng& rng);

// Reads {sigma_true, tau0, xi1, zeta1, scenarios: [...]} and calibrates each.
std::vector<Scenario> load_scenarios(const json& j);
std::vector<Scenario> load_scenarios_file(const std::string& path);

struct TrialResult {
    TrialState state;
    std::optional<stage2::FinalAnalysis> analysis;
    std::optional<int> selected;
    bool early_stop = false;
    bool poc = false;
};

TrialResult run_trial(DesignConfig design, const Scenario& scenario, std::uint64_t seed);

// Plain CRM with no stopping: returns the selected MTD and per-dose counts.
struct CrmResult {
    int selected = 0;
    std::vector<int> n;
};
CrmResult run_crm_trial(const DesignConfig& design, const Scenario& scenario, std::uint64_t seed);

struct OCReport {
    std::string scenario;
    std::string design;
    int n_reps = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<double> selection;     // per dose
    double none = 0.0;                 // no dose selected
    std::vector<double> mean_patients; // per dose
    double early_stop = 0.0;
    double no_poc = 0.0;
    double mean_total = 0.0;
    std::vector<int> max_patients;     // per dose, max over replications
    std::vector<int> selections_count;
    int none_count = 0;

    double pcs() const;
    std::optional<int> optimal_dose;
};

struct RunOptions {
    int threads = 1;
};

OCReport run_ocs(const DesignConfig& design, const std::string& design_name, const Scenario& scenario, int n_reps,
                 std::uint64_t seed, const RunOptions& opt = {});

OCReport run_crm_comparator(const DesignConfig& design, const Scenario& scenario, int n_reps, std::uint64_t seed,
                            const RunOptions& opt = {});

// Named designs: "droid-boin", "droid-crm", "crm".
DesignConfig named_design(const std::string& name);

std::string config_hash(const DesignConfig& cfg);

std::string oc_csv_header();
std::string oc_csv_rows(const OCReport& r);
json to_json(const OCReport& r);

}  // namespace droid::sim
