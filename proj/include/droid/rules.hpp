// Stage-I decision engine: MAD/MTD candidate rules (model-based and
// model-assisted), elimination, the merge/split allocation step, stage-I
// stopping, and TDR/RP2S selection.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "droid/core.hpp"

namespace droid::rules {

struct BoinBoundaries {
    double lambda_e = 0.0;
    double lambda_d = 0.0;
    double gamma_e = 0.0;
    double gamma_d = 0.0;
};

BoinBoundaries boin_boundaries(double phi_T, double phi_S);

// Argmin |estimate - target| with ties broken to the lower level, then moved
// at most one level from `current`.
int mad_candidate_model_based(int j_S, std::span<const double> mu_hat, double phi_S);
int mtd_candidate_model_based(int j_T, std::span<const double> p_hat, double phi_T);

struct Eliminated {
    std::optional<int> high;  // this level and above are out for toxicity
    std::optional<int> low;   // this level and below are out for futility

    bool blocks(int level) const { return (high && level >= *high) || (low && level <= *low); }
    bool all(int J) const;
};

int mad_candidate_model_assisted(int j_S, int n_at_level, double mu_bar, const BoinBoundaries& b, int J,
                                 const Eliminated& elim = {});
int mtd_candidate_model_assisted(int j_T, int n_at_level, double p_bar, const BoinBoundaries& b, int J,
                                 const Eliminated& elim = {});

// Model-assisted posteriors behind elimination and stopping.
inline constexpr int kEvidenceFloor = 3;
double pooled_pd_variance(std::span<const DoseData> data);
double tox_exceed_probability(const DoseData& d, double phi_T);
double futility_probability(const DoseData& d, double pooled_variance, double phi_S);

struct EliminationResult {
    Eliminated eliminated;
    std::vector<double> tox_prob;
    std::vector<double> futility_prob;
};

EliminationResult elimination_check(std::span<const DoseData> data, double phi_T, double phi_S, double c_T,
                                    double c_S);

enum class DecisionKind { Single, Split, Stop };
enum class StopReason { None, Toxicity, Futility };

struct AllocationDecision {
    DecisionKind kind = DecisionKind::Single;
    int candidate_T = 1;
    int candidate_S = 1;
    StopReason reason = StopReason::None;
    std::vector<PendingCohort> cohorts;
    json trace;
};

const char* to_string(DecisionKind k);
const char* to_string(StopReason r);
json to_json(const AllocationDecision& d);

struct StopCheck {
    StopReason reason = StopReason::None;
    double tox_prob = 0.0;
    double futility_prob = 0.0;
};

StopCheck stage1_stopping(const TrialState& state, const PosteriorSnapshot& snapshot);

// Applies Step 2 given the two candidates and the remaining stage-I budget.
AllocationDecision allocate_candidates(int candidate_T, int candidate_S, int cohort_size, int remaining_budget);

AllocationDecision next_allocation(const TrialState& state, const PosteriorSnapshot& snapshot);

// Discrete TDR from per-dose estimates. `eligible` marks levels that may enter
// the range (tried and not eliminated).
Tdr select_tdr_discrete(std::span<const double> p_est, std::span<const double> mu_est,
                        const std::vector<bool>& eligible, double phi_T, double phi_S);

// Isotonic per-dose estimates over tried levels; untried levels are NaN.
std::vector<double> isotonic_tox(std::span<const DoseData> data);
std::vector<double> isotonic_pd(std::span<const DoseData> data);

Tdr select_tdr(const TrialState& state, const PosteriorSnapshot& snapshot, TdrMode mode);

std::vector<int> select_rp2s(const Tdr& tdr, std::span<const double> pi_hat, const std::vector<bool>& eligible,
                             int K, double phi_E);

// Applies the configured gate (posterior mean or posterior probability) on
// observed efficacy data.
std::vector<int> select_rp2s(const Tdr& tdr, std::span<const DoseData> data, const DesignConfig& cfg);

struct DecisionTableRow {
    int n = 0;
    int escalate_max = 0;                  // escalate if DLTs <= this
    int deescalate_min = 0;                // de-escalate if DLTs >= this
    std::optional<int> eliminate_min;      // eliminate if DLTs >= this
};

std::vector<DecisionTableRow> boin_decision_table(const DesignConfig& cfg);
std::string format_decision_table(const DesignConfig& cfg);

}  // namespace droid::rules
