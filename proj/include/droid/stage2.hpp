// Stage-II randomization, safety/futility monitoring, optional dose
// re-addition, proof of concept via the dose-response index, and optimal-dose
// selection.

#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "droid/core.hpp"
#include "droid/random.hpp"

namespace droid::stage2 {

struct RandPolicy {
    RandScheme scheme = RandScheme::BalanceToM;
    int cap = 20;
    std::vector<double> desirability;  // per level; used by the adaptive scheme

    static RandPolicy from_state(const TrialState& state, const PosteriorSnapshot& snapshot);
};

// RP2S levels that are not dropped and still have room under the cap.
std::vector<int> eligible_levels(const TrialState& state, int cap);

// Randomization probabilities over eligible levels, indexed by level - 1.
std::vector<double> randomization_probabilities(const TrialState& state, const RandPolicy& policy);

// Throws ValidationError when no level is eligible.
int randomize_next(const TrialState& state, const RandPolicy& policy, Rng& rng);

struct MonitorResult {
    std::vector<int> dropped;  // full monotone-closed drop set over the grid
    std::vector<double> tox_prob;
    std::vector<double> futility_prob;
};

MonitorResult stage2_monitor(const TrialState& state, const PosteriorSnapshot& snapshot);

// Isotonic-pooled posterior probabilities used by model-assisted monitoring.
std::vector<double> isotonic_tox_exceed(std::span<const DoseData> data, double phi_T);
std::vector<double> isotonic_futility(std::span<const DoseData> data, double phi_S);

std::vector<int> refresh_rp2s(const TrialState& state, const PosteriorSnapshot& snapshot);

// Fraction of Emax draws (eta, tau, beta, gamma, sigma) with
// mu(dose_low) < delta * mu(dose_high).
double compute_dri(std::span<const std::array<double, 5>> draws, double dose_low, double dose_high, double delta);

enum class Poc { Established, NotEstablished };
Poc establish_poc(double dri, double c_dri);

// First dose of `surviving` (ascending) whose plateau and response
// probabilities both clear their cutoffs.
std::optional<int> select_optimal_posterior(std::span<const int> surviving, std::span<const double> prob_plateau,
                                            std::span<const double> prob_response, double c1, double c2);

// Per-draw evaluation of Pr(mu(d_j) >= delta mu(d_H)).
std::vector<double> plateau_probabilities(std::span<const std::array<double, 5>> draws,
                                          std::span<const double> doses, int highest_surviving, double delta);

std::optional<int> select_optimal_point(std::span<const int> surviving, std::span<const double> mu_hat,
                                        std::span<const double> pi_hat, double delta, double phi_E);

struct FinalAnalysis {
    double dri = 0.0;
    Poc poc = Poc::NotEstablished;
    std::optional<int> optimal;
    std::vector<int> surviving;
    SelectionRule criterion = SelectionRule::Posterior;
    int highest_tried = 0;
    int highest_surviving = 0;
    std::vector<int> n;
    std::vector<double> mu_hat;
    std::vector<double> pi_hat;
    std::vector<double> prob_plateau;
    std::vector<double> prob_response;
    double delta = 0.9;
    double c_dri = 0.7, c1 = 0.37, c2 = 0.15, phi_E = 0.3;
    std::string note;
};

FinalAnalysis final_analysis(const TrialState& state, const PosteriorSnapshot& snapshot);

json to_json(const FinalAnalysis& f);
FinalAnalysis final_analysis_from_json(const json& j);

}  // namespace droid::stage2
