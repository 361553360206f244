// Trial driver shared by the simulator, the CLI and the HTTP service. Every
// state change goes through trial-core's commit, so a trial driven here can
// be replayed from its log.

#pragma once

#include <cstdint>
#include <vector>

#include "droid/core.hpp"
#include "droid/stage2.hpp"

namespace droid::engine {

// Seed for a posterior fit, derived from the trial seed and the log length so
// replaying a log reproduces every fit.
std::uint64_t fit_seed(const TrialState& state, std::uint64_t purpose);

PosteriorSnapshot build_snapshot(const TrialState& state, bool toxicity, bool emax, std::uint64_t seed);

// Returns the current recommendation. When nothing is pending and the trial
// can move, the allocation (or stop) is committed first.
json recommend(TrialState& state);

// Records a cohort and runs the post-cohort hooks (stage-II monitoring).
void enroll(TrialState& state, int level, const std::vector<Outcome>& outcomes);

// Stage-I close-out: elimination update, TDR and RP2S.
json advance_stage(TrialState& state);

bool final_analysis_due(const TrialState& state);

stage2::FinalAnalysis run_final_analysis(TrialState& state);

// Final analysis when present, otherwise a partial summary marked pending.
json analysis_summary(const TrialState& state);

// Per-dose estimates and quantile bands over a dose mesh.
json posterior_summary(const TrialState& state, int mesh_points = 50);

}  // namespace droid::engine
