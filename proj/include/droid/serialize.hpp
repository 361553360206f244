// JSON encoding for persisted types. Decoders for configuration objects only
// overwrite the keys that are present, so a partial document can be layered
// over reference_design().

#pragma once

#include "droid/core.hpp"

namespace droid {

inline constexpr int kSchemaVersion = 1;

void to_json(json& j, const DoseGrid& g);
void from_json(const json& j, DoseGrid& g);
void to_json(json& j, const GammaPrior& g);
void from_json(const json& j, GammaPrior& g);
void to_json(json& j, const BetaPrior& b);
void from_json(const json& j, BetaPrior& b);
void to_json(json& j, const McmcSettings& m);
void from_json(const json& j, McmcSettings& m);
void to_json(json& j, const EmaxPriors& p);
void from_json(const json& j, EmaxPriors& p);
void to_json(json& j, const Cutoffs& c);
void from_json(const json& j, Cutoffs& c);
void to_json(json& j, const DesignConfig& c);
void from_json(const json& j, DesignConfig& c);
void to_json(json& j, const PatientRecord& p);
void from_json(const json& j, PatientRecord& p);
void to_json(json& j, const Outcome& o);
void from_json(const json& j, Outcome& o);
void to_json(json& j, const Tdr& t);
void from_json(const json& j, Tdr& t);
void to_json(json& j, const PendingCohort& c);
void from_json(const json& j, PendingCohort& c);
void to_json(json& j, const LogEntry& e);
void from_json(const json& j, LogEntry& e);
void to_json(json& j, const TrialState& s);
void from_json(const json& j, TrialState& s);

std::string to_string(Stage1Mode m);
std::string to_string(TdrMode m);
std::string to_string(RandScheme m);
std::string to_string(SelectionRule m);
std::string to_string(Rp2sRule m);

Stage1Mode parse_stage1_mode(const std::string& s);
TdrMode parse_tdr_mode(const std::string& s);
RandScheme parse_rand_scheme(const std::string& s);
SelectionRule parse_selection_rule(const std::string& s);
Rp2sRule parse_rp2s_rule(const std::string& s);
Phase parse_phase(const std::string& s);
TrialStatus parse_status(const std::string& s);

// Canonical trial-state document (carries schema_version).
json encode_trial(const TrialState& s);
TrialState decode_trial(const json& j);

}  // namespace droid
