// Trial persistence: one JSON envelope per trial, written atomically, with a
// revision number used for optimistic concurrency.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "droid/core.hpp"

namespace droid::io {

struct TrialEnvelope {
    std::string trial_id;
    int revision = 0;
    std::string created;
    std::string updated;
    TrialState state;
};

json to_json(const TrialEnvelope& e);
TrialEnvelope envelope_from_json(const json& j);

std::string utc_timestamp();

// Writes to a sibling temporary file, flushes, then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& text);

TrialEnvelope read_envelope(const std::filesystem::path& path);

// Persists `env` to `path` unless the file on disk no longer carries
// `base_revision`; throws ConflictError("state changed on disk") then.
void save_envelope(const std::filesystem::path& path, const TrialEnvelope& env, std::optional<int> base_revision);

class TrialStore {
public:
    explicit TrialStore(std::filesystem::path dir);

    TrialEnvelope create(const DesignConfig& cfg);
    TrialEnvelope load(const std::string& id) const;

    // Runs `fn` on a copy of the state under the trial's lock. The revision
    // advances by one when the decision log grew; a stale expected revision
    // raises ConflictError before `fn` runs.
    TrialEnvelope mutate(const std::string& id, std::optional<int> expected_revision,
                         const std::function<void(TrialState&)>& fn);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path path_for(const std::string& id) const;
    std::mutex& lock_for(const std::string& id);

    std::filesystem::path dir_;
    std::mutex map_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

}  // namespace droid::io
