#include "droid/store.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "droid/serialize.hpp"

namespace droid::io {

namespace fs = std::filesystem;

json to_json(const TrialEnvelope& e) {
    return json{{"schema_version", kSchemaVersion},
                {"trial_id", e.trial_id},
                {"revision", e.revision},
                {"created", e.created},
                {"updated", e.updated},
                {"state", encode_trial(e.state)}};
}

TrialEnvelope envelope_from_json(const json& j) {
    TrialEnvelope e;
    e.trial_id = j.at("trial_id").get<std::string>();
    e.revision = j.at("revision").get<int>();
    e.created = j.value("created", "");
    e.updated = j.value("updated", "");
    e.state = decode_trial(j.at("state"));
    return e;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::FILE* f = std::fopen(tmp.c_str(), "wb");
        if (!f) throw IoError("cannot write " + tmp.string());
        const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size() && std::fflush(f) == 0 &&
                        ::fsync(fileno(f)) == 0;
        std::fclose(f);
        if (!ok) {
            fs::remove(tmp);
            throw IoError("cannot write " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot replace " + path.string() + ": " + ec.message());
    }
}

TrialEnvelope read_envelope(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("no trial file at " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("trial file " + path.string() + " is not valid JSON");
    }
    return envelope_from_json(j);
}

void save_envelope(const fs::path& path, const TrialEnvelope& env, std::optional<int> base_revision) {
    if (base_revision && fs::exists(path)) {
        if (read_envelope(path).revision != *base_revision) throw ConflictError("state changed on disk");
    }
    write_atomic(path, to_json(env).dump(1) + "\n");
}

TrialStore::TrialStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path TrialStore::path_for(const std::string& id) const {
    for (char c : id) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-') throw NotFoundError("unknown trial " + id);
    }
    return dir_ / (id + ".json");
}

std::mutex& TrialStore::lock_for(const std::string& id) {
    std::lock_guard g(map_mutex_);
    auto& m = locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

TrialEnvelope TrialStore::create(const DesignConfig& cfg) {
    validate_config(cfg);
    static std::mutex id_mutex;
    static std::mt19937_64 id_rng{std::random_device{}()};
    TrialEnvelope e;
    {
        std::lock_guard g(id_mutex);
        do {
            std::ostringstream os;
            os << "t-" << std::hex << id_rng();
            e.trial_id = os.str();
        } while (fs::exists(path_for(e.trial_id)));
    }
    e.created = e.updated = utc_timestamp();
    e.state = new_trial(cfg);
    write_atomic(path_for(e.trial_id), to_json(e).dump(1) + "\n");
    return e;
}

TrialEnvelope TrialStore::load(const std::string& id) const {
    const auto p = path_for(id);
    if (!fs::exists(p)) throw NotFoundError("unknown trial " + id);
    return read_envelope(p);
}

TrialEnvelope TrialStore::mutate(const std::string& id, std::optional<int> expected_revision,
                                 const std::function<void(TrialState&)>& fn) {
    std::lock_guard g(lock_for(id));
    TrialEnvelope e = load(id);
    if (expected_revision && *expected_revision != e.revision) {
        throw ConflictError("revision conflict: expected " + std::to_string(*expected_revision) + ", trial is at " +
                            std::to_string(e.revision));
    }
    const auto before = e.state.decision_log.size();
    fn(e.state);
    if (e.state.decision_log.size() == before) return e;
    e.revision += 1;
    e.updated = utc_timestamp();
    write_atomic(path_for(id), to_json(e).dump(1) + "\n");
    return e;
}

}  // namespace droid::io
