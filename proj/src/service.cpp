#include "droid/service.hpp"

#include <regex>

#include <httplib.h>

#include "droid/engine.hpp"
#include "droid/serialize.hpp"

namespace droid::io {

namespace {

Response error(int status, const std::string& code, const std::string& message) {
    return {status, {{"code", code}, {"message", message}}};
}

json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    json j = json::parse(body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
}

std::optional<int> expected_revision(const json& body, bool required) {
    if (body.contains("expected_revision") && !body.at("expected_revision").is_null()) {
        if (!body.at("expected_revision").is_number_integer()) throw ValidationError("expected_revision must be an integer");
        return body.at("expected_revision").get<int>();
    }
    if (required) throw ValidationError("expected_revision is required");
    return std::nullopt;
}

json envelope_view(const TrialEnvelope& e) { return to_json(e); }

}  // namespace

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex trial_re(R"(^/trials/([A-Za-z0-9-]+)(/[a-z-]+)?$)");
    try {
        if (path == "/healthz") {
            if (method != "GET") return error(405, "method-not-allowed", "use GET");
            return {200, {{"status", "ok"}, {"schema_version", kSchemaVersion}}};
        }
        if (path == "/trials") {
            if (method != "POST") return error(405, "method-not-allowed", "use POST");
            DesignConfig cfg = reference_design();
            from_json(parse_body(body), cfg);
            return {201, envelope_view(store_.create(cfg))};
        }
        std::smatch m;
        if (!std::regex_match(path, m, trial_re)) return error(404, "not-found", "no route for " + path);
        const std::string id = m[1];
        const std::string sub = m[2];

        if (sub.empty()) {
            if (method != "GET") return error(405, "method-not-allowed", "use GET");
            return {200, envelope_view(store_.load(id))};
        }
        if (sub == "/cohorts" && method == "POST") {
            const json b = parse_body(body);
            if (!b.contains("dose_index")) throw ValidationError("dose_index is required");
            if (!b.contains("outcomes") || !b.at("outcomes").is_array()) throw ValidationError("outcomes must be an array");
            const int level = b.at("dose_index").get<int>();
            const auto outcomes = b.at("outcomes").get<std::vector<Outcome>>();
            const auto e = store_.mutate(id, expected_revision(b, true),
                                         [&](TrialState& s) { engine::enroll(s, level, outcomes); });
            return {200, envelope_view(e)};
        }
        if (sub == "/efficacy" && method == "POST") {
            const json b = parse_body(body);
            const int pid = b.at("patient_id").get<int>();
            const int y = b.at("y_E").get<int>();
            const auto e = store_.mutate(id, expected_revision(b, false),
                                         [&](TrialState& s) { record_efficacy(s, pid, y); });
            return {200, envelope_view(e)};
        }
        if (sub == "/recommendation" && method == "GET") {
            json rec;
            const auto e = store_.mutate(id, std::nullopt, [&](TrialState& s) { rec = engine::recommend(s); });
            return {200, {{"trial_id", id}, {"revision", e.revision}, {"recommendation", rec}}};
        }
        if (sub == "/posteriors" && method == "GET") {
            const auto e = store_.load(id);
            json out = engine::posterior_summary(e.state);
            out["trial_id"] = id;
            out["revision"] = e.revision;
            return {200, out};
        }
        if (sub == "/analysis" && method == "GET") {
            const auto e = store_.load(id);
            return {200, {{"trial_id", id}, {"revision", e.revision}, {"analysis", engine::analysis_summary(e.state)}}};
        }
        if (sub == "/advance-stage" && method == "POST") {
            const json b = parse_body(body);
            json result;
            const auto e = store_.mutate(id, expected_revision(b, false),
                                         [&](TrialState& s) { result = engine::advance_stage(s); });
            return {200, {{"result", result}, {"envelope", envelope_view(e)}}};
        }
        if (sub == "/final-analysis" && method == "POST") {
            const json b = parse_body(body);
            json result;
            const auto e = store_.mutate(id, expected_revision(b, false), [&](TrialState& s) {
                result = stage2::to_json(engine::run_final_analysis(s));
            });
            return {200, {{"final_analysis", result}, {"envelope", envelope_view(e)}}};
        }
        return error(404, "not-found", "no route for " + method + " " + path);
    } catch (const ValidationError& e) {
        return error(400, "validation", e.what());
    } catch (const ConflictError& e) {
        return error(409, "conflict", e.what());
    } catch (const NotFoundError& e) {
        return error(404, "not-found", e.what());
    } catch (const json::exception& e) {
        return error(400, "validation", std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
        return error(500, "internal", e.what());
    }
}

void bind_routes(httplib::Server& server, Service& service) {
    auto route = [&service](const httplib::Request& req, httplib::Response& res) {
        const auto r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get(R"(/.*)", route);
    server.Post(R"(/.*)", route);
}

bool serve(Service& service, const std::string& host, int port) {
    httplib::Server server;
    bind_routes(server, service);
    return server.listen(host, port);
}

}  // namespace droid::io
