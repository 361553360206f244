// droid: command-line front end for simulation, live trial conduct and the
// HTTP service.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "droid/engine.hpp"
#include "droid/rules.hpp"
#include "droid/serialize.hpp"
#include "droid/service.hpp"
#include "droid/sim.hpp"
#include "droid/store.hpp"

namespace fs = std::filesystem;
using namespace droid;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitConflict = 4;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ValidationError(path + " is not valid JSON: " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

// ---- simulate ------------------------------------------------------------

struct SimulateArgs {
    std::string design = "droid-boin";
    std::string scenarios;
    std::string config;
    std::string out;
    int reps = 1000;
    std::uint64_t seed = 7;
    int threads = 0;
    bool dose_addition = false;
    std::string selection;
};

void print_summary(const sim::OCReport& r) {
    std::printf("%-12s %-11s", r.scenario.c_str(), r.design.c_str());
    for (double s : r.selection) std::printf(" %6.3f", s);
    std::printf("  none %5.3f", r.none);
    if (r.optimal_dose) std::printf("  PCS %5.3f", r.pcs());
    std::printf("\n%-24s", "  no. patients");
    for (double n : r.mean_patients) std::printf(" %6.1f", n);
    std::printf("  total %5.1f\n", r.mean_total);
}

int run_simulate(const SimulateArgs& a) {
    if (a.reps < 1) throw ValidationError("reps must be >= 1");
    const auto scenarios = sim::load_scenarios_file(a.scenarios);
    std::vector<std::string> designs;
    if (a.design == "all") {
        designs = {"droid-boin", "droid-crm", "crm"};
    } else {
        designs = {a.design};
    }
    sim::RunOptions opt;
    opt.threads = a.threads > 0 ? a.threads : std::max(1u, std::thread::hardware_concurrency());

    std::string csv = sim::oc_csv_header();
    json reports = json::array();
    for (const auto& name : designs) {
        DesignConfig cfg = sim::named_design(name);
        if (!a.config.empty()) from_json(read_json_file(a.config), cfg);
        if (a.dose_addition) cfg.allow_dose_addition = true;
        if (!a.selection.empty()) cfg.selection_rule = parse_selection_rule(a.selection);
        validate_config(cfg);
        for (std::size_t i = 0; i < scenarios.size(); ++i) {
            const std::uint64_t seed = derive_seed(a.seed, {i});
            const auto r = name == "crm" ? sim::run_crm_comparator(cfg, scenarios[i], a.reps, seed, opt)
                                         : sim::run_ocs(cfg, name, scenarios[i], a.reps, seed, opt);
            print_summary(r);
            csv += sim::oc_csv_rows(r);
            reports.push_back(sim::to_json(r));
        }
    }
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text(fs::path(a.out) / "oc.csv", csv);
        json meta = {{"root_seed", a.seed}, {"reps", a.reps}, {"scenario_file", a.scenarios}, {"reports", reports}};
        write_text(fs::path(a.out) / "oc.json", meta.dump(2) + "\n");
    }
    return 0;
}

// ---- conduct -------------------------------------------------------------

struct ConductArgs {
    std::string trial;
    std::string config;
    std::optional<int> expected_revision;
    bool json_output = false;
    bool force = false;
    int dose = 0;
    std::vector<std::string> patients;
    int patient_id = 0;
    int y_E = 0;
};

Outcome parse_patient(const std::string& text) {
    std::stringstream ss(text);
    std::string t, s, e;
    if (!std::getline(ss, t, ',') || !std::getline(ss, s, ',')) {
        throw ValidationError("patient must be 'y_T,y_S[,y_E]' (got '" + text + "')");
    }
    std::getline(ss, e, ',');
    Outcome o;
    try {
        o.y_T = std::stoi(t);
        o.y_S = std::stod(s);
        if (!e.empty() && e != "pending") o.y_E = std::stoi(e);
    } catch (const std::logic_error&) {
        throw ValidationError("cannot parse patient '" + text + "'");
    }
    return o;
}

std::string describe(const json& rec) {
    const std::string kind = rec.at("kind");
    std::ostringstream os;
    if (kind == "single" || kind == "split" || kind == "randomize") {
        for (const auto& c : rec.at("cohorts")) {
            os << "cohort of " << c.at("size").get<int>() << " at dose " << c.at("dose_index").get<int>() << "\n";
        }
    } else if (kind == "stop") {
        os << "stop (" << rec.value("reason", "") << ")\n";
    } else {
        os << kind << ": " << rec.value("detail", "") << "\n";
    }
    return os.str();
}

// Loads, mutates and saves under the on-disk revision check.
template <class Fn>
io::TrialEnvelope mutate_file(const ConductArgs& a, Fn fn) {
    auto env = io::read_envelope(a.trial);
    const int base = env.revision;
    if (a.expected_revision && *a.expected_revision != base) throw ConflictError("state changed on disk");
    const auto before = env.state.decision_log.size();
    fn(env.state);
    if (env.state.decision_log.size() != before) {
        env.revision += 1;
        env.updated = io::utc_timestamp();
        io::save_envelope(a.trial, env, base);
    }
    return env;
}

int run_conduct(const std::string& sub, const ConductArgs& a) {
    if (sub == "new") {
        if (fs::exists(a.trial) && !a.force) throw ValidationError(a.trial + " already exists (use --force)");
        DesignConfig cfg = reference_design();
        if (!a.config.empty()) from_json(read_json_file(a.config), cfg);
        validate_config(cfg);
        io::TrialEnvelope env;
        env.trial_id = fs::path(a.trial).stem().string();
        env.created = env.updated = io::utc_timestamp();
        env.state = new_trial(cfg);
        io::write_atomic(a.trial, io::to_json(env).dump(1) + "\n");
        std::cout << "created " << a.trial << " (revision 0)\n";
        return 0;
    }
    if (sub == "next") {
        json rec;
        const auto env = mutate_file(a, [&](TrialState& s) { rec = engine::recommend(s); });
        if (a.json_output) {
            std::cout << json{{"revision", env.revision}, {"recommendation", rec}}.dump(2) << "\n";
        } else {
            std::cout << describe(rec);
            if (rec.contains("trace")) std::cout << "trace: " << rec.at("trace").dump() << "\n";
        }
        return 0;
    }
    if (sub == "enroll") {
        std::vector<Outcome> outs;
        for (const auto& p : a.patients) outs.push_back(parse_patient(p));
        const auto env = mutate_file(a, [&](TrialState& s) { engine::enroll(s, a.dose, outs); });
        std::cout << "enrolled " << outs.size() << " at dose " << a.dose << " (revision " << env.revision << ")\n";
        return 0;
    }
    if (sub == "efficacy") {
        const auto env = mutate_file(a, [&](TrialState& s) { record_efficacy(s, a.patient_id, a.y_E); });
        std::cout << "recorded y_E=" << a.y_E << " for patient " << a.patient_id << " (revision " << env.revision << ")\n";
        return 0;
    }
    if (sub == "advance") {
        json result;
        mutate_file(a, [&](TrialState& s) { result = engine::advance_stage(s); });
        std::cout << result.dump(2) << "\n";
        return 0;
    }
    if (sub == "analyze") {
        json summary;
        mutate_file(a, [&](TrialState& s) {
            if (engine::final_analysis_due(s)) engine::run_final_analysis(s);
            summary = engine::analysis_summary(s);
        });
        std::cout << summary.dump(2) << "\n";
        return 0;
    }
    if (sub == "show") {
        const auto env = io::read_envelope(a.trial);
        const auto& s = env.state;
        std::cout << "trial " << env.trial_id << " revision " << env.revision << "\n"
                  << "stage " << to_string(s.stage) << ", status " << to_string(s.status) << "\n"
                  << "patients per dose " << json(patients_per_dose(s)).dump() << "\n";
        if (!s.terminal_reason.empty()) std::cout << "reason: " << s.terminal_reason << "\n";
        return 0;
    }
    throw ValidationError("unknown conduct command " + sub);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DROID dose-ranging trial engine"};
    app.require_subcommand(1);

    SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "run operating-characteristic simulations");
    simulate->add_option("--design", sa.design, "droid-boin, droid-crm, crm or all")->capture_default_str();
    simulate->add_option("--scenarios", sa.scenarios, "scenario JSON file")->required();
    simulate->add_option("--config", sa.config, "design overrides (JSON, merged over the named design)");
    simulate->add_option("--reps", sa.reps, "replications per scenario")->capture_default_str();
    simulate->add_option("--seed", sa.seed, "root seed")->capture_default_str();
    simulate->add_option("--threads", sa.threads, "worker threads (0 = all cores)");
    simulate->add_option("--out", sa.out, "directory for oc.csv and oc.json");
    simulate->add_flag("--dose-addition", sa.dose_addition, "allow adding doses to RP2S during stage II");
    simulate->add_option("--selection", sa.selection, "optimal-dose rule: posterior or point");

    ConductArgs ca;
    std::string conduct_cmd;
    auto* conduct = app.add_subcommand("conduct", "run a live trial stored in a JSON file");
    conduct->add_option("--trial", ca.trial, "trial file")->required();
    conduct->add_option("--expected-revision", ca.expected_revision, "refuse unless the file is at this revision");
    conduct->require_subcommand(1);
    auto* c_new = conduct->add_subcommand("new", "create a trial");
    c_new->add_option("--config", ca.config, "design JSON merged over the reference design");
    c_new->add_flag("--force", ca.force, "overwrite an existing file");
    auto* c_next = conduct->add_subcommand("next", "print (and commit) the next recommendation");
    c_next->add_flag("--json", ca.json_output, "print JSON");
    auto* c_enroll = conduct->add_subcommand("enroll", "record a cohort");
    c_enroll->add_option("--dose", ca.dose, "dose index (1-based)")->required();
    c_enroll->add_option("--patient", ca.patients, "y_T,y_S[,y_E|pending] (repeat per patient)")->required();
    auto* c_eff = conduct->add_subcommand("efficacy", "record a delayed response");
    c_eff->add_option("--patient-id", ca.patient_id)->required();
    c_eff->add_option("--y-e", ca.y_E)->required();
    conduct->add_subcommand("advance", "close stage I (TDR and RP2S)");
    conduct->add_subcommand("analyze", "final analysis, or a pending summary before stage II completes");
    conduct->add_subcommand("show", "print a short status");

    std::string host = "127.0.0.1";
    int port = 8080;
    std::string state_dir;
    auto* serve = app.add_subcommand("serve", "start the HTTP service");
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--state-dir", state_dir, "trial directory (default $DROID_STATE_DIR or ./trials)");

    double phi_T = 0.3, phi_S = 0.1;
    int cohort_size = 3, cohorts = 12;
    auto* bounds = app.add_subcommand("boundaries", "print the model-assisted decision boundaries and table");
    bounds->add_option("--phi-t", phi_T)->capture_default_str();
    bounds->add_option("--phi-s", phi_S)->capture_default_str();
    bounds->add_option("--cohort-size", cohort_size)->capture_default_str();
    bounds->add_option("--cohorts", cohorts)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) return run_simulate(sa);
        if (*conduct) {
            for (auto* sub : conduct->get_subcommands()) return run_conduct(sub->get_name(), ca);
        }
        if (*serve) {
            if (state_dir.empty()) {
                const char* env = std::getenv("DROID_STATE_DIR");
                state_dir = env ? env : "trials";
            }
            io::TrialStore store(state_dir);
            io::Service service(store);
            std::cerr << "listening on " << host << ":" << port << " (state in " << state_dir << ")\n";
            if (!io::serve(service, host, port)) {
                std::cerr << "error: cannot bind " << host << ":" << port << "\n";
                return kExitIo;
            }
            return 0;
        }
        if (*bounds) {
            DesignConfig cfg = reference_design();
            cfg.phi_T = phi_T;
            cfg.phi_S = phi_S;
            cfg.cohort_size = cohort_size;
            cfg.n1_cohorts = cohorts;
            validate_config(cfg);
            std::cout << rules::format_decision_table(cfg);
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ConflictError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConflict;
    } catch (const NotFoundError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return 0;
}
