#include "droid/sim.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "droid/engine.hpp"
#include "droid/inference.hpp"
#include "droid/rules.hpp"
#include "droid/serialize.hpp"

namespace droid::sim {

namespace inf = droid::inference;

namespace {

enum Stream : std::uint64_t { kMcmc = 11, kOutcomes = 12 };

struct HermiteRule {
    std::vector<double> x, w;
};

// Gauss-Hermite nodes for weight exp(-x^2) by Newton iteration on the
// orthonormal recurrence.
HermiteRule make_hermite(int n) {
    HermiteRule r;
    r.x.assign(n, 0.0);
    r.w.assign(n, 0.0);
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    const int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(n, 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * r.x[0];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * r.x[1];
        } else {
            z = 2.0 * z - r.x[i - 2];
        }
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::fabs(z - z1) <= 1e-14) break;
        }
        r.x[i] = z;
        r.x[n - 1 - i] = -z;
        r.w[i] = 2.0 / (pp * pp);
        r.w[n - 1 - i] = r.w[i];
    }
    return r;
}

const HermiteRule& hermite() {
    static const HermiteRule rule = make_hermite(80);
    return rule;
}

std::vector<double> read_vec(const json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("scenario missing ") + key);
    return j.at(key).get<std::vector<double>>();
}

}  // namespace

double expected_probability(double intercept, double slope, double mean, double sd, double tau0) {
    // slope * Y + theta is normal, so a one-dimensional rule suffices
    const double s = std::sqrt(slope * slope * sd * sd + tau0 * tau0);
    const double m = intercept + slope * mean;
    if (s == 0.0) return inf::expit(m);
    const auto& r = hermite();
    double acc = 0.0;
    for (std::size_t i = 0; i < r.x.size(); ++i) acc += r.w[i] * inf::expit(m + std::numbers::sqrt2 * s * r.x[i]);
    return acc / std::sqrt(std::numbers::pi);
}

double calibrate_intercept(double target, double slope, double mean, double sd, double tau0) {
    if (!(target > 0.0 && target < 1.0)) throw ValidationError("marginal probability outside (0,1)");
    double lo = -30.0, hi = 30.0;
    auto f = [&](double x) { return expected_probability(x, slope, mean, sd, tau0) - target; };
    if (f(lo) > 0.0 || f(hi) < 0.0) throw ValidationError("no root in [-30, 30] for marginal " + std::to_string(target));
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double v = f(mid);
        if (v == 0.0) return mid;
        (v < 0.0 ? lo : hi) = mid;
        if (hi - lo < 1e-13) break;
    }
    return 0.5 * (lo + hi);
}

Scenario calibrate_scenario(Scenario s) {
    const int J = s.size();
    if (static_cast<int>(s.orr.size()) != J || static_cast<int>(s.pd.size()) != J) {
        throw ValidationError("scenario vectors differ in length");
    }
    s.xi0.resize(J);
    s.zeta0.resize(J);
    for (int j = 0; j < J; ++j) {
        s.xi0[j] = calibrate_intercept(s.toxicity[j], s.xi1, s.pd[j], s.sigma_true, s.tau0);
        s.zeta0[j] = calibrate_intercept(s.orr[j], s.zeta1, s.pd[j], s.sigma_true, s.tau0);
    }
    return s;
}

PatientDraw generate_patient(const Scenario& s, int level, Rng& rng) {
    const int j = level - 1;
    PatientDraw p;
    p.y_S = s.pd[j] + s.sigma_true * std_normal(rng);
    const double theta = s.tau0 * std_normal(rng);
    const double u_T = uniform01(rng);
    const double u_E = uniform01(rng);
    p.y_T = u_T < inf::expit(s.xi0[j] + s.xi1 * p.y_S + theta) ? 1 : 0;
    p.y_E = u_E < inf::expit(s.zeta0[j] + s.zeta1 * p.y_S + theta) ? 1 : 0;
    return p;
}

std::vector<Scenario> load_scenarios(const json& j) {
    std::vector<Scenario> out;
    for (const auto& sj : j.at("scenarios")) {
        Scenario s;
        s.name = sj.value("name", "scenario " + std::to_string(out.size() + 1));
        s.toxicity = read_vec(sj, "toxicity");
        s.orr = read_vec(sj, "orr");
        s.pd = read_vec(sj, "pd");
        if (sj.contains("optimal_dose") && !sj.at("optimal_dose").is_null()) s.optimal_dose = sj.at("optimal_dose").get<int>();
        s.sigma_true = sj.value("sigma_true", j.value("sigma_true", 0.1));
        s.tau0 = sj.value("tau0", j.value("tau0", 1.0));
        s.xi1 = sj.value("xi1", j.value("xi1", 1.0));
        s.zeta1 = sj.value("zeta1", j.value("zeta1", 1.0));
        out.push_back(calibrate_scenario(std::move(s)));
    }
    return out;
}

std::vector<Scenario> load_scenarios_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read scenario file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("scenario file " + path + " is not valid JSON: " + e.what());
    }
    return load_scenarios(j);
}

TrialResult run_trial(DesignConfig design, const Scenario& scenario, std::uint64_t seed) {
    validate_config(design);
    if (scenario.size() != design.grid.size()) throw ValidationError("scenario and dose grid differ in size");
    design.mcmc.seed = derive_seed(seed, {kMcmc});
    Rng rng = make_rng(seed, {kOutcomes});

    TrialResult r;
    r.state = new_trial(design);
    auto& state = r.state;
    for (int guard = 0; guard < 10000; ++guard) {
        const json rec = engine::recommend(state);
        const std::string kind = rec.at("kind");
        if (kind == "stop") {
            r.early_stop = true;
            break;
        }
        if (kind == "complete") break;
        if (kind == "advance") {
            engine::advance_stage(state);
            continue;
        }
        if (kind == "final-analysis-due") {
            r.analysis = engine::run_final_analysis(state);
            r.selected = r.analysis->optimal;
            r.poc = r.analysis->poc == stage2::Poc::Established;
            break;
        }
        const auto cohorts = state.pending;
        for (const auto& c : cohorts) {
            std::vector<Outcome> outs;
            for (int i = 0; i < c.size; ++i) {
                const auto p = generate_patient(scenario, c.level, rng);
                outs.push_back({p.y_T, p.y_S, p.y_E});
            }
            engine::enroll(state, c.level, outs);
        }
    }
    return r;
}

CrmResult run_crm_trial(const DesignConfig& design, const Scenario& scenario, std::uint64_t seed) {
    const int J = design.grid.size();
    Rng rng = make_rng(seed, {kOutcomes});
    auto spec = inf::ToxicityModelSpec::from_config(design);
    auto mcmc = design.mcmc;

    CrmResult r;
    r.n.assign(J, 0);
    std::vector<inf::BinomialCount> counts(J);
    int level = 1;
    const int total = design.stage1_budget();
    std::vector<double> p_hat;
    for (int enrolled = 0, cohort = 0; enrolled < total; ++cohort) {
        const int size = std::min(design.cohort_size, total - enrolled);
        for (int i = 0; i < size; ++i) {
            const auto p = generate_patient(scenario, level, rng);
            counts[level - 1].n += 1;
            counts[level - 1].events += p.y_T;
        }
        r.n[level - 1] += size;
        enrolled += size;
        mcmc.seed = derive_seed(seed, {kMcmc, static_cast<std::uint64_t>(cohort)});
        p_hat = inf::fit_toxicity(counts, spec, mcmc).p_hat;
        if (enrolled < total) level = rules::mtd_candidate_model_based(level, p_hat, design.phi_T);
    }
    // MTD = highest dose whose estimate does not exceed the target; the lowest
    // dose when none qualifies
    int best = 1;
    for (int j = 1; j <= J; ++j) {
        if (p_hat[j - 1] <= design.phi_T) best = j;
    }
    r.selected = best;
    return r;
}

double OCReport::pcs() const {
    if (!optimal_dose) return none;
    return selection.at(*optimal_dose - 1);
}

namespace {

struct RepOutcome {
    std::optional<int> selected;
    std::vector<int> n;
    bool early_stop = false;
    bool no_poc = false;
};

template <class Run>
std::vector<RepOutcome> replicate(int n_reps, const RunOptions& opt, Run run) {
    std::vector<RepOutcome> out(n_reps);
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (int r = next++; r < n_reps; r = next++) {
            try {
                out[r] = run(r);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min(opt.threads, n_reps));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    return out;
}

OCReport fold(const std::vector<RepOutcome>& reps, int J) {
    OCReport r;
    r.n_reps = static_cast<int>(reps.size());
    r.selections_count.assign(J, 0);
    r.max_patients.assign(J, 0);
    std::vector<long> patients(J, 0);
    int stops = 0, no_poc = 0;
    long total = 0;
    for (const auto& rep : reps) {
        if (rep.selected) {
            ++r.selections_count[*rep.selected - 1];
        } else {
            ++r.none_count;
        }
        for (int j = 0; j < J; ++j) {
            patients[j] += rep.n[j];
            total += rep.n[j];
            r.max_patients[j] = std::max(r.max_patients[j], rep.n[j]);
        }
        stops += rep.early_stop;
        no_poc += rep.no_poc;
    }
    const double n = r.n_reps;
    for (int j = 0; j < J; ++j) {
        r.selection.push_back(r.selections_count[j] / n);
        r.mean_patients.push_back(patients[j] / n);
    }
    r.none = r.none_count / n;
    r.early_stop = stops / n;
    r.no_poc = no_poc / n;
    r.mean_total = total / n;
    return r;
}

}  // namespace

OCReport run_ocs(const DesignConfig& design, const std::string& design_name, const Scenario& scenario, int n_reps,
                 std::uint64_t seed, const RunOptions& opt) {
    if (n_reps < 1) throw ValidationError("reps must be >= 1");
    validate_config(design);
    const auto reps = replicate(n_reps, opt, [&](int r) {
        const auto t = run_trial(design, scenario, derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        RepOutcome o;
        o.selected = t.selected;
        o.n = patients_per_dose(t.state);
        o.early_stop = t.early_stop;
        o.no_poc = t.analysis ? !t.poc : false;
        return o;
    });
    auto report = fold(reps, design.grid.size());
    report.scenario = scenario.name;
    report.design = design_name;
    report.seed = seed;
    report.config_hash = config_hash(design);
    report.optimal_dose = scenario.optimal_dose;
    return report;
}

OCReport run_crm_comparator(const DesignConfig& design, const Scenario& scenario, int n_reps, std::uint64_t seed,
                            const RunOptions& opt) {
    if (n_reps < 1) throw ValidationError("reps must be >= 1");
    validate_config(design);
    const auto reps = replicate(n_reps, opt, [&](int r) {
        const auto t = run_crm_trial(design, scenario, derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        RepOutcome o;
        o.selected = t.selected;
        o.n = t.n;
        return o;
    });
    auto report = fold(reps, design.grid.size());
    report.scenario = scenario.name;
    report.design = "crm";
    report.seed = seed;
    report.config_hash = config_hash(design);
    report.optimal_dose = scenario.optimal_dose;
    return report;
}

DesignConfig named_design(const std::string& name) {
    DesignConfig cfg = reference_design();
    if (name == "droid-boin" || name == "crm") {
        cfg.stage1_mode = Stage1Mode::ModelAssisted;
    } else if (name == "droid-crm") {
        cfg.stage1_mode = Stage1Mode::ModelBased;
    } else {
        throw ValidationError("unknown design '" + name + "' (expected droid-boin, droid-crm or crm)");
    }
    return cfg;
}

std::string config_hash(const DesignConfig& cfg) {
    const std::string text = json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string oc_csv_header() { return "scenario,design,dose,selection_pct,mean_patients\n"; }

std::string oc_csv_rows(const OCReport& r) {
    std::ostringstream os;
    char buf[64];
    for (std::size_t j = 0; j < r.selection.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.1f,%.2f", 100.0 * r.selection[j], r.mean_patients[j]);
        os << '"' << r.scenario << "\"," << r.design << ',' << j + 1 << ',' << buf << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.1f,%.2f", 100.0 * r.none, r.mean_total);
    os << '"' << r.scenario << "\"," << r.design << ",none," << buf << '\n';
    return os.str();
}

json to_json(const OCReport& r) {
    return json{{"scenario", r.scenario},
                {"design", r.design},
                {"n_reps", r.n_reps},
                {"seed", r.seed},
                {"config_hash", r.config_hash},
                {"selection", r.selection},
                {"none", r.none},
                {"mean_patients", r.mean_patients},
                {"max_patients", r.max_patients},
                {"early_stop", r.early_stop},
                {"no_poc", r.no_poc},
                {"mean_total", r.mean_total},
                {"optimal_dose", r.optimal_dose ? json(*r.optimal_dose) : json(nullptr)},
                {"pcs", r.pcs()}};
}

}  // namespace droid::sim
