#include <doctest.h>

#include <cmath>
#include <random>

#include "droid/sim.hpp"
#include "support.hpp"

using namespace droid;

namespace {

std::vector<sim::Scenario> reference_scenarios() {
    static const auto s = sim::load_scenarios_file(std::string(DROID_SOURCE_DIR) + "/data/scenarios9.json");
    return s;
}

// E[expit(b + slope Y + theta)] by Simpson's rule over the normal density of
// slope Y + theta.
double marginal_by_simpson(double b, double slope, double mean, double sd, double tau0) {
    const double s = std::sqrt(slope * slope * sd * sd + tau0 * tau0);
    const double m = b + slope * mean;
    const int n = 40000;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double z = lo + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * std::exp(-0.5 * z * z) * testing::expit(m + s * z);
    }
    return acc * h / 3.0 / std::sqrt(2.0 * M_PI);
}

DesignConfig quick(const std::string& name) {
    DesignConfig cfg = sim::named_design(name);
    cfg.mcmc.burn_in = 300;
    cfg.mcmc.draws = 300;
    return cfg;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("calibrated intercepts reproduce the marginals") {
    const auto sc = reference_scenarios();
    REQUIRE(sc.size() == 9);
    for (const auto& s : sc) {
        for (int j = 0; j < s.size(); ++j) {
            CAPTURE(s.name);
            CAPTURE(j);
            CHECK(std::fabs(marginal_by_simpson(s.xi0[j], s.xi1, s.pd[j], s.sigma_true, s.tau0) - s.toxicity[j]) < 1e-6);
            CHECK(std::fabs(marginal_by_simpson(s.zeta0[j], s.zeta1, s.pd[j], s.sigma_true, s.tau0) - s.orr[j]) < 1e-6);
        }
    }
}

TEST_CASE("scenario 1 dose 1 intercept agrees with Monte Carlo") {
    const auto s = reference_scenarios()[0];
    const double b = sim::calibrate_intercept(0.05, 1.0, 0.40, 0.1, 1.0);
    CHECK(b == s.xi0[0]);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 1.0);
    const int n = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = testing::expit(b + (0.40 + 0.1 * z(rng)) + z(rng));
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    CHECK(std::fabs(mean - 0.05) < 4 * se);
}

TEST_CASE("degenerate calibration and bracket failure") {
    CHECK(sim::calibrate_intercept(0.5, 0.0, 0.3, 0.1, 0.0) == 0.0);
    CHECK_THROWS_AS(sim::calibrate_intercept(1.0 - 1e-14, 0.0, 0.0, 0.1, 0.0), ValidationError);
    CHECK_THROWS_AS(sim::calibrate_intercept(1e-14, 0.0, 0.0, 0.1, 0.0), ValidationError);
    CHECK_THROWS_AS(sim::calibrate_intercept(1.0, 1.0, 0.0, 0.1, 1.0), ValidationError);
}

TEST_CASE("generated outcomes match the scenario marginals") {
    const auto s = reference_scenarios()[0];
    Rng rng = make_rng(77, {1});
    const int n = 1000000;
    long tox = 0, eff = 0;
    double ys = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto p = sim::generate_patient(s, 2, rng);
        tox += p.y_T;
        eff += p.y_E;
        ys += p.y_S;
    }
    CHECK(std::fabs(static_cast<double>(tox) / n - 0.10) < 0.001);
    CHECK(std::fabs(static_cast<double>(eff) / n - 0.50) < 0.0015);
    CHECK(std::fabs(ys / n - 0.57) < 0.001);
}

TEST_CASE("shared random effect induces positive association") {
    const auto s = reference_scenarios()[0];
    for (int level = 1; level <= 5; ++level) {
        Rng rng = make_rng(91, {static_cast<std::uint64_t>(level)});
        double c[2][2] = {{0, 0}, {0, 0}};
        for (int i = 0; i < 1000000; ++i) {
            const auto p = sim::generate_patient(s, level, rng);
            c[p.y_T][p.y_E] += 1;
        }
        CAPTURE(level);
        CHECK(c[1][1] * c[0][0] / (c[1][0] * c[0][1]) > 1.0);
    }
}

TEST_CASE("without random effect or slopes the outcomes are independent") {
    auto s = reference_scenarios()[0];
    s.tau0 = 0.0;
    s.xi1 = 0.0;
    s.zeta1 = 0.0;
    s = sim::calibrate_scenario(s);
    Rng rng = make_rng(5, {});
    const int n = 200000;
    double st = 0, se = 0, ste = 0;
    for (int i = 0; i < n; ++i) {
        const auto p = sim::generate_patient(s, 3, rng);
        st += p.y_T;
        se += p.y_E;
        ste += p.y_T * p.y_E;
    }
    const double pt = st / n, pe = se / n;
    const double corr = (ste / n - pt * pe) / std::sqrt(pt * (1 - pt) * pe * (1 - pe));
    CHECK(std::fabs(corr) < 4.0 / std::sqrt(n));
}

TEST_CASE("patient generation is deterministic for a seed") {
    const auto s = reference_scenarios()[3];
    Rng a = make_rng(123, {4, 5});
    Rng b = make_rng(123, {4, 5});
    for (int i = 0; i < 100; ++i) {
        const auto x = sim::generate_patient(s, 1 + i % 5, a);
        const auto y = sim::generate_patient(s, 1 + i % 5, b);
        CHECK(x.y_S == y.y_S);
        CHECK(x.y_T == y.y_T);
        CHECK(x.y_E == y.y_E);
    }
}

TEST_CASE("a uniformly toxic scenario stops early for toxicity") {
    sim::Scenario s = reference_scenarios()[0];
    s.toxicity.assign(5, 0.9);
    s = sim::calibrate_scenario(s);
    for (const char* design : {"droid-boin", "droid-crm"}) {
        int stopped = 0;
        for (int seed = 0; seed < 20; ++seed) {
            const auto r = sim::run_trial(quick(design), s, seed);
            if (r.early_stop && r.state.status == TrialStatus::StoppedToxicity) ++stopped;
            CHECK(!r.selected);
        }
        CAPTURE(design);
        CHECK(stopped >= 18);
    }
}

TEST_CASE("same seed gives a byte-identical trial") {
    const auto s = reference_scenarios()[1];
    const auto a = sim::run_trial(quick("droid-crm"), s, 42);
    const auto b = sim::run_trial(quick("droid-crm"), s, 42);
    REQUIRE(a.analysis.has_value() == b.analysis.has_value());
    if (a.analysis) CHECK(stage2::to_json(*a.analysis).dump() == stage2::to_json(*b.analysis).dump());
    CHECK(json(a.state.patients.size()) == json(b.state.patients.size()));
    CHECK(a.selected == b.selected);
}

TEST_CASE("a one-replication report is the trial's own outcome") {
    const auto s = reference_scenarios()[0];
    const auto cfg = sim::named_design("droid-boin");
    const auto rep = sim::run_ocs(cfg, "droid-boin", s, 1, 9);
    const auto t = sim::run_trial(cfg, s, derive_seed(9, {0}));
    double total = rep.none;
    for (int j = 0; j < 5; ++j) {
        CHECK(rep.selection[j] == (t.selected == j + 1 ? 1.0 : 0.0));
        total += rep.selection[j];
    }
    CHECK(rep.none == (t.selected ? 0.0 : 1.0));
    CHECK(total == 1.0);
    const auto counts = patients_per_dose(t.state);
    CHECK(rep.mean_patients == std::vector<double>(counts.begin(), counts.end()));
    CHECK_THROWS_WITH_AS(sim::run_ocs(cfg, "droid-boin", s, 0, 9), "reps must be >= 1", ValidationError);
}

TEST_CASE("independent halves agree within sampling error") {
    const auto s = reference_scenarios()[0];
    const auto cfg = sim::named_design("droid-boin");
    const auto a = sim::run_ocs(cfg, "droid-boin", s, 500, 1001);
    const auto b = sim::run_ocs(cfg, "droid-boin", s, 500, 2002);
    for (int j = 0; j < 5; ++j) {
        const double p = 0.5 * (a.selection[j] + b.selection[j]);
        const double se = std::sqrt(2.0 * p * (1 - p) / 500);
        CAPTURE(j);
        CHECK(std::fabs(a.selection[j] - b.selection[j]) <= std::max(4 * se, 1e-12));
    }
}

TEST_CASE("selection fractions and the none fraction sum to one") {
    const auto s = reference_scenarios()[5];
    const auto r = sim::run_ocs(quick("droid-crm"), "droid-crm", s, 10, 3);
    double total = r.none;
    for (double x : r.selection) total += x;
    CHECK(std::fabs(total - 1.0) < 1e-9);
    const std::string csv = sim::oc_csv_rows(r);
    CHECK(csv.find("\"scenario 6\",droid-crm,none,") != std::string::npos);
    CHECK(sim::to_json(r).at("config_hash") == sim::config_hash(quick("droid-crm")));
}

TEST_CASE("CRM finds the top dose when every dose is safe and n is large") {
    sim::Scenario s = reference_scenarios()[0];
    s.toxicity = {0.01, 0.02, 0.03, 0.04, 0.05};
    s = sim::calibrate_scenario(s);
    DesignConfig cfg = quick("crm");
    cfg.n1_cohorts = 67;  // about 200 patients
    cfg.per_dose_cap = 201;
    const auto r = sim::run_crm_comparator(cfg, s, 30, 8);
    CHECK(r.selection[4] >= 0.95);
}

}  // TEST_SUITE
