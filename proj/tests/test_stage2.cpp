#include <doctest.h>

#include <algorithm>
#include <random>

#include "droid/inference.hpp"
#include "droid/stage2.hpp"
#include "support.hpp"

using namespace droid;
using testing::add_patients;
using testing::PatientSpec;

namespace {

TrialState stage2_state(const std::vector<PatientSpec>& pts, std::vector<int> rp2s, DesignConfig cfg = reference_design()) {
    TrialState s = testing::state_with(cfg, pts);
    s.stage = Phase::Stage2;
    s.rp2s = std::move(rp2s);
    return s;
}

std::array<double, 5> draw(double eta, double tau, double beta, double gamma) { return {eta, tau, beta, gamma, 0.1}; }

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

TEST_SUITE("stage2") {

TEST_CASE("balance-to-M sends the next patient to the least filled dose") {
    std::vector<PatientSpec> p;
    add_patients(p, 2, 18, 0, 0.3);
    add_patients(p, 3, 12, 0, 0.4);
    const auto s = stage2_state(p, {2, 3});
    stage2::RandPolicy pol;
    pol.scheme = RandScheme::BalanceToM;
    pol.cap = 20;
    const auto prob = stage2::randomization_probabilities(s, pol);
    CHECK(prob[2] == 1.0);
    CHECK(prob[1] == 0.0);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(stage2::randomize_next(s, pol, rng) == 3);
}

TEST_CASE("equal randomization over eligible doses") {
    std::vector<PatientSpec> p;
    add_patients(p, 1, 3, 0, 0.1);
    add_patients(p, 2, 6, 0, 0.3);
    add_patients(p, 3, 9, 0, 0.4);
    const auto s = stage2_state(p, {1, 2, 3});
    stage2::RandPolicy pol;
    pol.scheme = RandScheme::Equal;
    const auto prob = stage2::randomization_probabilities(s, pol);
    for (int j = 0; j < 3; ++j) CHECK(prob[j] == doctest::Approx(1.0 / 3));
    CHECK(prob[3] == 0.0);

    // empirical frequencies
    Rng rng(2);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 30000; ++i) ++hits[stage2::randomize_next(s, pol, rng) - 1];
    for (int j = 0; j < 3; ++j) CHECK(std::fabs(hits[j] / 30000.0 - 1.0 / 3) < 0.015);
}

TEST_CASE("adaptive randomization is proportional to clamped desirability") {
    std::vector<PatientSpec> p;
    add_patients(p, 2, 6, 0, 0.2);
    add_patients(p, 3, 6, 0, 0.6);
    const auto s = stage2_state(p, {2, 3});
    stage2::RandPolicy pol;
    pol.scheme = RandScheme::Adaptive;
    pol.desirability = {0.0, 0.2, 0.6, 0.0, 0.0};
    auto prob = stage2::randomization_probabilities(s, pol);
    CHECK(prob[1] == doctest::Approx(0.25));
    CHECK(prob[2] == doctest::Approx(0.75));
    pol.desirability = {0.0, -0.4, 0.6, 0.0, 0.0};
    prob = stage2::randomization_probabilities(s, pol);
    CHECK(prob[1] == 0.0);
    CHECK(prob[2] == 1.0);
}

TEST_CASE("full doses, dropped doses and empty RP2S are not eligible") {
    std::vector<PatientSpec> p;
    add_patients(p, 2, 20, 0, 0.3);
    add_patients(p, 3, 12, 0, 0.4);
    auto s = stage2_state(p, {2, 3, 4});
    s.dropped = {4, 5};
    CHECK(stage2::eligible_levels(s, 20) == std::vector<int>{3});
    s.dropped = {3, 4, 5};
    stage2::RandPolicy pol;
    Rng rng(3);
    CHECK_THROWS_AS(stage2::randomize_next(s, pol, rng), ValidationError);
}

TEST_CASE("toxic dose is dropped with every higher dose") {
    std::vector<PatientSpec> p;
    add_patients(p, 2, 12, 0, 0.3);
    add_patients(p, 3, 12, 10, 0.5);
    const auto s = stage2_state(p, {2, 3});
    const auto r = stage2::stage2_monitor(s, PosteriorSnapshot{});
    CHECK(r.dropped == std::vector<int>{3, 4, 5});
    CHECK(r.tox_prob[2] > 0.999);
    CHECK(r.tox_prob[2] == doctest::Approx(testing::beta_upper_tail_int(11, 3, 0.3)).epsilon(1e-10));
}

TEST_CASE("monitoring without new evidence changes nothing") {
    const auto s = stage2_state({}, {2, 3});
    const auto r = stage2::stage2_monitor(s, PosteriorSnapshot{});
    CHECK(r.dropped.empty());
    std::vector<PatientSpec> p;
    add_patients(p, 2, 3, 0, 0.3);
    add_patients(p, 3, 3, 1, 0.4);
    CHECK(stage2::stage2_monitor(stage2_state(p, {2, 3}), PosteriorSnapshot{}).dropped.empty());
}

TEST_CASE("futility drop closes downwards") {
    std::vector<PatientSpec> p;
    add_patients(p, 2, 12, 0, -0.3);
    add_patients(p, 3, 12, 0, -0.2);
    add_patients(p, 4, 12, 0, 0.5);
    const auto r = stage2::stage2_monitor(stage2_state(p, {2, 3, 4}), PosteriorSnapshot{});
    CHECK(r.dropped == std::vector<int>{1, 2, 3});
    CHECK(r.futility_prob[2] > 0.95);
}

TEST_CASE("isotonic pooling is used for monitoring") {
    // raw rates 4/6 then 2/6 pool to 6/12
    std::vector<DoseData> d(3);
    d[0].n = 6;
    d[0].tox = 4;
    d[1].n = 6;
    d[1].tox = 2;
    const auto pr = stage2::isotonic_tox_exceed(d, 0.3);
    const double pooled = testing::beta_upper_tail_int(7, 7, 0.3);
    CHECK(pr[0] == doctest::Approx(pooled).epsilon(1e-10));
    CHECK(pr[1] == doctest::Approx(pooled).epsilon(1e-10));
    CHECK(pr[2] == 0.0);
}

TEST_CASE("dose addition adds newly qualifying doses") {
    DesignConfig cfg = reference_design();
    cfg.allow_dose_addition = true;
    std::vector<PatientSpec> p;
    add_patients(p, 1, 6, 0, 0.05, 1);
    add_patients(p, 2, 12, 1, 0.3, 5);
    add_patients(p, 3, 12, 2, 0.5, 6);
    add_patients(p, 4, 6, 1, 0.55, 4);
    auto s = stage2_state(p, {2, 3}, cfg);
    CHECK(stage2::refresh_rp2s(s, PosteriorSnapshot{}) == std::vector<int>{2, 3, 4});

    s.dropped = {4, 5};
    const auto again = stage2::refresh_rp2s(s, PosteriorSnapshot{});
    CHECK(!contains(again, 4));
    CHECK(again == std::vector<int>{2, 3});

    cfg.allow_dose_addition = false;
    auto off = stage2_state(p, {2, 3}, cfg);
    CHECK(stage2::refresh_rp2s(off, PosteriorSnapshot{}) == std::vector<int>{2, 3});
}

TEST_CASE("dose-response index examples") {
    // rising: mu(0.1) = 0.167, mu(0.9) = 0.643; flat: mu = 0.5 everywhere
    const double d_lo = 0.1, d_hi = 0.9;
    std::vector<std::array<double, 5>> rising(10, draw(0.0, 1.0, 0.5, 1.0));
    CHECK(stage2::compute_dri(rising, d_lo, d_hi, 0.9) == 1.0);
    std::vector<std::array<double, 5>> flat(10, draw(0.5, 0.0, 0.5, 1.0));
    CHECK(stage2::compute_dri(flat, d_lo, d_hi, 0.9) == 0.0);
    std::vector<std::array<double, 5>> mix;
    for (int i = 0; i < 100; ++i) mix.push_back(i < 40 ? rising[0] : flat[0]);
    CHECK(stage2::compute_dri(mix, d_lo, d_hi, 0.9) == doctest::Approx(0.4));
    CHECK_THROWS_AS(stage2::compute_dri(std::vector<std::array<double, 5>>{}, d_lo, d_hi, 0.9), ValidationError);
}

TEST_CASE("DRI is a count: relabelling invariant and monotone in delta") {
    std::mt19937_64 rng(12);
    std::gamma_distribution<double> g(2.0, 0.2);
    std::vector<std::array<double, 5>> draws;
    for (int i = 0; i < 500; ++i) draws.push_back(draw(g(rng), g(rng), g(rng) + 0.05, g(rng) * 3 + 0.1));
    const double base = stage2::compute_dri(draws, 0.1, 0.9, 0.9);
    auto shuffled = draws;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(stage2::compute_dri(shuffled, 0.1, 0.9, 0.9) == base);
    // a larger margin makes mu(d_1) < delta mu(d_H*) easier to satisfy
    double prev = 0.0;
    for (double delta = 0.1; delta <= 1.0001; delta += 0.1) {
        const double dri = stage2::compute_dri(draws, 0.1, 0.9, delta);
        CHECK(dri >= prev);
        prev = dri;
    }
}

TEST_CASE("proof of concept uses a strict threshold") {
    CHECK(stage2::establish_poc(0.8, 0.7) == stage2::Poc::Established);
    CHECK(stage2::establish_poc(0.7, 0.7) == stage2::Poc::NotEstablished);
    CHECK(stage2::establish_poc(0.0, 0.7) == stage2::Poc::NotEstablished);
}

TEST_CASE("posterior selection with point-mass posteriors reduces to point selection") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> doses{0.1, 0.3, 0.5, 0.7, 0.9};
    for (int it = 0; it < 500; ++it) {
        const auto one = draw(u(rng) * 0.3, u(rng), 0.05 + u(rng), 0.2 + 4 * u(rng));
        std::vector<int> S;
        for (int j = 1; j <= 5; ++j) {
            if (u(rng) < 0.6) S.push_back(j);
        }
        if (S.empty()) S.push_back(3);
        std::vector<double> mu(5), pi(5), resp(5);
        for (int j = 0; j < 5; ++j) {
            mu[j] = inference::snapshot_mu(one, doses[j]);
            pi[j] = u(rng);
            resp[j] = pi[j] >= 0.3 ? 1.0 : 0.0;
        }
        const std::vector<std::array<double, 5>> draws{one};
        const auto plateau = stage2::plateau_probabilities(draws, doses, S.back(), 0.9);
        const auto a = stage2::select_optimal_posterior(S, plateau, resp, 0.37, 0.15);
        const auto b = stage2::select_optimal_point(S, mu, pi, 0.9, 0.3);
        CHECK(a == b);
        if (a) {
            CHECK(contains(S, *a));
            CHECK(plateau[*a - 1] > 0.37);
        }
    }
}

TEST_CASE("highest surviving dose always reaches its own plateau") {
    std::vector<std::array<double, 5>> draws{draw(0.1, 0.5, 0.4, 2.0), draw(0.0, 0.2, 0.9, 1.0)};
    const std::vector<double> doses{0.1, 0.3, 0.5, 0.7, 0.9};
    for (int h = 1; h <= 5; ++h) CHECK(stage2::plateau_probabilities(draws, doses, h, 0.9)[h - 1] == 1.0);
}

TEST_CASE("final analysis JSON round trip") {
    stage2::FinalAnalysis f;
    f.dri = 0.83;
    f.poc = stage2::Poc::Established;
    f.optimal = 3;
    f.surviving = {2, 3, 4};
    f.criterion = SelectionRule::Point;
    f.highest_tried = 5;
    f.highest_surviving = 4;
    f.n = {3, 20, 20, 20, 3};
    f.mu_hat = {0.1, 0.4, 0.55, 0.6, 0.61};
    f.pi_hat = {0.1, 0.35, 0.5, 0.52, 0.5};
    f.prob_plateau = {0.0, 0.1, 0.6, 0.9, 1.0};
    f.prob_response = {0.0, 0.6, 0.9, 0.95, 0.9};
    f.note = "ok";
    const json j = stage2::to_json(f);
    CHECK(stage2::to_json(stage2::final_analysis_from_json(j)).dump() == j.dump());
    f.optimal.reset();
    const json k = stage2::to_json(f);
    CHECK(k.at("optimal_dose").is_null());
    CHECK(!stage2::final_analysis_from_json(k).optimal);
}

TEST_CASE("final analysis without PoC selects nothing") {
    std::vector<PatientSpec> p;
    add_patients(p, 1, 6, 0, 0.5, 3, 1);
    add_patients(p, 2, 20, 0, 0.5, 10, 2);
    auto s = stage2_state(p, {2});
    PosteriorSnapshot snap;
    snap.has_emax_fit = true;
    snap.emax_draws.assign(50, draw(0.5, 0.0, 0.5, 1.0));
    snap.mu_hat.assign(5, 0.5);
    const auto f = stage2::final_analysis(s, snap);
    CHECK(f.dri == 0.0);
    CHECK(f.poc == stage2::Poc::NotEstablished);
    CHECK(!f.optimal);
    CHECK(f.highest_tried == 2);
}

}  // TEST_SUITE
