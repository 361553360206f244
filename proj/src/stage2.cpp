#include "droid/stage2.hpp"

#include <algorithm>
#include <cmath>

#include "droid/inference.hpp"
#include "droid/rules.hpp"

namespace droid::stage2 {

namespace inf = droid::inference;

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::vector<int> surviving_set(const TrialState& state) {
    std::vector<int> out;
    for (int j : state.rp2s) {
        if (!contains(state.dropped, j)) out.push_back(j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Merges the data of every tried level inside the same PAVA block.
std::vector<DoseData> pooled_blocks(std::span<const DoseData> data, bool by_tox) {
    std::vector<int> tried;
    std::vector<double> values, weights;
    for (int j = 0; j < static_cast<int>(data.size()); ++j) {
        if (data[j].n == 0) continue;
        tried.push_back(j);
        values.push_back(by_tox ? data[j].tox_rate() : data[j].pd_mean());
        weights.push_back(data[j].n);
    }
    std::vector<DoseData> out(data.begin(), data.end());
    if (tried.empty()) return out;
    const auto block = inf::pava_blocks(values, weights);
    for (std::size_t a = 0; a < tried.size(); ++a) {
        DoseData pooled;
        double grand_sum = 0.0;
        for (std::size_t b = 0; b < tried.size(); ++b) {
            if (block[b] != block[a]) continue;
            const auto& d = data[tried[b]];
            pooled.n += d.n;
            pooled.tox += d.tox;
            grand_sum += d.pd_sum;
        }
        pooled.pd_sum = grand_sum;
        const double grand_mean = grand_sum / pooled.n;
        for (std::size_t b = 0; b < tried.size(); ++b) {
            if (block[b] != block[a]) continue;
            const auto& d = data[tried[b]];
            const double dev = d.pd_mean() - grand_mean;
            pooled.pd_ssd += d.pd_ssd + d.n * dev * dev;
        }
        pooled.eff_n = data[tried[a]].eff_n;
        pooled.eff = data[tried[a]].eff;
        out[tried[a]] = pooled;
    }
    return out;
}

}  // namespace

RandPolicy RandPolicy::from_state(const TrialState& state, const PosteriorSnapshot& snapshot) {
    RandPolicy p;
    p.scheme = state.config.rand_scheme;
    p.cap = state.config.per_dose_cap;
    if (p.scheme == RandScheme::Adaptive) {
        p.desirability = snapshot.mu_hat;
        if (p.desirability.empty()) {
            const auto data = dose_data(state);
            for (const auto& d : data) p.desirability.push_back(d.pd_mean());
        }
    }
    return p;
}

std::vector<int> eligible_levels(const TrialState& state, int cap) {
    const auto counts = patients_per_dose(state);
    std::vector<int> out;
    for (int j : surviving_set(state)) {
        if (counts[j - 1] < cap) out.push_back(j);
    }
    return out;
}

std::vector<double> randomization_probabilities(const TrialState& state, const RandPolicy& policy) {
    const int J = state.config.grid.size();
    std::vector<double> prob(J, 0.0);
    const auto eligible = eligible_levels(state, policy.cap);
    if (eligible.empty()) return prob;
    const auto counts = patients_per_dose(state);

    std::vector<double> weight(J, 0.0);
    switch (policy.scheme) {
        case RandScheme::Equal:
            for (int j : eligible) weight[j - 1] = 1.0;
            break;
        case RandScheme::BalanceToM: {
            int least = counts[eligible.front() - 1];
            for (int j : eligible) least = std::min(least, counts[j - 1]);
            for (int j : eligible) weight[j - 1] = counts[j - 1] == least ? 1.0 : 0.0;
            break;
        }
        case RandScheme::Adaptive:
            for (int j : eligible) {
                const double w = j - 1 < static_cast<int>(policy.desirability.size()) ? policy.desirability[j - 1] : 0.0;
                weight[j - 1] = std::isfinite(w) ? std::max(w, 0.0) : 0.0;
            }
            break;
    }
    double total = 0.0;
    for (double w : weight) total += w;
    if (!(total > 0.0)) {
        // nothing to prefer: fall back to equal weights
        for (int j : eligible) weight[j - 1] = 1.0;
        total = static_cast<double>(eligible.size());
    }
    for (int j = 0; j < J; ++j) prob[j] = weight[j] / total;
    return prob;
}

int randomize_next(const TrialState& state, const RandPolicy& policy, Rng& rng) {
    const auto prob = randomization_probabilities(state, policy);
    int last = 0;
    for (int j = 0; j < static_cast<int>(prob.size()); ++j) {
        if (prob[j] > 0.0) last = j + 1;
    }
    if (last == 0) throw ValidationError("no dose eligible for stage-II randomization");
    const double u = uniform01(rng);
    double acc = 0.0;
    for (int j = 0; j < static_cast<int>(prob.size()); ++j) {
        acc += prob[j];
        if (prob[j] > 0.0 && u < acc) return j + 1;
    }
    return last;
}

std::vector<double> isotonic_tox_exceed(std::span<const DoseData> data, double phi_T) {
    const auto pooled = pooled_blocks(data, true);
    std::vector<double> out(data.size(), 0.0);
    for (std::size_t j = 0; j < data.size(); ++j) {
        if (data[j].n > 0) out[j] = rules::tox_exceed_probability(pooled[j], phi_T);
    }
    return out;
}

std::vector<double> isotonic_futility(std::span<const DoseData> data, double phi_S) {
    const auto pooled = pooled_blocks(data, false);
    const double var = rules::pooled_pd_variance(data);
    std::vector<double> out(data.size(), 0.0);
    for (std::size_t j = 0; j < data.size(); ++j) {
        if (data[j].n > 0) out[j] = rules::futility_probability(pooled[j], var, phi_S);
    }
    return out;
}

MonitorResult stage2_monitor(const TrialState& state, const PosteriorSnapshot& snapshot) {
    const auto& cfg = state.config;
    const int J = cfg.grid.size();
    const auto data = dose_data(state);

    MonitorResult r;
    if (cfg.stage1_mode == Stage1Mode::ModelBased && snapshot.has_toxicity_fit && snapshot.has_emax_fit) {
        r.tox_prob.resize(J);
        r.futility_prob.resize(J);
        for (int j = 1; j <= J; ++j) {
            r.tox_prob[j - 1] = inf::prob_tox_above(snapshot, cfg.alpha0, j, cfg.phi_T);
            r.futility_prob[j - 1] = inf::prob_pd_below(snapshot, cfg.grid.doses, j, cfg.phi_S);
        }
    } else {
        r.tox_prob = isotonic_tox_exceed(data, cfg.phi_T);
        r.futility_prob = isotonic_futility(data, cfg.phi_S);
    }

    std::vector<bool> drop(J, false);
    for (int j : state.dropped) drop[j - 1] = true;
    for (int j : surviving_set(state)) {
        if (data[j - 1].n < rules::kEvidenceFloor) continue;
        if (r.tox_prob[j - 1] > cfg.cutoffs.tox_drop) {
            for (int k = j; k <= J; ++k) drop[k - 1] = true;
        }
        if (r.futility_prob[j - 1] > cfg.cutoffs.futility_drop) {
            for (int k = 1; k <= j; ++k) drop[k - 1] = true;
        }
    }
    for (int j = 1; j <= J; ++j) {
        if (drop[j - 1]) r.dropped.push_back(j);
    }
    return r;
}

std::vector<int> refresh_rp2s(const TrialState& state, const PosteriorSnapshot& snapshot) {
    std::vector<int> out = state.rp2s;
    if (!state.config.allow_dose_addition) return out;
    const auto tdr = rules::select_tdr(state, snapshot, state.config.tdr_mode);
    if (tdr.empty()) return out;
    const auto data = dose_data(state);
    for (int j : rules::select_rp2s(tdr, data, state.config)) {
        if (!contains(out, j) && !contains(state.dropped, j)) out.push_back(j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double compute_dri(std::span<const std::array<double, 5>> draws, double dose_low, double dose_high, double delta) {
    if (draws.empty()) throw ValidationError("dose-response index needs posterior draws");
    return inf::posterior_fraction(static_cast<int>(draws.size()), [&](int i) {
        return inf::snapshot_mu(draws[i], dose_low) < delta * inf::snapshot_mu(draws[i], dose_high);
    });
}

Poc establish_poc(double dri, double c_dri) { return dri > c_dri ? Poc::Established : Poc::NotEstablished; }

std::optional<int> select_optimal_posterior(std::span<const int> surviving, std::span<const double> prob_plateau,
                                            std::span<const double> prob_response, double c1, double c2) {
    std::vector<int> s(surviving.begin(), surviving.end());
    std::sort(s.begin(), s.end());
    for (int j : s) {
        if (prob_plateau[j - 1] > c1 && prob_response[j - 1] > c2) return j;
    }
    return std::nullopt;
}

std::vector<double> plateau_probabilities(std::span<const std::array<double, 5>> draws,
                                          std::span<const double> doses, int highest_surviving, double delta) {
    std::vector<double> out(doses.size(), 0.0);
    if (draws.empty() || highest_surviving < 1) return out;
    const double d_high = doses[highest_surviving - 1];
    for (std::size_t j = 0; j < doses.size(); ++j) {
        out[j] = inf::posterior_fraction(static_cast<int>(draws.size()), [&](int i) {
            return inf::snapshot_mu(draws[i], doses[j]) >= delta * inf::snapshot_mu(draws[i], d_high);
        });
    }
    return out;
}

std::optional<int> select_optimal_point(std::span<const int> surviving, std::span<const double> mu_hat,
                                        std::span<const double> pi_hat, double delta, double phi_E) {
    if (surviving.empty()) return std::nullopt;
    std::vector<int> s(surviving.begin(), surviving.end());
    std::sort(s.begin(), s.end());
    const double top = mu_hat[s.back() - 1];
    for (int j : s) {
        if (mu_hat[j - 1] >= delta * top && pi_hat[j - 1] >= phi_E) return j;
    }
    return std::nullopt;
}

FinalAnalysis final_analysis(const TrialState& state, const PosteriorSnapshot& snapshot) {
    const auto& cfg = state.config;
    const int J = cfg.grid.size();
    const auto data = dose_data(state);

    FinalAnalysis f;
    f.criterion = cfg.selection_rule;
    f.delta = cfg.delta;
    f.c_dri = cfg.cutoffs.dri;
    f.c1 = cfg.cutoffs.plateau;
    f.c2 = cfg.cutoffs.response;
    f.phi_E = cfg.phi_E;
    f.surviving = surviving_set(state);
    f.highest_tried = highest_tried_level(state);
    f.highest_surviving = f.surviving.empty() ? 0 : f.surviving.back();
    f.n = patients_per_dose(state);
    f.mu_hat = snapshot.mu_hat;
    f.pi_hat.resize(J);
    f.prob_response.resize(J);
    for (int j = 0; j < J; ++j) {
        const auto post = inf::beta_binomial_posterior(data[j].eff, data[j].eff_n, cfg.efficacy_prior);
        f.pi_hat[j] = post.mean();
        f.prob_response[j] = post.prob_greater_equal(cfg.phi_E);
    }
    f.prob_plateau.assign(J, 0.0);

    if (!snapshot.has_emax_fit || f.highest_tried < 1) {
        f.note = "no pharmacodynamic data";
        return f;
    }
    f.dri = compute_dri(snapshot.emax_draws, cfg.grid.doses.front(), cfg.grid.doses[f.highest_tried - 1], cfg.delta);
    f.poc = establish_poc(f.dri, cfg.cutoffs.dri);
    f.prob_plateau = plateau_probabilities(snapshot.emax_draws, cfg.grid.doses, f.highest_surviving, cfg.delta);
    if (f.poc != Poc::Established) {
        f.note = "proof of concept not established";
        return f;
    }
    if (f.surviving.empty()) {
        f.note = "no surviving dose";
        return f;
    }
    if (cfg.selection_rule == SelectionRule::Posterior) {
        f.optimal = select_optimal_posterior(f.surviving, f.prob_plateau, f.prob_response, f.c1, f.c2);
    } else {
        f.optimal = select_optimal_point(f.surviving, f.mu_hat, f.pi_hat, cfg.delta, cfg.phi_E);
    }
    if (!f.optimal) f.note = "no surviving dose meets the selection criterion";
    return f;
}

json to_json(const FinalAnalysis& f) {
    return json{{"dri", f.dri},
                {"poc", f.poc == Poc::Established},
                {"optimal_dose", f.optimal ? json(*f.optimal) : json(nullptr)},
                {"surviving", f.surviving},
                {"criterion", f.criterion == SelectionRule::Posterior ? "posterior" : "point"},
                {"highest_tried", f.highest_tried},
                {"highest_surviving", f.highest_surviving},
                {"n", f.n},
                {"mu_hat", f.mu_hat},
                {"pi_hat", f.pi_hat},
                {"prob_plateau", f.prob_plateau},
                {"prob_response", f.prob_response},
                {"delta", f.delta},
                {"cutoffs", {{"C_DRI", f.c_dri}, {"C_1", f.c1}, {"C_2", f.c2}, {"phi_E", f.phi_E}}},
                {"note", f.note}};
}

FinalAnalysis final_analysis_from_json(const json& j) {
    FinalAnalysis f;
    f.dri = j.at("dri").get<double>();
    f.poc = j.at("poc").get<bool>() ? Poc::Established : Poc::NotEstablished;
    if (!j.at("optimal_dose").is_null()) f.optimal = j.at("optimal_dose").get<int>();
    f.surviving = j.at("surviving").get<std::vector<int>>();
    f.criterion = j.at("criterion") == "point" ? SelectionRule::Point : SelectionRule::Posterior;
    f.highest_tried = j.at("highest_tried").get<int>();
    f.highest_surviving = j.at("highest_surviving").get<int>();
    f.n = j.at("n").get<std::vector<int>>();
    f.mu_hat = j.at("mu_hat").get<std::vector<double>>();
    f.pi_hat = j.at("pi_hat").get<std::vector<double>>();
    f.prob_plateau = j.at("prob_plateau").get<std::vector<double>>();
    f.prob_response = j.at("prob_response").get<std::vector<double>>();
    f.delta = j.at("delta").get<double>();
    const auto& c = j.at("cutoffs");
    f.c_dri = c.at("C_DRI").get<double>();
    f.c1 = c.at("C_1").get<double>();
    f.c2 = c.at("C_2").get<double>();
    f.phi_E = c.at("phi_E").get<double>();
    f.note = j.value("note", "");
    return f;
}

}  // namespace droid::stage2
