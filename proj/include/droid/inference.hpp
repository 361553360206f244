// Posterior computation: one-parameter logistic toxicity model, four-parameter
// Emax PD model, beta-binomial response model, isotonic regression and prior
// elicitation.

#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "droid/core.hpp"
#include "droid/random.hpp"

namespace droid::inference {

// Retained posterior draws, row-major.
struct DrawSet {
    std::vector<std::string> names;
    std::vector<double> values;
    int rows = 0;
    int cols = 0;
    std::vector<double> acceptance;  // per parameter block
    std::uint64_t seed = 0;

    double at(int draw, int param) const { return values[static_cast<std::size_t>(draw) * cols + param]; }
    std::vector<double> column(int param) const;
    double column_mean(int param) const;
};

// ---- toxicity ------------------------------------------------------------

std::vector<double> effective_doses(std::span<const double> skeleton, double alpha0, double alpha_hat);

struct ToxicityModelSpec {
    double alpha0 = 3.0;
    double prior_rate = 1.0;  // alpha ~ Exponential(prior_rate)
    std::vector<double> effective_doses;

    static ToxicityModelSpec from_config(const DesignConfig& cfg);
};

struct BinomialCount {
    int n = 0;
    int events = 0;
};

struct ToxicityFit {
    DrawSet draws;  // single column "alpha"
    std::vector<double> p_hat;
};

double expit(double x);
double logit(double p);

double tox_probability(double alpha0, double alpha, double effective_dose);

ToxicityFit fit_toxicity(std::span<const BinomialCount> data, const ToxicityModelSpec& spec,
                         const McmcSettings& mcmc);

// Unnormalised log posterior of alpha (> 0). Exposed for quadrature checks.
double toxicity_log_posterior(double alpha, std::span<const BinomialCount> data, const ToxicityModelSpec& spec);

// ---- Emax ----------------------------------------------------------------

struct EmaxParams {
    double eta = 0.0;
    double tau = 0.0;
    double beta = 1.0;
    double gamma = 1.0;
    double sigma = 1.0;
};

double emax_mean(double eta, double tau, double beta, double gamma, double dose);
inline double emax_mean(const EmaxParams& p, double dose) { return emax_mean(p.eta, p.tau, p.beta, p.gamma, dose); }

struct EmaxModelSpec {
    EmaxPriors priors;
    std::vector<double> doses;

    static EmaxModelSpec from_config(const DesignConfig& cfg);
};

// PD sufficient statistics at one dose.
struct PdSummary {
    int n = 0;
    double mean = 0.0;
    double ssd = 0.0;
};

struct EmaxFit {
    DrawSet draws;  // columns eta, tau, beta, gamma, sigma
    std::vector<double> mu_hat;

    EmaxParams draw(int i) const;
};

std::vector<PdSummary> summarize_pd(std::span<const double> doses, std::span<const double> dose_of_obs,
                                    std::span<const double> y);

EmaxFit fit_emax(std::span<const PdSummary> data, const EmaxModelSpec& spec, const McmcSettings& mcmc);

// Convenience overload taking raw (dose, y) pairs; doses must lie on the grid.
EmaxFit fit_emax(std::span<const double> dose_of_obs, std::span<const double> y, const EmaxModelSpec& spec,
                 const McmcSettings& mcmc);

// ---- beta-binomial -------------------------------------------------------

struct BetaPosterior {
    double a = 1.0;
    double b = 1.0;

    double mean() const { return a / (a + b); }
    double prob_greater(double t) const;        // Pr(pi > t)
    double prob_greater_equal(double t) const;  // Pr(pi >= t); equal to prob_greater for a continuous law
    double prob_less(double t) const;
};

BetaPosterior beta_binomial_posterior(int responses, int n, BetaPrior prior);

// ---- isotonic regression -------------------------------------------------

std::vector<double> pava_isotonic(std::span<const double> values, std::span<const double> weights);

// Block structure of the fit: for each input index, the index of its block.
std::vector<int> pava_blocks(std::span<const double> values, std::span<const double> weights);

// ---- priors --------------------------------------------------------------

GammaPrior elicit_gamma_prior(double estimate, double lo, double hi);

// ---- posterior probabilities --------------------------------------------

enum class Direction { Greater, GreaterEqual, Less, LessEqual };

double posterior_prob(std::span<const double> functional, double threshold, Direction dir);

template <class Pred>
double posterior_fraction(int n_draws, Pred&& pred) {
    if (n_draws <= 0) return 0.0;
    int hits = 0;
    for (int i = 0; i < n_draws; ++i) hits += pred(i) ? 1 : 0;
    return static_cast<double>(hits) / n_draws;
}

// ---- snapshot helpers ----------------------------------------------------

// Probability of the functional per draw, using the snapshot's retained draws.
double prob_tox_above(const PosteriorSnapshot& s, double alpha0, int level, double threshold);
double prob_pd_below(const PosteriorSnapshot& s, std::span<const double> doses, int level, double threshold);
double snapshot_mu(const std::array<double, 5>& draw, double dose);

// Posterior mean curves on continuous dose values.
double mean_pd_curve(const PosteriorSnapshot& s, double dose);
double mean_tox_curve(const PosteriorSnapshot& s, double alpha0, std::span<const double> doses, double dose);

// Effective dose on the continuous scale by linear interpolation between grid
// points (linear extrapolation outside the grid).
double interpolate_effective_dose(std::span<const double> doses, std::span<const double> effective, double dose);

}  // namespace droid::inference
