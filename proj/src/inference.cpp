#include "droid/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/special_functions/beta.hpp>

#include "mcmc.hpp"

namespace droid::inference {

std::vector<double> DrawSet::column(int param) const {
    std::vector<double> c(rows);
    for (int i = 0; i < rows; ++i) c[i] = at(i, param);
    return c;
}

double DrawSet::column_mean(int param) const {
    if (rows == 0) return 0.0;
    double s = 0.0;
    for (int i = 0; i < rows; ++i) s += at(i, param);
    return s / rows;
}

double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

namespace {

// log(1 + exp(x)) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

std::vector<double> effective_doses(std::span<const double> skeleton, double alpha0, double alpha_hat) {
    if (!(alpha_hat > 0.0)) throw ValidationError("alpha_hat must be positive");
    std::vector<double> out;
    out.reserve(skeleton.size());
    for (std::size_t j = 0; j < skeleton.size(); ++j) {
        const double q = skeleton[j];
        if (!(q > 0.0 && q < 1.0)) throw ValidationError("skeleton value outside (0,1)");
        if (j > 0 && !(q > skeleton[j - 1])) throw ValidationError("skeleton not strictly increasing");
        out.push_back((logit(q) - alpha0) / alpha_hat);
    }
    return out;
}

ToxicityModelSpec ToxicityModelSpec::from_config(const DesignConfig& cfg) {
    ToxicityModelSpec s;
    s.alpha0 = cfg.alpha0;
    s.prior_rate = cfg.alpha_prior_rate;
    // Prior mean of Exponential(rate) is 1/rate.
    s.effective_doses = inference::effective_doses(cfg.grid.skeleton, cfg.alpha0, 1.0 / cfg.alpha_prior_rate);
    return s;
}

double tox_probability(double alpha0, double alpha, double effective_dose) {
    return expit(alpha0 + alpha * effective_dose);
}

double toxicity_log_posterior(double alpha, std::span<const BinomialCount> data, const ToxicityModelSpec& spec) {
    if (!(alpha > 0.0)) return -INFINITY;
    double lp = -spec.prior_rate * alpha;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto& c = data[j];
        if (c.n == 0) continue;
        const double a = spec.alpha0 + alpha * spec.effective_doses[j];
        lp -= c.events * softplus(-a) + (c.n - c.events) * softplus(a);
    }
    return lp;
}

namespace {

class ToxicityTarget {
public:
    ToxicityTarget(std::span<const BinomialCount> data, const ToxicityModelSpec& spec)
        : data_(data), spec_(spec) {
        theta_ = std::log(1.0 / spec.prior_rate);
        lp_ = eval(theta_);
    }

    int dim() const { return 1; }
    double log_density() const { return lp_; }
    double coordinate(int) const { return theta_; }
    double propose(int, double x) {
        prop_theta_ = x;
        prop_lp_ = eval(x);
        return prop_lp_;
    }
    void accept() {
        theta_ = prop_theta_;
        lp_ = prop_lp_;
    }
    void reject() {}
    void natural(double* row) const { row[0] = std::exp(theta_); }

private:
    double eval(double theta) const {
        const double alpha = std::exp(theta);
        if (!(alpha > 0.0) || !std::isfinite(alpha)) return -INFINITY;
        return toxicity_log_posterior(alpha, data_, spec_) + theta;
    }

    std::span<const BinomialCount> data_;
    const ToxicityModelSpec& spec_;
    double theta_ = 0.0, lp_ = 0.0, prop_theta_ = 0.0, prop_lp_ = 0.0;
};

}  // namespace

ToxicityFit fit_toxicity(std::span<const BinomialCount> data, const ToxicityModelSpec& spec,
                         const McmcSettings& mcmc) {
    if (data.size() != spec.effective_doses.size()) {
        throw std::invalid_argument("toxicity data length differs from effective doses");
    }
    int total = 0;
    for (const auto& c : data) {
        if (c.n < 0 || c.events < 0 || c.events > c.n) throw ValidationError("invalid toxicity count");
        total += c.n;
    }
    if (total == 0) throw ValidationError("fit_toxicity needs at least one treated patient");

    ToxicityTarget target(data, spec);
    ToxicityFit fit;
    fit.draws = detail::run_scan(target, mcmc, mcmc.seed, {"alpha"}, 1.0);

    const int J = static_cast<int>(data.size());
    fit.p_hat.assign(J, 0.0);
    for (int i = 0; i < fit.draws.rows; ++i) {
        const double alpha = fit.draws.at(i, 0);
        for (int j = 0; j < J; ++j) fit.p_hat[j] += tox_probability(spec.alpha0, alpha, spec.effective_doses[j]);
    }
    for (auto& p : fit.p_hat) p /= fit.draws.rows;
    return fit;
}

// ---- Emax ----------------------------------------------------------------

double emax_mean(double eta, double tau, double beta, double gamma, double dose) {
    if (!(dose > 0.0)) return eta;
    // d^g / (b^g + d^g) written to avoid overflow for large gamma
    const double frac = 1.0 / (1.0 + std::exp(gamma * (std::log(beta) - std::log(dose))));
    return eta + tau * frac;
}

EmaxModelSpec EmaxModelSpec::from_config(const DesignConfig& cfg) {
    EmaxModelSpec s;
    s.priors = cfg.emax_priors;
    s.doses = cfg.grid.doses;
    return s;
}

EmaxParams EmaxFit::draw(int i) const {
    return {draws.at(i, 0), draws.at(i, 1), draws.at(i, 2), draws.at(i, 3), draws.at(i, 4)};
}

std::vector<PdSummary> summarize_pd(std::span<const double> doses, std::span<const double> dose_of_obs,
                                   std::span<const double> y) {
    if (dose_of_obs.size() != y.size()) throw std::invalid_argument("dose and response lengths differ");
    const std::size_t J = doses.size();
    std::vector<PdSummary> s(J);
    std::vector<double> sum(J, 0.0);
    std::vector<std::size_t> idx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y[i])) throw ValidationError("non-finite y_S");
        auto it = std::find(doses.begin(), doses.end(), dose_of_obs[i]);
        if (it == doses.end()) throw ValidationError("observation dose not on the grid");
        idx[i] = static_cast<std::size_t>(it - doses.begin());
        s[idx[i]].n += 1;
        sum[idx[i]] += y[i];
    }
    for (std::size_t j = 0; j < J; ++j) s[j].mean = s[j].n > 0 ? sum[j] / s[j].n : 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - s[idx[i]].mean;
        s[idx[i]].ssd += r * r;
    }
    return s;
}

namespace {

enum EmaxCoord { kEta = 0, kTau, kBeta, kGamma, kSigma };

class EmaxTarget {
public:
    EmaxTarget(std::span<const PdSummary> data, const EmaxModelSpec& spec) : data_(data), spec_(spec) {
        const auto& pr = spec.priors;
        log_dose_.resize(spec.doses.size());
        for (std::size_t j = 0; j < spec.doses.size(); ++j) log_dose_[j] = std::log(spec.doses[j]);

        int n = 0;
        double sum = 0.0, ssd = 0.0;
        for (const auto& d : data) {
            n += d.n;
            sum += d.n * d.mean;
        }
        const double grand = n > 0 ? sum / n : 0.0;
        for (const auto& d : data) ssd += d.ssd + d.n * (d.mean - grand) * (d.mean - grand);
        const double sd0 = n > 1 ? std::sqrt(ssd / (n - 1)) : pr.sigma_scale;

        cur_[kEta] = std::log(pr.eta.mean());
        cur_[kTau] = std::log(pr.tau.mean());
        cur_[kBeta] = std::log(pr.beta.mean());
        cur_[kGamma] = std::log(pr.gamma.mean());
        cur_[kSigma] = std::log(std::clamp(sd0, 0.02, 2.0));
        frac_.resize(spec.doses.size());
        prop_frac_.resize(spec.doses.size());
        update_frac(cur_, frac_);
        lp_ = eval(cur_, frac_);
    }

    int dim() const { return 5; }
    double log_density() const { return lp_; }
    double coordinate(int k) const { return cur_[k]; }

    double propose(int k, double x) {
        prop_ = cur_;
        prop_[k] = x;
        if (k == kBeta || k == kGamma) {
            update_frac(prop_, prop_frac_);
            prop_lp_ = eval(prop_, prop_frac_);
        } else {
            prop_lp_ = eval(prop_, frac_);
        }
        prop_k_ = k;
        return prop_lp_;
    }

    double propose_point(const double* x) {
        std::copy(x, x + 5, prop_.begin());
        update_frac(prop_, prop_frac_);
        prop_lp_ = eval(prop_, prop_frac_);
        prop_k_ = -1;
        return prop_lp_;
    }

    void accept() {
        cur_ = prop_;
        lp_ = prop_lp_;
        if (prop_k_ == kBeta || prop_k_ == kGamma || prop_k_ < 0) std::swap(frac_, prop_frac_);
    }

    void reject() {}

    void natural(double* row) const {
        for (int k = 0; k < 5; ++k) row[k] = std::exp(cur_[k]);
    }

private:
    using Point = std::array<double, 5>;

    void update_frac(const Point& p, std::vector<double>& frac) const {
        const double log_beta = p[kBeta];
        const double gamma = std::exp(p[kGamma]);
        for (std::size_t j = 0; j < frac.size(); ++j) {
            frac[j] = 1.0 / (1.0 + std::exp(gamma * (log_beta - log_dose_[j])));
        }
    }

    static double gamma_term(const GammaPrior& g, double theta) {
        // Gamma(shape, rate) density on exp(theta), including the Jacobian
        return g.shape * theta - g.rate * std::exp(theta);
    }

    double eval(const Point& p, const std::vector<double>& frac) const {
        for (double v : p) {
            if (!std::isfinite(v) || std::abs(v) > 700.0) return -INFINITY;
        }
        const auto& pr = spec_.priors;
        const double eta = std::exp(p[kEta]);
        const double tau = std::exp(p[kTau]);
        const double sigma = std::exp(p[kSigma]);

        double lp = gamma_term(pr.eta, p[kEta]) + gamma_term(pr.tau, p[kTau]) + gamma_term(pr.beta, p[kBeta]) +
                    gamma_term(pr.gamma, p[kGamma]);
        lp += -0.5 * sigma * sigma / (pr.sigma_scale * pr.sigma_scale) + p[kSigma];

        const double inv2s2 = 0.5 / (sigma * sigma);
        for (std::size_t j = 0; j < data_.size(); ++j) {
            const auto& d = data_[j];
            if (d.n == 0) continue;
            const double r = d.mean - (eta + tau * frac[j]);
            lp -= d.n * p[kSigma] + (d.ssd + d.n * r * r) * inv2s2;
        }
        return lp;
    }

    std::span<const PdSummary> data_;
    const EmaxModelSpec& spec_;
    std::vector<double> log_dose_;
    Point cur_{}, prop_{};
    std::vector<double> frac_, prop_frac_;
    double lp_ = 0.0, prop_lp_ = 0.0;
    int prop_k_ = 0;
};

}  // namespace

EmaxFit fit_emax(std::span<const PdSummary> data, const EmaxModelSpec& spec, const McmcSettings& mcmc) {
    if (data.size() != spec.doses.size()) throw std::invalid_argument("PD data length differs from dose grid");
    int total = 0;
    for (const auto& d : data) {
        if (!std::isfinite(d.mean) || !std::isfinite(d.ssd)) throw ValidationError("non-finite y_S");
        total += d.n;
    }
    if (total == 0) throw ValidationError("fit_emax needs at least one observation");

    EmaxTarget target(data, spec);
    EmaxFit fit;
    fit.draws = detail::run_scan(target, mcmc, mcmc.seed, {"eta", "tau", "beta", "gamma", "sigma"}, 0.3);

    const std::size_t J = spec.doses.size();
    fit.mu_hat.assign(J, 0.0);
    for (int i = 0; i < fit.draws.rows; ++i) {
        const auto p = fit.draw(i);
        for (std::size_t j = 0; j < J; ++j) fit.mu_hat[j] += emax_mean(p, spec.doses[j]);
    }
    for (auto& m : fit.mu_hat) m /= fit.draws.rows;
    return fit;
}

EmaxFit fit_emax(std::span<const double> dose_of_obs, std::span<const double> y, const EmaxModelSpec& spec,
                 const McmcSettings& mcmc) {
    auto s = summarize_pd(spec.doses, dose_of_obs, y);
    return fit_emax(s, spec, mcmc);
}

// ---- beta-binomial -------------------------------------------------------

double BetaPosterior::prob_greater(double t) const {
    if (t <= 0.0) return 1.0;
    if (t >= 1.0) return 0.0;
    return boost::math::ibetac(a, b, t);
}

double BetaPosterior::prob_greater_equal(double t) const { return prob_greater(t); }

double BetaPosterior::prob_less(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return boost::math::ibeta(a, b, t);
}

BetaPosterior beta_binomial_posterior(int responses, int n, BetaPrior prior) {
    if (n < 0 || responses < 0) throw ValidationError("counts must be nonnegative");
    if (responses > n) throw ValidationError("responses exceed n");
    return {prior.a + responses, prior.b + (n - responses)};
}

// ---- isotonic regression -------------------------------------------------

namespace {

struct Block {
    double wsum;
    double wy;
    int count;
};

std::vector<Block> pava_pool(std::span<const double> values, std::span<const double> weights) {
    if (values.size() != weights.size()) throw ValidationError("values and weights differ in length");
    std::vector<Block> stack;
    stack.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(weights[i] > 0.0)) throw ValidationError("non-positive weight");
        stack.push_back({weights[i], weights[i] * values[i], 1});
        while (stack.size() > 1) {
            const auto& b = stack.back();
            const auto& a = stack[stack.size() - 2];
            if (a.wy / a.wsum <= b.wy / b.wsum) break;
            Block merged{a.wsum + b.wsum, a.wy + b.wy, a.count + b.count};
            stack.pop_back();
            stack.back() = merged;
        }
    }
    return stack;
}

}  // namespace

std::vector<double> pava_isotonic(std::span<const double> values, std::span<const double> weights) {
    const auto blocks = pava_pool(values, weights);
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& b : blocks) out.insert(out.end(), b.count, b.wy / b.wsum);
    return out;
}

std::vector<int> pava_blocks(std::span<const double> values, std::span<const double> weights) {
    const auto blocks = pava_pool(values, weights);
    std::vector<int> out;
    out.reserve(values.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) out.insert(out.end(), blocks[b].count, static_cast<int>(b));
    return out;
}

// ---- priors --------------------------------------------------------------

GammaPrior elicit_gamma_prior(double estimate, double lo, double hi) {
    if (!(lo < estimate && estimate < hi)) throw ValidationError("estimate outside range");
    const double sd = (hi - lo) / 4.0;
    return {estimate * estimate / (sd * sd), estimate / (sd * sd)};
}

// ---- posterior probabilities --------------------------------------------

double posterior_prob(std::span<const double> functional, double threshold, Direction dir) {
    if (functional.empty()) throw std::invalid_argument("posterior_prob needs at least one draw");
    std::size_t hits = 0;
    for (double v : functional) {
        switch (dir) {
            case Direction::Greater: hits += v > threshold; break;
            case Direction::GreaterEqual: hits += v >= threshold; break;
            case Direction::Less: hits += v < threshold; break;
            case Direction::LessEqual: hits += v <= threshold; break;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(functional.size());
}

double snapshot_mu(const std::array<double, 5>& d, double dose) { return emax_mean(d[0], d[1], d[2], d[3], dose); }

double prob_tox_above(const PosteriorSnapshot& s, double alpha0, int level, double threshold) {
    const double dt = s.effective_doses.at(level - 1);
    return posterior_fraction(static_cast<int>(s.alpha_draws.size()),
                              [&](int i) { return tox_probability(alpha0, s.alpha_draws[i], dt) > threshold; });
}

double prob_pd_below(const PosteriorSnapshot& s, std::span<const double> doses, int level, double threshold) {
    const double d = doses[level - 1];
    return posterior_fraction(static_cast<int>(s.emax_draws.size()),
                              [&](int i) { return snapshot_mu(s.emax_draws[i], d) < threshold; });
}

double mean_pd_curve(const PosteriorSnapshot& s, double dose) {
    if (s.emax_draws.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& d : s.emax_draws) acc += snapshot_mu(d, dose);
    return acc / static_cast<double>(s.emax_draws.size());
}

double interpolate_effective_dose(std::span<const double> doses, std::span<const double> effective, double dose) {
    const std::size_t J = doses.size();
    if (J == 1) return effective[0];
    std::size_t k = 0;
    while (k + 2 < J && dose > doses[k + 1]) ++k;
    const double w = (dose - doses[k]) / (doses[k + 1] - doses[k]);
    return effective[k] + w * (effective[k + 1] - effective[k]);
}

double mean_tox_curve(const PosteriorSnapshot& s, double alpha0, std::span<const double> doses, double dose) {
    if (s.alpha_draws.empty()) return 0.0;
    const double dt = interpolate_effective_dose(doses, s.effective_doses, dose);
    double acc = 0.0;
    for (double a : s.alpha_draws) acc += tox_probability(alpha0, a, dt);
    return acc / static_cast<double>(s.alpha_draws.size());
}

}  // namespace droid::inference
