// Adaptive random-walk Metropolis within a component-wise scan.
//
// The target works on an unconstrained parameter vector and caches whatever
// it needs between proposals. Step sizes adapt during burn-in only, so the
// retained chain is a plain Metropolis chain.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "droid/inference.hpp"
#include "droid/random.hpp"

namespace droid::inference::detail {

/* Target concept:
 *   int dim() const;
 *   double propose_point(const double* x);  // optional: joint move to x
 *   double log_density() const;             // at the current point
 *   double propose(int k, double value);    // log density with component k set to value
 *   void accept();
 *   void reject();
 *   double coordinate(int k) const;         // current unconstrained value
 *   void natural(double* row) const;        // current point on the reported scale
 */
template <class Target>
DrawSet run_scan(Target& target, const McmcSettings& settings, std::uint64_t seed,
                 std::vector<std::string> names, double initial_step = 0.5) {
    const int dim = target.dim();
    Rng rng(seed);

    std::vector<double> step(dim, initial_step);
    std::vector<int> batch_accept(dim, 0);
    std::vector<long> kept_accept(dim, 0);
    constexpr int kBatch = 50;
    constexpr double kTarget = 0.35;

    if (!std::isfinite(target.log_density())) {
        throw std::runtime_error("MCMC: non-finite log density at the initial point");
    }

    // Joint moves for correlated targets: a Gaussian proposal whose
    // covariance is the running estimate over the second half of burn-in
    // (adaptive Metropolis), frozen once retention starts.
    constexpr bool kJoint = requires(Target& t, const double* x) { t.propose_point(x); };
    const long joint_start = settings.burn_in / 2;
    std::vector<double> mean(dim, 0.0), cov(dim * dim, 0.0), chol(dim * dim, 0.0);
    long n_cov = 0;
    bool have_chol = false;
    double joint_scale = 2.38 * 2.38 / dim;
    int joint_batch_accept = 0;
    std::vector<double> z(dim), x(dim);

    auto refresh_chol = [&] {
        // Cholesky of cov + jitter; leaves have_chol false when it fails
        std::fill(chol.begin(), chol.end(), 0.0);
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j <= i; ++j) {
                double v = cov[i * dim + j] / std::max<long>(n_cov - 1, 1) + (i == j ? 1e-10 : 0.0);
                for (int k = 0; k < j; ++k) v -= chol[i * dim + k] * chol[j * dim + k];
                if (i == j) {
                    if (!(v > 0.0)) {
                        have_chol = false;
                        return;
                    }
                    chol[i * dim + i] = std::sqrt(v);
                } else {
                    chol[i * dim + j] = v / chol[j * dim + j];
                }
            }
        }
        have_chol = true;
    };

    DrawSet out;
    out.names = std::move(names);
    out.cols = dim;
    out.rows = settings.draws;
    out.seed = seed;
    out.values.reserve(static_cast<std::size_t>(settings.draws) * dim);

    const long total = static_cast<long>(settings.burn_in) + static_cast<long>(settings.draws) * settings.thin;
    std::vector<double> row(dim);
    int batches = 0;

    for (long it = 0; it < total; ++it) {
        const bool burning = it < settings.burn_in;
        for (int k = 0; k < dim; ++k) {
            const double cur = target.log_density();
            const double x = target.coordinate(k) + step[k] * std_normal(rng);
            const double prop = target.propose(k, x);
            if (std::isnan(prop)) throw std::runtime_error("MCMC: non-finite log density");
            const double log_u = std::log(uniform01(rng));
            if (prop - cur >= 0.0 || log_u < prop - cur) {
                target.accept();
                if (burning) {
                    ++batch_accept[k];
                } else {
                    ++kept_accept[k];
                }
            } else {
                target.reject();
            }
        }
        if constexpr (kJoint) {
            if (burning && it >= joint_start) {
                // Welford update of the running covariance
                ++n_cov;
                for (int i = 0; i < dim; ++i) z[i] = target.coordinate(i) - mean[i];
                for (int i = 0; i < dim; ++i) mean[i] += z[i] / n_cov;
                for (int i = 0; i < dim; ++i) {
                    for (int j = 0; j < dim; ++j) cov[i * dim + j] += z[i] * (target.coordinate(j) - mean[j]);
                }
            }
            if (have_chol) {
                for (int i = 0; i < dim; ++i) z[i] = std_normal(rng);
                for (int i = 0; i < dim; ++i) {
                    double v = 0.0;
                    for (int j = 0; j <= i; ++j) v += chol[i * dim + j] * z[j];
                    x[i] = target.coordinate(i) + std::sqrt(joint_scale) * v;
                }
                const double cur = target.log_density();
                const double prop = target.propose_point(x.data());
                if (std::isnan(prop)) throw std::runtime_error("MCMC: non-finite log density");
                if (prop - cur >= 0.0 || std::log(uniform01(rng)) < prop - cur) {
                    target.accept();
                    if (burning) ++joint_batch_accept;
                } else {
                    target.reject();
                }
            }
        }
        if (burning && (it + 1) % kBatch == 0) {
            if constexpr (kJoint) {
                if (have_chol) {
                    const double rate = static_cast<double>(joint_batch_accept) / kBatch;
                    joint_scale *= std::exp(rate > 0.25 ? 0.2 : -0.2);
                }
                joint_batch_accept = 0;
                if (n_cov >= 100) refresh_chol();
            }
            ++batches;
            const double adj = std::min(0.5, 1.0 / std::sqrt(static_cast<double>(batches)));
            for (int k = 0; k < dim; ++k) {
                const double rate = static_cast<double>(batch_accept[k]) / kBatch;
                step[k] *= std::exp(rate > kTarget ? adj : -adj);
                batch_accept[k] = 0;
            }
        }
        if (!burning && (it - settings.burn_in + 1) % settings.thin == 0) {
            target.natural(row.data());
            for (double v : row) {
                if (!std::isfinite(v)) throw std::runtime_error("MCMC: non-finite draw");
                out.values.push_back(v);
            }
        }
    }

    const double kept_iters = static_cast<double>(settings.draws) * settings.thin;
    out.acceptance.resize(dim);
    for (int k = 0; k < dim; ++k) out.acceptance[k] = kept_iters > 0 ? kept_accept[k] / kept_iters : 0.0;
    return out;
}

}  // namespace droid::inference::detail
