#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "vgpccm/gp.hpp"
#include "vgpccm/series.hpp"

namespace vgpccm {

enum class FactorFamily { LogNormal, Normal };

// One mean-field factor over a single scalar hyperparameter dimension.
// Log-normal factors keep kernel scales strictly positive; inducing-point
// coordinates use plain normal factors.
struct FactorParams {
    FactorFamily family = FactorFamily::LogNormal;
    double location = 0.0;
    double scale = 1.0;
};

// Fully factorized posterior over every scalar hyperparameter dimension.
// Factor layout: amplitude, one factor per length scale, noise variance,
// then the inducing-point coordinates in row-major order.
struct VariationalPosterior {
    int input_dim = 0;
    int inducing_count = 0;
    std::vector<FactorParams> factors;

    std::size_t size() const { return factors.size(); }
    std::size_t amplitude_index() const { return 0; }
    std::size_t lengthscale_index(int k) const { return 1 + static_cast<std::size_t>(k); }
    std::size_t noise_index() const { return 1 + static_cast<std::size_t>(input_dim); }
    std::size_t inducing_index(int j, int k) const {
        return 2 + static_cast<std::size_t>(input_dim) +
               static_cast<std::size_t>(j) * input_dim + static_cast<std::size_t>(k);
    }
    void validate() const;
};

struct OptimizerConfig {
    double learning_rate = 0.05;
    long iterations = 500;
    int mc_draws = 10;
    double clip_norm = 50.0;
    std::uint64_t seed = 0;
    void validate() const;
};

struct TraceRow {
    long iteration = 0;
    double elbo = 0.0;
    double grad_norm = 0.0;  // after clipping
};

struct OptimizeResult {
    VariationalPosterior posterior;
    std::vector<TraceRow> trace;
};

struct ElboGradient {
    double elbo = 0.0;
    Eigen::VectorXd d_location;  // one entry per factor
    Eigen::VectorXd d_scale;
};

// Priors for standardized data: log-normal(location, scale) on amplitude,
// every length scale and the noise variance; normal(coordinate, 1) on each
// inducing coordinate, centered on a seeded random subset of embedding rows.
VariationalPosterior default_prior(const EmbeddedSeries& x_emb, int inducing_count,
                                   std::uint64_t seed, double location = 1.0,
                                   double scale = 1.0);

// theta_k = exp(mu_k + s_k eps_k) for log-normal factors, mu_k + s_k eps_k
// for normal factors, with eps ~ N(0,1) drawn from the seed.
HyperparameterSet sample_reparameterized(const VariationalPosterior& q,
                                         std::uint64_t seed);

// Analytic KL(q||p) for two factors of the same family:
// log(s_p/s_q) + (s_q^2 + (mu_q - mu_p)^2) / (2 s_p^2) - 1/2.
double kl_factor(const FactorParams& q, const FactorParams& p);

double kl_total(const VariationalPosterior& q, const VariationalPosterior& p);

// Monte Carlo ELBO: mean log marginal over draw_count reparameterized draws
// minus the total KL to the prior.
double elbo_estimate(const VariationalPosterior& q, const VariationalPosterior& priors,
                     const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                     int draw_count, std::uint64_t seed);

// Pathwise gradient of elbo_estimate at fixed noise draws, with respect to
// every (location, scale) pair.
ElboGradient elbo_gradient(const VariationalPosterior& q, const VariationalPosterior& priors,
                           const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                           int draw_count, std::uint64_t seed);

// Stochastic gradient ascent with global-norm clipping; scale parameters are
// updated in log space so they stay positive.
OptimizeResult optimize_elbo(const VariationalPosterior& priors,
                             const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                             const OptimizerConfig& cfg);

// Per-dimension posterior mode: exp(mu - s^2) for log-normal factors, mu for
// normal factors.
HyperparameterSet map_point(const VariationalPosterior& q);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

}  // namespace vgpccm
