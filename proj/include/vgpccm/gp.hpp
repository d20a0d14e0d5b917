#pragma once

#include <Eigen/Dense>

#include "vgpccm/series.hpp"

namespace vgpccm {

// Hyperparameters of the sparse ARD squared-exponential GP: output scale,
// per-coordinate length scales, observation-noise variance, and the M
// inducing pseudo-input locations (one row per point).
struct HyperparameterSet {
    double amplitude = 1.0;
    Eigen::VectorXd lengthscales;
    double noise_var = 1.0;
    Eigen::MatrixXd inducing;

    int input_dim() const { return static_cast<int>(lengthscales.size()); }
    int inducing_count() const { return static_cast<int>(inducing.rows()); }
    void validate() const;
};

// Conditional covariance of the latent values at the training inputs,
// together with the log-determinant of the jitter-stabilized matrix.
struct PosteriorCovariance {
    Eigen::MatrixXd matrix;
    double log_det = 0.0;
};

// Gradient of the sparse log marginal likelihood with respect to every
// kernel hyperparameter.
struct MarginalGradient {
    double value = 0.0;  // the log marginal itself
    double d_amplitude = 0.0;
    Eigen::VectorXd d_lengthscales;
    double d_noise_var = 0.0;
    Eigen::MatrixXd d_inducing;
};

// k(a,b) = amplitude^2 * exp(-sum_k (a_k-b_k)^2 / (2 l_k^2))
double se_ard_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     const HyperparameterSet& theta);

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const HyperparameterSet& theta);
Eigen::MatrixXd kernel_matrix(const EmbeddedSeries& a, const EmbeddedSeries& b,
                              const HyperparameterSet& theta);

// log|M| via Cholesky. Starts jitter-free; on breakdown escalates a relative
// jitter from 1e-10*mean(diag) by decades up to 1e-6*mean(diag), then throws
// NumericalFailureError.
double log_det_psd(const Eigen::MatrixXd& m);

// FITC posterior covariance of the d latent targets given noisy observations
// at the same inputs. With Q = Knm Kmm^-1 Kmn and Khat = Q + diag(Knn - Q),
// the result is Khat - Khat (Khat + noise_var I)^-1 Khat, assembled through
// the Woodbury identity as noise_var I - noise_var^2 (Khat + noise_var I)^-1.
PosteriorCovariance sparse_posterior_cov(const EmbeddedSeries& x_emb,
                                         const HyperparameterSet& theta);

// Log density of the targets under N(0, Khat + noise_var I); O(d M^2).
double gp_log_marginal(const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                       const HyperparameterSet& theta);

// Same value plus its analytic gradient; used by the ELBO optimizer.
MarginalGradient gp_log_marginal_gradient(const Eigen::VectorXd& targets,
                                          const EmbeddedSeries& x_emb,
                                          const HyperparameterSet& theta);

}  // namespace vgpccm
