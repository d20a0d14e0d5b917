#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgpccm/series.hpp"
#include "vgpccm/variational.hpp"

namespace vgpccm {

enum class TestMode { GpCcm, VgpCcm };

// Divisor applied to the raw statistic before the tanh squashing: the
// embedding row count d, or the raw series length N.
enum class NormDivisor { EmbeddingRows, SourceLength };

// Which series supplies the targets when fitting a posterior for an
// embedding: the opposite series of the pair (cross-map evidence) or the
// embedded series itself.
enum class HyperfitTarget { Cross, SelfSeries };

struct TestConfig {
    int n_permutations = 30;
    double alpha = 0.05;
    int mc_draws_observed = 10;
    TestMode mode = TestMode::VgpCcm;
    EmbeddingConfig embedding;
    std::uint64_t seed = 0;
    NormDivisor norm_divisor = NormDivisor::EmbeddingRows;
    HyperfitTarget hyperfit_target = HyperfitTarget::Cross;
    int inducing_count = 0;  // 0 = auto: min(32, d/2)
    OptimizerConfig optimizer;
    double prior_location = 1.0;
    double prior_scale = 1.0;
    void validate() const;
};

struct CouplingTestResult {
    std::string direction;
    TestMode mode = TestMode::VgpCcm;
    double k_observed = 0.0;
    std::vector<double> null_samples;
    double p_value = 0.0;
    bool reject_h0 = false;
};

struct ConfusionCounts {
    long correct_accepts = 0;
    long incorrect_rejects = 0;
};

// K(x->y) = log|cov over x's embedding with theta_x|
//         - log|cov over y's embedding with theta_y|.
// Antisymmetric under swapping the (embedding, hyperparameter) roles.
double raw_statistic(const EmbeddedSeries& x_emb, const EmbeddedSeries& y_emb,
                     const HyperparameterSet& theta_x, const HyperparameterSet& theta_y);

// tanh(raw / divisor); strictly inside (-1, 1).
double normalize_statistic(double raw, long divisor);

// Observed coupling statistic for standardized series. GP-CCM evaluates at
// the posterior modes; VGP-CCM averages the raw statistic over
// mc_draws_observed paired posterior draws before squashing.
double observed_statistic(const TimeSeries& x, const TimeSeries& y,
                          const VariationalPosterior& q_x, const VariationalPosterior& q_y,
                          const TestConfig& cfg);

// Permutation null: both series are independently shuffled and re-embedded
// each iteration. GP-CCM keeps the mode hyperparameters fixed; VGP-CCM draws
// one fresh hyperparameter sample per side and iteration.
std::vector<double> null_distribution(const TimeSeries& x, const TimeSeries& y,
                                      const VariationalPosterior& q_x,
                                      const VariationalPosterior& q_y,
                                      const TestConfig& cfg);

// Fraction of null samples strictly below k_obs (ties count as not-below).
double p_value(double k_obs, const std::vector<double>& null_samples);

// Reject H0 (declare coupling) iff 1 - p < alpha.
bool decide(double p, double alpha);

double specificity(const ConfusionCounts& counts);

// Fits the two posteriors a pair of standardized series shares: q_x on x's
// embedding and q_y on y's, each against the target series selected by
// cfg.hyperfit_target.
struct PairPosteriors {
    VariationalPosterior q_x;
    VariationalPosterior q_y;
    std::vector<TraceRow> trace_x;
    std::vector<TraceRow> trace_y;
};

PairPosteriors fit_pair_posteriors(const TimeSeries& x_std, const TimeSeries& y_std,
                                   const TestConfig& cfg);

// Full directed test plus its mirror. The reverse direction reuses the same
// fits and permutation draws, so it is the exact negation of the forward
// statistic and null.
struct DirectedTestPair {
    CouplingTestResult forward;
    CouplingTestResult reverse;
};

DirectedTestPair run_directed_tests(const TimeSeries& x_std, const TimeSeries& y_std,
                                    const PairPosteriors& fits, const TestConfig& cfg,
                                    const std::string& x_name, const std::string& y_name);

}  // namespace vgpccm
