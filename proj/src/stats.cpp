#include "vgpccm/stats.hpp"

#include <algorithm>
#include <cmath>

#include "vgpccm/errors.hpp"
#include "vgpccm/rng.hpp"

namespace vgpccm {

namespace {

// Seed-stream tags so every random consumer owns an independent stream.
constexpr std::uint64_t kTagPriorX = 0x11;
constexpr std::uint64_t kTagPriorY = 0x12;
constexpr std::uint64_t kTagOptX = 0x21;
constexpr std::uint64_t kTagOptY = 0x22;
constexpr std::uint64_t kTagObsX = 0x31;
constexpr std::uint64_t kTagObsY = 0x32;
constexpr std::uint64_t kTagPermX = 0x41;
constexpr std::uint64_t kTagPermY = 0x42;
constexpr std::uint64_t kTagNullX = 0x51;
constexpr std::uint64_t kTagNullY = 0x52;

long norm_divisor_value(const TestConfig& cfg, const EmbeddedSeries& aligned) {
    return cfg.norm_divisor == NormDivisor::EmbeddingRows ? aligned.count()
                                                          : aligned.source_length;
}

std::pair<EmbeddedSeries, EmbeddedSeries> embed_aligned(const TimeSeries& x,
                                                        const TimeSeries& y,
                                                        const EmbeddingConfig& cfg) {
    return align_pair(delay_embed(x, cfg), delay_embed(y, cfg));
}

int auto_inducing(const TestConfig& cfg, long d) {
    if (cfg.inducing_count > 0) return cfg.inducing_count;
    return static_cast<int>(std::max(1L, std::min(32L, d / 2)));
}

}  // namespace

void TestConfig::validate() const {
    if (n_permutations < 1) {
        throw ValidationError("n_permutations must be >= 1");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ValidationError("alpha must lie in (0, 1)");
    }
    if (mc_draws_observed < 1) {
        throw ValidationError("mc_draws_observed must be >= 1");
    }
    if (inducing_count < 0) {
        throw ValidationError("inducing_count must be >= 0 (0 = auto)");
    }
    optimizer.validate();
}

double raw_statistic(const EmbeddedSeries& x_emb, const EmbeddedSeries& y_emb,
                     const HyperparameterSet& theta_x, const HyperparameterSet& theta_y) {
    if (x_emb.count() != y_emb.count()) {
        throw IncompatibleLengthsError(
            "raw_statistic requires aligned embeddings with equal row counts");
    }
    const PosteriorCovariance cov_given_x = sparse_posterior_cov(x_emb, theta_x);
    const PosteriorCovariance cov_given_y = sparse_posterior_cov(y_emb, theta_y);
    return cov_given_x.log_det - cov_given_y.log_det;
}

double normalize_statistic(double raw, long divisor) {
    if (divisor < 1) {
        throw ValidationError("normalization divisor must be >= 1");
    }
    return std::tanh(raw / static_cast<double>(divisor));
}

double observed_statistic(const TimeSeries& x, const TimeSeries& y,
                          const VariationalPosterior& q_x, const VariationalPosterior& q_y,
                          const TestConfig& cfg) {
    cfg.validate();
    const auto [ex, ey] = embed_aligned(x, y, cfg.embedding);
    const long divisor = norm_divisor_value(cfg, ex);

    if (cfg.mode == TestMode::GpCcm) {
        const double raw = raw_statistic(ex, ey, map_point(q_x), map_point(q_y));
        return normalize_statistic(raw, divisor);
    }
    double acc = 0.0;
    for (int s = 0; s < cfg.mc_draws_observed; ++s) {
        const auto su = static_cast<std::uint64_t>(s);
        const HyperparameterSet tx =
            sample_reparameterized(q_x, derive_seed(cfg.seed, {kTagObsX, su}));
        const HyperparameterSet ty =
            sample_reparameterized(q_y, derive_seed(cfg.seed, {kTagObsY, su}));
        acc += raw_statistic(ex, ey, tx, ty);
    }
    return normalize_statistic(acc / cfg.mc_draws_observed, divisor);
}

std::vector<double> null_distribution(const TimeSeries& x, const TimeSeries& y,
                                      const VariationalPosterior& q_x,
                                      const VariationalPosterior& q_y,
                                      const TestConfig& cfg) {
    cfg.validate();
    HyperparameterSet map_x, map_y;
    if (cfg.mode == TestMode::GpCcm) {
        map_x = map_point(q_x);
        map_y = map_point(q_y);
    }

    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(cfg.n_permutations));
    for (int k = 0; k < cfg.n_permutations; ++k) {
        const auto ku = static_cast<std::uint64_t>(k);
        const TimeSeries xp = permute_series(x, derive_seed(cfg.seed, {kTagPermX, ku}));
        const TimeSeries yp = permute_series(y, derive_seed(cfg.seed, {kTagPermY, ku}));
        const auto [ex, ey] = embed_aligned(xp, yp, cfg.embedding);

        double raw;
        if (cfg.mode == TestMode::GpCcm) {
            raw = raw_statistic(ex, ey, map_x, map_y);
        } else {
            const HyperparameterSet tx =
                sample_reparameterized(q_x, derive_seed(cfg.seed, {kTagNullX, ku}));
            const HyperparameterSet ty =
                sample_reparameterized(q_y, derive_seed(cfg.seed, {kTagNullY, ku}));
            raw = raw_statistic(ex, ey, tx, ty);
        }
        samples.push_back(normalize_statistic(raw, norm_divisor_value(cfg, ex)));
    }
    return samples;
}

double p_value(double k_obs, const std::vector<double>& null_samples) {
    if (null_samples.empty()) {
        throw EmptyNullError("p_value needs at least one null sample");
    }
    const long below = std::count_if(null_samples.begin(), null_samples.end(),
                                     [&](double v) { return v < k_obs; });
    return static_cast<double>(below) / static_cast<double>(null_samples.size());
}

bool decide(double p, double alpha) {
    if (p < 0.0 || p > 1.0) {
        throw ValidationError("p-value outside [0, 1]");
    }
    return (1.0 - p) < alpha;
}

double specificity(const ConfusionCounts& counts) {
    if (counts.correct_accepts < 0 || counts.incorrect_rejects < 0) {
        throw ValidationError("confusion counts must be non-negative");
    }
    const long total = counts.correct_accepts + counts.incorrect_rejects;
    if (total == 0) {
        throw NoNullTestsError("specificity undefined without null tests");
    }
    return static_cast<double>(counts.correct_accepts) / static_cast<double>(total);
}

PairPosteriors fit_pair_posteriors(const TimeSeries& x_std, const TimeSeries& y_std,
                                   const TestConfig& cfg) {
    cfg.validate();
    const auto [ex, ey] = embed_aligned(x_std, y_std, cfg.embedding);
    const int m_count = auto_inducing(cfg, ex.count());

    const Eigen::VectorXd x_targets = cfg.hyperfit_target == HyperfitTarget::Cross
                                          ? ey.current_values()
                                          : ex.current_values();
    const Eigen::VectorXd y_targets = cfg.hyperfit_target == HyperfitTarget::Cross
                                          ? ex.current_values()
                                          : ey.current_values();

    PairPosteriors out;
    OptimizerConfig opt = cfg.optimizer;

    const VariationalPosterior prior_x =
        default_prior(ex, m_count, derive_seed(cfg.seed, {kTagPriorX}),
                      cfg.prior_location, cfg.prior_scale);
    opt.seed = derive_seed(cfg.seed, {kTagOptX});
    OptimizeResult rx = optimize_elbo(prior_x, x_targets, ex, opt);
    out.q_x = std::move(rx.posterior);
    out.trace_x = std::move(rx.trace);

    const VariationalPosterior prior_y =
        default_prior(ey, m_count, derive_seed(cfg.seed, {kTagPriorY}),
                      cfg.prior_location, cfg.prior_scale);
    opt.seed = derive_seed(cfg.seed, {kTagOptY});
    OptimizeResult ry = optimize_elbo(prior_y, y_targets, ey, opt);
    out.q_y = std::move(ry.posterior);
    out.trace_y = std::move(ry.trace);
    return out;
}

DirectedTestPair run_directed_tests(const TimeSeries& x_std, const TimeSeries& y_std,
                                    const PairPosteriors& fits, const TestConfig& cfg,
                                    const std::string& x_name, const std::string& y_name) {
    DirectedTestPair out;
    out.forward.direction = x_name + "->" + y_name;
    out.forward.mode = cfg.mode;
    out.forward.k_observed = observed_statistic(x_std, y_std, fits.q_x, fits.q_y, cfg);
    out.forward.null_samples = null_distribution(x_std, y_std, fits.q_x, fits.q_y, cfg);
    out.forward.p_value = p_value(out.forward.k_observed, out.forward.null_samples);
    out.forward.reject_h0 = decide(out.forward.p_value, cfg.alpha);

    out.reverse.direction = y_name + "->" + x_name;
    out.reverse.mode = cfg.mode;
    out.reverse.k_observed = -out.forward.k_observed;
    out.reverse.null_samples.reserve(out.forward.null_samples.size());
    for (double v : out.forward.null_samples) {
        out.reverse.null_samples.push_back(-v);
    }
    out.reverse.p_value = p_value(out.reverse.k_observed, out.reverse.null_samples);
    out.reverse.reject_h0 = decide(out.reverse.p_value, cfg.alpha);
    return out;
}

}  // namespace vgpccm
