#include "vgpccm/variational.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "vgpccm/errors.hpp"
#include "vgpccm/rng.hpp"

namespace vgpccm {

namespace {

// Factor values -> HyperparameterSet, following the posterior's layout.
HyperparameterSet assemble(const VariationalPosterior& q, const Eigen::VectorXd& values) {
    HyperparameterSet theta;
    theta.amplitude = values[q.amplitude_index()];
    theta.lengthscales.resize(q.input_dim);
    for (int k = 0; k < q.input_dim; ++k) {
        theta.lengthscales[k] = values[q.lengthscale_index(k)];
    }
    theta.noise_var = values[q.noise_index()];
    theta.inducing.resize(q.inducing_count, q.input_dim);
    for (int j = 0; j < q.inducing_count; ++j) {
        for (int k = 0; k < q.input_dim; ++k) {
            theta.inducing(j, k) = values[q.inducing_index(j, k)];
        }
    }
    return theta;
}

Eigen::VectorXd draw_values(const VariationalPosterior& q, std::uint64_t seed,
                            Eigen::VectorXd* eps_out) {
    Rng rng(seed);
    Eigen::VectorXd values(q.size());
    if (eps_out) eps_out->resize(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const FactorParams& f = q.factors[i];
        const double eps = rng.normal();
        const double raw = f.location + f.scale * eps;
        values[i] = f.family == FactorFamily::LogNormal ? std::exp(raw) : raw;
        if (eps_out) (*eps_out)[i] = eps;
    }
    return values;
}

// Scatter a MarginalGradient back onto the flat factor layout.
Eigen::VectorXd flatten_gradient(const VariationalPosterior& q, const MarginalGradient& g) {
    Eigen::VectorXd out(q.size());
    out[q.amplitude_index()] = g.d_amplitude;
    for (int k = 0; k < q.input_dim; ++k) {
        out[q.lengthscale_index(k)] = g.d_lengthscales[k];
    }
    out[q.noise_index()] = g.d_noise_var;
    for (int j = 0; j < q.inducing_count; ++j) {
        for (int k = 0; k < q.input_dim; ++k) {
            out[q.inducing_index(j, k)] = g.d_inducing(j, k);
        }
    }
    return out;
}

void check_compatible(const VariationalPosterior& q, const VariationalPosterior& p) {
    if (q.size() != p.size() || q.input_dim != p.input_dim ||
        q.inducing_count != p.inducing_count) {
        throw DimensionMismatchError("posterior and prior layouts differ");
    }
}

}  // namespace

void VariationalPosterior::validate() const {
    const std::size_t expected =
        2 + static_cast<std::size_t>(input_dim) * (1 + inducing_count);
    if (factors.size() != expected) {
        throw ValidationError("posterior has " + std::to_string(factors.size()) +
                              " factors, layout requires " + std::to_string(expected));
    }
    for (const FactorParams& f : factors) {
        if (!(f.scale > 0.0) || !std::isfinite(f.scale) || !std::isfinite(f.location)) {
            throw ValidationError("factor parameters must be finite with scale > 0");
        }
    }
}

void OptimizerConfig::validate() const {
    if (!(learning_rate >= 0.0) || iterations < 1 || mc_draws < 1 ||
        !(clip_norm > 0.0)) {
        throw ValidationError("optimizer config requires learning_rate >= 0, "
                              "iterations >= 1, mc_draws >= 1, clip_norm > 0");
    }
}

VariationalPosterior default_prior(const EmbeddedSeries& x_emb, int inducing_count,
                                   std::uint64_t seed, double location, double scale) {
    if (inducing_count < 1) {
        throw ValidationError("inducing_count must be >= 1");
    }
    if (!(scale > 0.0)) {
        throw ValidationError("prior scale must be > 0");
    }
    const long d = x_emb.count();
    const int dim = x_emb.dim();

    VariationalPosterior prior;
    prior.input_dim = dim;
    prior.inducing_count = inducing_count;
    prior.factors.assign(2 + static_cast<std::size_t>(dim) * (1 + inducing_count),
                         FactorParams{FactorFamily::LogNormal, location, scale});

    // Inducing locations: a seeded random subset of the embedding rows
    // (distinct rows while enough exist), with unit normal uncertainty.
    Rng rng(seed);
    std::vector<long> indices(static_cast<std::size_t>(d));
    std::iota(indices.begin(), indices.end(), 0L);
    for (int j = 0; j < inducing_count; ++j) {
        long row;
        if (j < d) {
            const std::size_t pick =
                static_cast<std::size_t>(j) +
                static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(d - j)));
            std::swap(indices[static_cast<std::size_t>(j)], indices[pick]);
            row = indices[static_cast<std::size_t>(j)];
        } else {
            row = static_cast<long>(rng.below(static_cast<std::uint64_t>(d)));
        }
        for (int k = 0; k < dim; ++k) {
            prior.factors[prior.inducing_index(j, k)] =
                FactorParams{FactorFamily::Normal, x_emb.rows(row, k), 1.0};
        }
    }
    return prior;
}

HyperparameterSet sample_reparameterized(const VariationalPosterior& q,
                                         std::uint64_t seed) {
    q.validate();
    return assemble(q, draw_values(q, seed, nullptr));
}

double kl_factor(const FactorParams& q, const FactorParams& p) {
    if (q.family != p.family) {
        throw FamilyMismatchError("KL between factors of different families");
    }
    const double ratio = q.scale / p.scale;
    const double mean_shift = (q.location - p.location) / p.scale;
    return -std::log(ratio) + 0.5 * (ratio * ratio + mean_shift * mean_shift) - 0.5;
}

double kl_total(const VariationalPosterior& q, const VariationalPosterior& p) {
    check_compatible(q, p);
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        total += kl_factor(q.factors[i], p.factors[i]);
    }
    return total;
}

double elbo_estimate(const VariationalPosterior& q, const VariationalPosterior& priors,
                     const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                     int draw_count, std::uint64_t seed) {
    if (draw_count < 1) {
        throw ValidationError("elbo_estimate needs draw_count >= 1");
    }
    q.validate();
    double acc = 0.0;
    for (int s = 0; s < draw_count; ++s) {
        const HyperparameterSet theta =
            assemble(q, draw_values(q, derive_seed(seed, {static_cast<std::uint64_t>(s)}),
                                    nullptr));
        acc += gp_log_marginal(targets, x_emb, theta);
    }
    return acc / draw_count - kl_total(q, priors);
}

ElboGradient elbo_gradient(const VariationalPosterior& q, const VariationalPosterior& priors,
                           const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                           int draw_count, std::uint64_t seed) {
    if (draw_count < 1) {
        throw ValidationError("elbo_gradient needs draw_count >= 1");
    }
    q.validate();
    check_compatible(q, priors);

    ElboGradient out;
    out.d_location = Eigen::VectorXd::Zero(q.size());
    out.d_scale = Eigen::VectorXd::Zero(q.size());

    double mean_marginal = 0.0;
    for (int s = 0; s < draw_count; ++s) {
        Eigen::VectorXd eps;
        const Eigen::VectorXd values =
            draw_values(q, derive_seed(seed, {static_cast<std::uint64_t>(s)}), &eps);
        const HyperparameterSet theta = assemble(q, values);
        const MarginalGradient mg = gp_log_marginal_gradient(targets, x_emb, theta);
        mean_marginal += mg.value;

        const Eigen::VectorXd d_value = flatten_gradient(q, mg);
        for (std::size_t i = 0; i < q.size(); ++i) {
            // d theta / d mu is theta for log-normal factors, 1 for normal;
            // d theta / d scale carries an extra factor eps.
            const double d_mu = q.factors[i].family == FactorFamily::LogNormal
                                    ? d_value[i] * values[i]
                                    : d_value[i];
            out.d_location[i] += d_mu;
            out.d_scale[i] += d_mu * eps[i];
        }
    }
    out.d_location /= draw_count;
    out.d_scale /= draw_count;
    mean_marginal /= draw_count;

    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const FactorParams& fq = q.factors[i];
        const FactorParams& fp = priors.factors[i];
        kl += kl_factor(fq, fp);
        out.d_location[i] -= (fq.location - fp.location) / (fp.scale * fp.scale);
        out.d_scale[i] -= -1.0 / fq.scale + fq.scale / (fp.scale * fp.scale);
    }
    out.elbo = mean_marginal - kl;
    return out;
}

OptimizeResult optimize_elbo(const VariationalPosterior& priors,
                             const Eigen::VectorXd& targets, const EmbeddedSeries& x_emb,
                             const OptimizerConfig& cfg) {
    cfg.validate();
    priors.validate();

    OptimizeResult result;
    result.posterior = priors;
    result.trace.reserve(static_cast<std::size_t>(cfg.iterations));
    VariationalPosterior& q = result.posterior;

    for (long it = 0; it < cfg.iterations; ++it) {
        const ElboGradient g =
            elbo_gradient(q, priors, targets, x_emb, cfg.mc_draws,
                          derive_seed(cfg.seed, {0xe1b0ull, static_cast<std::uint64_t>(it)}));
        if (!std::isfinite(g.elbo)) {
            throw DivergenceError("ELBO became non-finite at iteration " +
                                  std::to_string(it));
        }

        // Ascent direction in (location, log scale) coordinates.
        Eigen::VectorXd d_log_scale(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            d_log_scale[i] = g.d_scale[i] * q.factors[i].scale;
        }
        double norm = std::sqrt(g.d_location.squaredNorm() + d_log_scale.squaredNorm());
        double factor = 1.0;
        if (norm > cfg.clip_norm && norm > 0.0) {
            factor = cfg.clip_norm / norm;
            norm = cfg.clip_norm;
        }
        for (std::size_t i = 0; i < q.size(); ++i) {
            q.factors[i].location += cfg.learning_rate * factor * g.d_location[i];
            q.factors[i].scale *= std::exp(cfg.learning_rate * factor * d_log_scale[i]);
        }
        result.trace.push_back({it, g.elbo, norm});
    }
    return result;
}

HyperparameterSet map_point(const VariationalPosterior& q) {
    q.validate();
    Eigen::VectorXd values(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const FactorParams& f = q.factors[i];
        values[i] = f.family == FactorFamily::LogNormal
                        ? std::exp(f.location - f.scale * f.scale)
                        : f.location;
    }
    return assemble(q, values);
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open trace file " + path);
    }
    out << "iteration,elbo,grad_norm\n";
    for (const TraceRow& row : trace) {
        out << row.iteration << ',' << row.elbo << ',' << row.grad_norm << '\n';
    }
}

}  // namespace vgpccm
