#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "vgpccm/errors.hpp"
#include "vgpccm/rng.hpp"
#include "vgpccm/simulate.hpp"
#include "vgpccm/variational.hpp"

using namespace vgpccm;

namespace {

double factor_log_density(const FactorParams& f, double x) {
    if (f.family == FactorFamily::LogNormal) {
        if (x <= 0.0) return -std::numeric_limits<double>::infinity();
        const double t = (std::log(x) - f.location) / f.scale;
        return -0.5 * t * t - std::log(x * f.scale * std::sqrt(2.0 * M_PI));
    }
    const double t = (x - f.location) / f.scale;
    return -0.5 * t * t - std::log(f.scale * std::sqrt(2.0 * M_PI));
}

// KL by direct quadrature of q log(q/p) over the factor's support.
double kl_quadrature(const FactorParams& q, const FactorParams& p) {
    auto integrand = [&](double x) {
        const double lq = factor_log_density(q, x);
        if (!std::isfinite(lq)) return 0.0;
        return std::exp(lq) * (lq - factor_log_density(p, x));
    };
    if (q.family == FactorFamily::LogNormal) {
        // One panel per log-standard-deviation so no panel misses the bump.
        double total = 0.0;
        for (int k = -12; k < 12; ++k) {
            const double lo = std::exp(q.location + k * q.scale);
            const double hi = std::exp(q.location + (k + 1) * q.scale);
            total += oracle::adaptive_simpson(integrand, lo, hi, 1e-13);
        }
        return total;
    }
    return oracle::adaptive_simpson(integrand, q.location - 12.0 * q.scale,
                                    q.location + 12.0 * q.scale, 1e-12);
}

// Asymptotic two-sample Kolmogorov-Smirnov p-value.
double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) {
            ++i;
        } else {
            ++j;
        }
        d = std::max(d, std::abs(i / na - j / nb));
    }
    const double lambda = d * std::sqrt(na * nb / (na + nb));
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    }
    return std::clamp(p, 0.0, 1.0);
}

VariationalPosterior toy_prior(int dim, int inducing, std::uint64_t seed, long rows = 16) {
    Rng rng(seed);
    const Eigen::MatrixXd x = oracle::random_matrix(rows, dim, rng);
    return default_prior(oracle::make_embedded(x), inducing, derive_seed(seed, {1}));
}

}  // namespace

TEST_CASE("default_prior centers inducing factors on embedding rows") {
    Rng rng(5);
    const Eigen::MatrixXd x = oracle::random_matrix(20, 3, rng);
    const EmbeddedSeries emb = oracle::make_embedded(x);
    const VariationalPosterior prior = default_prior(emb, 6, 99);

    REQUIRE(prior.input_dim == 3);
    REQUIRE(prior.inducing_count == 6);
    REQUIRE(prior.factors.size() == 2 + 3 + 6 * 3);

    for (int j = 0; j < 6; ++j) {
        bool found = false;
        for (long r = 0; r < x.rows() && !found; ++r) {
            bool match = true;
            for (int k = 0; k < 3; ++k) {
                const FactorParams& f = prior.factors[prior.inducing_index(j, k)];
                CHECK(f.family == FactorFamily::Normal);
                if (f.location != x(r, k)) match = false;
            }
            found = match;
        }
        CHECK(found);  // each inducing prior mean is an exact embedding row
    }
    CHECK(prior.factors[prior.amplitude_index()].family == FactorFamily::LogNormal);
    CHECK(prior.factors[prior.amplitude_index()].location == 1.0);
    CHECK(prior.factors[prior.noise_index()].family == FactorFamily::LogNormal);
}

TEST_CASE("amplitude prior median is e and length-scale samples stay positive") {
    const VariationalPosterior prior = toy_prior(2, 3, 17);
    const int n = 100000;
    std::vector<double> amp;
    amp.reserve(n);
    bool all_positive = true;
    for (int s = 0; s < n; ++s) {
        const HyperparameterSet theta =
            sample_reparameterized(prior, derive_seed(123, {static_cast<std::uint64_t>(s)}));
        amp.push_back(theta.amplitude);
        if (s < 10000) {
            all_positive = all_positive && (theta.lengthscales.array() > 0.0).all() &&
                           theta.noise_var > 0.0;
        }
    }
    CHECK(all_positive);
    std::nth_element(amp.begin(), amp.begin() + n / 2, amp.end());
    CHECK(std::abs(amp[static_cast<std::size_t>(n / 2)] - std::exp(1.0)) < 0.05);
}

TEST_CASE("reparameterized samples are deterministic and collapse with tiny scales") {
    VariationalPosterior q = toy_prior(2, 2, 31);
    const HyperparameterSet a = sample_reparameterized(q, 555);
    const HyperparameterSet b = sample_reparameterized(q, 555);
    CHECK(a.amplitude == b.amplitude);
    CHECK(a.noise_var == b.noise_var);
    CHECK((a.inducing - b.inducing).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sample_reparameterized(q, 556).amplitude != a.amplitude);

    // scale -> 0 reproduces exp(location) / location exactly (eps suppressed)
    for (FactorParams& f : q.factors) f.scale = 1e-14;
    const HyperparameterSet c = sample_reparameterized(q, 777);
    CHECK(c.amplitude == doctest::Approx(std::exp(1.0)).epsilon(1e-9));
    for (int j = 0; j < q.inducing_count; ++j) {
        for (int k = 0; k < q.input_dim; ++k) {
            CHECK(c.inducing(j, k) ==
                  doctest::Approx(q.factors[q.inducing_index(j, k)].location).epsilon(1e-9));
        }
    }
}

TEST_CASE("log-normal sample mean matches exp(mu + s^2/2)") {
    VariationalPosterior q = toy_prior(1, 1, 41);
    q.factors[q.amplitude_index()] = {FactorFamily::LogNormal, 0.4, 0.6};
    const int n = 100000;
    double acc = 0.0;
    for (int s = 0; s < n; ++s) {
        acc += sample_reparameterized(q, derive_seed(7, {static_cast<std::uint64_t>(s)}))
                   .amplitude;
    }
    const double expected = std::exp(0.4 + 0.6 * 0.6 / 2.0);
    CHECK(std::abs(acc / n - expected) / expected < 0.01);
}

TEST_CASE("reparameterized sampling matches direct sampling (KS)") {
    VariationalPosterior q = toy_prior(1, 1, 43);
    q.factors[q.amplitude_index()] = {FactorFamily::LogNormal, 0.3, 0.8};
    const std::size_t z_idx = q.inducing_index(0, 0);
    const double z_loc = q.factors[z_idx].location;

    const int n = 10000;
    std::vector<double> rep_ln, rep_n, direct_ln, direct_n;
    Rng direct(424242);
    for (int s = 0; s < n; ++s) {
        const HyperparameterSet theta =
            sample_reparameterized(q, derive_seed(888, {static_cast<std::uint64_t>(s)}));
        rep_ln.push_back(theta.amplitude);
        rep_n.push_back(theta.inducing(0, 0));
        direct_ln.push_back(std::exp(0.3 + 0.8 * direct.normal()));
        direct_n.push_back(z_loc + direct.normal());
    }
    CHECK(ks_two_sample_p(rep_ln, direct_ln) > 0.01);
    CHECK(ks_two_sample_p(rep_n, direct_n) > 0.01);
}

TEST_CASE("kl_factor closed forms") {
    const FactorParams a{FactorFamily::LogNormal, 0.7, 0.9};
    CHECK(kl_factor(a, a) == 0.0);
    CHECK(kl_factor({FactorFamily::Normal, 0.0, 1.0}, {FactorFamily::Normal, 1.0, 1.0}) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(kl_factor({FactorFamily::Normal, 0.0, 1.0},
                              {FactorFamily::LogNormal, 0.0, 1.0}),
                    FamilyMismatchError);
}

TEST_CASE("kl_factor matches quadrature for both families") {
    Rng rng(51);
    for (int trial = 0; trial < 8; ++trial) {
        const double mq = rng.normal() * 0.8;
        const double sq = 0.4 + rng.uniform();
        const double mp = rng.normal() * 0.8;
        const double sp = 0.4 + rng.uniform();
        for (FactorFamily family : {FactorFamily::LogNormal, FactorFamily::Normal}) {
            const FactorParams q{family, mq, sq};
            const FactorParams p{family, mp, sp};
            const double analytic = kl_factor(q, p);
            CHECK(analytic >= 0.0);
            CHECK(std::abs(analytic - kl_quadrature(q, p)) < 1e-6);
        }
    }
}

TEST_CASE("total KL is zero only at the prior") {
    const VariationalPosterior prior = toy_prior(2, 3, 61);
    CHECK(kl_total(prior, prior) == doctest::Approx(0.0).epsilon(1e-12));
    VariationalPosterior q = prior;
    q.factors[0].location += 0.3;
    CHECK(kl_total(q, prior) > 1e-3);
}

TEST_CASE("analytic KL derivatives match finite differences of kl_factor") {
    Rng rng(67);
    const double h = 1e-6;
    for (int trial = 0; trial < 6; ++trial) {
        const FactorParams q{FactorFamily::LogNormal, rng.normal(), 0.5 + rng.uniform()};
        const FactorParams p{FactorFamily::LogNormal, rng.normal(), 0.5 + rng.uniform()};
        const double d_mu = (q.location - p.location) / (p.scale * p.scale);
        const double d_s = -1.0 / q.scale + q.scale / (p.scale * p.scale);

        FactorParams qp = q, qm = q;
        qp.location += h;
        qm.location -= h;
        CHECK(std::abs(d_mu - (kl_factor(qp, p) - kl_factor(qm, p)) / (2 * h)) < 1e-8);
        qp = q;
        qm = q;
        qp.scale += h;
        qm.scale -= h;
        CHECK(std::abs(d_s - (kl_factor(qp, p) - kl_factor(qm, p)) / (2 * h)) < 1e-8);
    }
    // At q = p both derivatives vanish identically.
    const FactorParams p{FactorFamily::Normal, 0.3, 0.7};
    CHECK(std::abs(-1.0 / p.scale + p.scale / (p.scale * p.scale)) < 1e-15);
}

TEST_CASE("elbo at the prior is the Monte Carlo likelihood average") {
    Rng rng(71);
    const Eigen::MatrixXd x = oracle::random_matrix(10, 2, rng);
    const EmbeddedSeries emb = oracle::make_embedded(x);
    const Eigen::VectorXd y = oracle::random_matrix(10, 1, rng).col(0);
    const VariationalPosterior prior = default_prior(emb, 3, 5);

    const int draws = 7;
    const std::uint64_t seed = 2024;
    const double elbo = elbo_estimate(prior, prior, y, emb, draws, seed);

    double manual = 0.0;
    for (int s = 0; s < draws; ++s) {
        manual += gp_log_marginal(
            y, emb,
            sample_reparameterized(prior, derive_seed(seed, {static_cast<std::uint64_t>(s)})));
    }
    CHECK(elbo == doctest::Approx(manual / draws).epsilon(1e-12));
}

TEST_CASE("elbo never exceeds the quadrature evidence on a 1-D toy") {
    // Only the noise-variance factor is random; every other factor is pinned
    // to a near-point mass shared by the evidence integral.
    Rng rng(73);
    const Eigen::MatrixXd x = oracle::random_matrix(12, 1, rng, 2.0);
    const EmbeddedSeries emb = oracle::make_embedded(x);
    Eigen::VectorXd y(12);
    for (int i = 0; i < 12; ++i) y[i] = 0.45 * rng.normal();

    VariationalPosterior q = default_prior(emb, 2, 11);
    for (FactorParams& f : q.factors) f.scale = 1e-9;
    q.factors[q.amplitude_index()] = {FactorFamily::LogNormal, 0.0, 1e-9};
    q.factors[q.noise_index()] = {FactorFamily::LogNormal, 0.0, 0.75};
    const VariationalPosterior priors = q;

    const HyperparameterSet point = map_point(q);
    auto loglik = [&](double noise_var) {
        HyperparameterSet theta = point;
        theta.noise_var = noise_var;
        return gp_log_marginal(y, emb, theta);
    };
    // Evidence over t = log(noise_var) against the factor's normal density.
    const FactorParams nf = priors.factors[priors.noise_index()];
    auto integrand = [&](double t) {
        const double dens = std::exp(-0.5 * std::pow((t - nf.location) / nf.scale, 2)) /
                            (nf.scale * std::sqrt(2.0 * M_PI));
        return dens * std::exp(loglik(std::exp(t)));
    };
    const double evidence = std::log(oracle::adaptive_simpson(
        integrand, nf.location - 8.0 * nf.scale, nf.location + 8.0 * nf.scale, 1e-12));

    int below = 0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        const double elbo = elbo_estimate(q, priors, y, emb, 200,
                                          derive_seed(31337, {static_cast<std::uint64_t>(s)}));
        if (elbo <= evidence) ++below;
    }
    CHECK(below == seeds);
}

TEST_CASE("elbo variance shrinks roughly fourfold from S=10 to S=40") {
    Rng rng(79);
    const Eigen::MatrixXd x = oracle::random_matrix(8, 1, rng);
    const EmbeddedSeries emb = oracle::make_embedded(x);
    const Eigen::VectorXd y = oracle::random_matrix(8, 1, rng).col(0);
    const VariationalPosterior prior = default_prior(emb, 2, 3);

    auto variance_at = [&](int draws) {
        const int n = 300;
        std::vector<double> vals;
        vals.reserve(n);
        for (int s = 0; s < n; ++s) {
            vals.push_back(elbo_estimate(prior, prior, y, emb, draws,
                                         derive_seed(99, {static_cast<std::uint64_t>(s),
                                                          static_cast<std::uint64_t>(draws)})));
        }
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        return var / (n - 1);
    };
    const double ratio = variance_at(40) / variance_at(10);
    CHECK(ratio > 0.25 * 0.5);
    CHECK(ratio < 0.25 * 1.5);
}

TEST_CASE("elbo gradient matches central finite differences") {
    Rng rng(83);
    const long d = 12;
    const int dim = 2;
    const Eigen::MatrixXd x = oracle::random_matrix(d, dim, rng);
    const EmbeddedSeries emb = oracle::make_embedded(x);
    const Eigen::VectorXd y = oracle::random_matrix(d, 1, rng).col(0);

    const VariationalPosterior priors = default_prior(emb, 4, 7);
    VariationalPosterior q = priors;
    // Move q off the prior so the KL part contributes too.
    Rng jit(85);
    for (FactorParams& f : q.factors) {
        f.location += 0.1 * jit.normal();
        f.scale *= 1.0 + 0.1 * jit.uniform();
    }

    const int draws = 3;
    const std::uint64_t seed = 4711;
    const ElboGradient g = elbo_gradient(q, priors, y, emb, draws, seed);
    CHECK(g.elbo ==
          doctest::Approx(elbo_estimate(q, priors, y, emb, draws, seed)).epsilon(1e-12));

    const double h = 1e-5;
    for (std::size_t i = 0; i < q.size(); ++i) {
        VariationalPosterior qp = q, qm = q;
        qp.factors[i].location += h;
        qm.factors[i].location -= h;
        const double fd_mu = (elbo_estimate(qp, priors, y, emb, draws, seed) -
                              elbo_estimate(qm, priors, y, emb, draws, seed)) /
                             (2 * h);
        const double scale_mu = std::max({std::abs(fd_mu), std::abs(g.d_location[i]), 1e-6});
        CHECK(std::abs(g.d_location[i] - fd_mu) / scale_mu < 1e-4);

        qp = q;
        qm = q;
        qp.factors[i].scale += h;
        qm.factors[i].scale -= h;
        const double fd_s = (elbo_estimate(qp, priors, y, emb, draws, seed) -
                             elbo_estimate(qm, priors, y, emb, draws, seed)) /
                            (2 * h);
        const double scale_s = std::max({std::abs(fd_s), std::abs(g.d_scale[i]), 1e-6});
        CHECK(std::abs(g.d_scale[i] - fd_s) / scale_s < 1e-4);
    }
}

TEST_CASE("optimizer clips every step and is inert at zero learning rate") {
    Rng rng(89);
    const Eigen::MatrixXd x = oracle::random_matrix(16, 2, rng);
    const EmbeddedSeries emb = oracle::make_embedded(x);
    const Eigen::VectorXd y = oracle::random_matrix(16, 1, rng).col(0);
    const VariationalPosterior prior = default_prior(emb, 4, 13);

    OptimizerConfig cfg;
    cfg.iterations = 40;
    cfg.mc_draws = 2;
    cfg.clip_norm = 5.0;
    cfg.seed = 303;
    const OptimizeResult res = optimize_elbo(prior, y, emb, cfg);
    REQUIRE(res.trace.size() == 40);
    for (const TraceRow& row : res.trace) {
        CHECK(row.grad_norm <= cfg.clip_norm + 1e-12);
    }

    cfg.learning_rate = 0.0;
    const OptimizeResult frozen = optimize_elbo(prior, y, emb, cfg);
    for (std::size_t i = 0; i < prior.size(); ++i) {
        CHECK(frozen.posterior.factors[i].location == prior.factors[i].location);
        CHECK(frozen.posterior.factors[i].scale == prior.factors[i].scale);
    }
}

TEST_CASE("elbo ascends on a chaotic-series benchmark") {
    int improved = 0;
    for (int trial = 0; trial < 10; ++trial) {
        LorenzRosslerConfig sim;
        sim.n_steps = 650;
        sim.burn_in = 500;
        sim.seed = 1000 + static_cast<std::uint64_t>(trial);
        const Realization r = simulate_lorenz_rossler(sim);
        const TimeSeries x = standardize(r.channel("X0"));
        const TimeSeries y = standardize(r.channel("Y0"));

        const EmbeddingConfig ecfg{3, 1};
        const auto [ex, ey] = align_pair(delay_embed(x, ecfg), delay_embed(y, ecfg));
        const VariationalPosterior prior = default_prior(ex, 8, derive_seed(sim.seed, {2}));

        OptimizerConfig cfg;
        cfg.iterations = 500;
        cfg.seed = derive_seed(sim.seed, {3});
        const OptimizeResult res = optimize_elbo(prior, ey.current_values(), ex, cfg);

        double smoothed = 0.0;
        for (std::size_t i = res.trace.size() - 50; i < res.trace.size(); ++i) {
            smoothed += res.trace[i].elbo;
        }
        smoothed /= 50.0;
        if (smoothed >= res.trace[9].elbo) ++improved;
    }
    CHECK(improved >= 9);
}

TEST_CASE("map_point modes") {
    VariationalPosterior q = toy_prior(1, 1, 97);
    q.factors[q.amplitude_index()] = {FactorFamily::LogNormal, 0.0, 1.0};
    const std::size_t z_idx = q.inducing_index(0, 0);
    q.factors[z_idx] = {FactorFamily::Normal, -1.7, 2.0};

    const HyperparameterSet theta = map_point(q);
    CHECK(theta.amplitude == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(theta.amplitude == doctest::Approx(0.367879).epsilon(1e-6));
    CHECK(theta.inducing(0, 0) == -1.7);
}

TEST_CASE("log-normal mode maximizes the density over a grid") {
    Rng rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        const FactorParams f{FactorFamily::LogNormal, rng.normal() * 0.5,
                             0.3 + 0.5 * rng.uniform()};
        const double mode = std::exp(f.location - f.scale * f.scale);

        double best_x = 1e-3, best = -1e300;
        const int grid_n = 200000;
        for (int i = 0; i <= grid_n; ++i) {
            const double x = 1e-3 + (20.0 - 1e-3) * i / grid_n;
            const double ld = factor_log_density(f, x);
            if (ld > best) {
                best = ld;
                best_x = x;
            }
        }
        CHECK(std::abs(mode - best_x) < 2.0 * (20.0 - 1e-3) / grid_n + 1e-12);
    }
}
