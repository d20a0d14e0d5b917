#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vgpccm/errors.hpp"
#include "vgpccm/gp.hpp"
#include "vgpccm/rng.hpp"

using namespace vgpccm;

namespace {

HyperparameterSet unit_theta(int dim, double amplitude = 1.0, double noise_var = 0.1) {
    HyperparameterSet theta;
    theta.amplitude = amplitude;
    theta.lengthscales = Eigen::VectorXd::Ones(dim);
    theta.noise_var = noise_var;
    theta.inducing = Eigen::MatrixXd::Zero(1, dim);
    return theta;
}

}  // namespace

TEST_CASE("se_ard_kernel closed forms") {
    HyperparameterSet theta = unit_theta(1);
    Eigen::VectorXd a(1), b(1);
    a << 0.0;
    b << 1.0;
    CHECK(se_ard_kernel(a, a, theta) == doctest::Approx(1.0));
    CHECK(se_ard_kernel(a, b, theta) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(se_ard_kernel(a, b, theta) == doctest::Approx(0.606531).epsilon(1e-6));

    theta.amplitude = 2.0;
    CHECK(se_ard_kernel(a, a, theta) == doctest::Approx(4.0));
    CHECK(se_ard_kernel(a, b, theta) == se_ard_kernel(b, a, theta));
}

TEST_CASE("a huge length scale suppresses its coordinate") {
    HyperparameterSet theta = unit_theta(2);
    theta.lengthscales << 1.0, 1e6;
    Eigen::VectorXd a(2), b(2), b_moved(2);
    a << 0.3, 0.0;
    b << 0.7, 0.0;
    b_moved << 0.7, 1.0;
    const double k0 = se_ard_kernel(a, b, theta);
    const double k1 = se_ard_kernel(a, b_moved, theta);
    CHECK(std::abs(k0 - k1) / k0 < 1e-9);
}

TEST_CASE("se_ard_kernel rejects mismatched dimensions") {
    HyperparameterSet theta = unit_theta(2);
    Eigen::VectorXd a(2), b(3);
    a.setZero();
    b.setZero();
    CHECK_THROWS_AS(se_ard_kernel(a, b, theta), DimensionMismatchError);
}

TEST_CASE("kernel_matrix diagonal, closed form and symmetry") {
    Rng rng(42);
    HyperparameterSet theta = unit_theta(1);

    Eigen::MatrixXd pts(2, 1);
    pts << 0.0, 1.0;
    const Eigen::MatrixXd k2 = kernel_matrix(pts, pts, theta);
    CHECK(k2(0, 0) == doctest::Approx(1.0));
    CHECK(k2(1, 1) == doctest::Approx(1.0));
    CHECK(k2(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(k2(1, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

    const Eigen::MatrixXd x = oracle::random_matrix(12, 3, rng);
    HyperparameterSet theta3 = oracle::random_theta(3, 2, rng);
    const Eigen::MatrixXd k = kernel_matrix(x, x, theta3);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    for (long i = 0; i < k.rows(); ++i) {
        CHECK(k(i, i) == doctest::Approx(theta3.amplitude * theta3.amplitude));
    }
    // Spot-check against the entrywise oracle.
    const Eigen::MatrixXd dense = oracle::dense_kernel(x, x, theta3);
    CHECK((k - dense).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("log_det_psd closed forms") {
    CHECK(std::abs(log_det_psd(Eigen::MatrixXd::Identity(8, 8))) < 1e-9);
    CHECK(std::abs(log_det_psd(Eigen::MatrixXd::Identity(64, 64))) < 1e-9);

    Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(2, 2);
    d2(0, 0) = 2.0;
    d2(1, 1) = 3.0;
    CHECK(log_det_psd(d2) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(log_det_psd(d2) == doctest::Approx(1.791759).epsilon(1e-6));
}

TEST_CASE("log_det_psd matches the eigenvalue oracle on random SPD matrices") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd m = oracle::random_spd(8, rng);
        CHECK(log_det_psd(m) == doctest::Approx(oracle::eigen_log_det(m)).epsilon(1e-8));
    }
}

TEST_CASE("log_det_psd scaling identity") {
    Rng rng(13);
    const long d = 6;
    const Eigen::MatrixXd m = oracle::random_spd(d, rng);
    const double base = log_det_psd(m);
    for (double alpha : {0.5, 2.0, 10.0}) {
        const double scaled = log_det_psd(alpha * m);
        CHECK(std::abs(scaled - (d * std::log(alpha) + base)) < 1e-8);
    }
}

TEST_CASE("log_det_psd survives a singular PSD matrix via jitter") {
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);  // rank one
    CHECK(std::isfinite(log_det_psd(ones)));
    Eigen::MatrixXd indef = -Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(log_det_psd(indef), NumericalFailureError);
}

TEST_CASE("sparse posterior covariance degenerates to the dense solution at Z = X") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const long d = 5 + static_cast<long>(rng.below(16));
        const int dim = 1 + static_cast<int>(rng.below(3));
        const Eigen::MatrixXd x = oracle::random_matrix(d, dim, rng);
        HyperparameterSet theta = oracle::random_theta(dim, 1, rng);
        theta.inducing = x;

        const PosteriorCovariance sparse =
            sparse_posterior_cov(oracle::make_embedded(x), theta);
        const Eigen::MatrixXd dense = oracle::dense_posterior_cov(
            oracle::dense_kernel(x, x, theta), theta.noise_var);
        CHECK((sparse.matrix - dense).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("huge noise returns the FITC prior") {
    Rng rng(31);
    const Eigen::MatrixXd x = oracle::random_matrix(12, 2, rng);
    HyperparameterSet theta = oracle::random_theta(2, 4, rng);
    theta.noise_var = 1e6;
    const PosteriorCovariance post = sparse_posterior_cov(oracle::make_embedded(x), theta);
    const Eigen::MatrixXd prior = oracle::dense_fitc_prior(x, theta);
    const double rel = (post.matrix - prior).cwiseAbs().maxCoeff() /
                       prior.cwiseAbs().maxCoeff();
    CHECK(rel < 1e-3);
}

TEST_CASE("near-perfect observations collapse the posterior") {
    Rng rng(37);
    const Eigen::MatrixXd x = oracle::random_matrix(10, 2, rng);
    HyperparameterSet theta = oracle::random_theta(2, 1, rng);
    theta.inducing = x;
    theta.noise_var = 1e-12;
    const PosteriorCovariance post = sparse_posterior_cov(oracle::make_embedded(x), theta);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(post.matrix);
    CHECK(es.eigenvalues().maxCoeff() < 1e-6 * theta.amplitude * theta.amplitude);
}

TEST_CASE("posterior covariance is symmetric, PSD and below the prior") {
    Rng rng(41);
    for (int trial = 0; trial < 8; ++trial) {
        const Eigen::MatrixXd x = oracle::random_matrix(14, 2, rng);
        const HyperparameterSet theta = oracle::random_theta(2, 5, rng);
        const PosteriorCovariance post =
            sparse_posterior_cov(oracle::make_embedded(x), theta);
        CHECK((post.matrix - post.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(oracle::min_eigenvalue(post.matrix) > -1e-8);
        const Eigen::MatrixXd prior = oracle::dense_fitc_prior(x, theta);
        CHECK(oracle::min_eigenvalue(prior - post.matrix) > -1e-8);
    }
}

TEST_CASE("posterior covariance is invariant to inducing-point order") {
    Rng rng(47);
    const Eigen::MatrixXd x = oracle::random_matrix(12, 2, rng);
    HyperparameterSet theta = oracle::random_theta(2, 6, rng);
    const PosteriorCovariance a = sparse_posterior_cov(oracle::make_embedded(x), theta);

    Eigen::MatrixXd reversed = theta.inducing.colwise().reverse().eval();
    theta.inducing = reversed;
    const PosteriorCovariance b = sparse_posterior_cov(oracle::make_embedded(x), theta);
    CHECK((a.matrix - b.matrix).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(a.log_det - b.log_det) < 1e-8);
}

TEST_CASE("gp_log_marginal closed form at d = 1") {
    // Prior variance + noise = 1 with a zero target: -log(2 pi)/2.
    HyperparameterSet theta = unit_theta(1, /*amplitude=*/0.8, /*noise_var=*/0.36);
    EmbeddedSeries one = oracle::make_embedded(Eigen::MatrixXd::Zero(1, 1));
    Eigen::VectorXd target(1);
    target << 0.0;
    CHECK(gp_log_marginal(target, one, theta) ==
          doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("gp_log_marginal matches the dense oracle at Z = X") {
    Rng rng(53);
    for (int trial = 0; trial < 10; ++trial) {
        const long d = 4 + static_cast<long>(rng.below(14));
        const Eigen::MatrixXd x = oracle::random_matrix(d, 2, rng);
        HyperparameterSet theta = oracle::random_theta(2, 1, rng);
        theta.inducing = x;
        const Eigen::VectorXd y = oracle::random_matrix(d, 1, rng).col(0);
        const double sparse = gp_log_marginal(y, oracle::make_embedded(x), theta);
        const double dense =
            oracle::dense_log_marginal(y, oracle::dense_kernel(x, x, theta), theta.noise_var);
        CHECK(sparse == doctest::Approx(dense).epsilon(1e-6));
    }
}

TEST_CASE("scaling targets up decreases the log marginal") {
    HyperparameterSet theta = unit_theta(1, 0.8, 0.36);
    Eigen::MatrixXd x(3, 1);
    x << 0.0, 5.0, 10.0;
    Eigen::VectorXd y(3);
    y << 0.3, -0.2, 0.5;
    const EmbeddedSeries emb = oracle::make_embedded(x);
    CHECK(gp_log_marginal(10.0 * y, emb, theta) < gp_log_marginal(y, emb, theta));
}

TEST_CASE("analytic marginal gradient matches central finite differences") {
    Rng rng(61);
    for (int trial = 0; trial < 5; ++trial) {
        const long d = 12;
        const int dim = 2;
        const int m_count = 4;
        const Eigen::MatrixXd x = oracle::random_matrix(d, dim, rng);
        HyperparameterSet theta = oracle::random_theta(dim, m_count, rng);
        const Eigen::VectorXd y = oracle::random_matrix(d, 1, rng).col(0);
        const EmbeddedSeries emb = oracle::make_embedded(x);

        const MarginalGradient g = gp_log_marginal_gradient(y, emb, theta);
        CHECK(g.value == doctest::Approx(gp_log_marginal(y, emb, theta)).epsilon(1e-12));

        const double h = 1e-5;
        auto fd = [&](auto setter) {
            HyperparameterSet plus = theta, minus = theta;
            setter(plus, h);
            setter(minus, -h);
            return (gp_log_marginal(y, emb, plus) - gp_log_marginal(y, emb, minus)) /
                   (2.0 * h);
        };
        auto close = [](double analytic, double numeric) {
            const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            return std::abs(analytic - numeric) / scale < 1e-4;
        };

        CHECK(close(g.d_amplitude,
                    fd([](HyperparameterSet& t, double e) { t.amplitude += e; })));
        CHECK(close(g.d_noise_var,
                    fd([](HyperparameterSet& t, double e) { t.noise_var += e; })));
        for (int k = 0; k < dim; ++k) {
            CHECK(close(g.d_lengthscales[k], fd([k](HyperparameterSet& t, double e) {
                      t.lengthscales[k] += e;
                  })));
        }
        for (int j = 0; j < m_count; ++j) {
            for (int k = 0; k < dim; ++k) {
                CHECK(close(g.d_inducing(j, k), fd([j, k](HyperparameterSet& t, double e) {
                          t.inducing(j, k) += e;
                      })));
            }
        }
    }
}
