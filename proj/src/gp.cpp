#include "vgpccm/gp.hpp"

#include <cmath>
#include <string>

#include "vgpccm/errors.hpp"

namespace vgpccm {

namespace {

constexpr double kLog2Pi = 1.8378770664093455;

// Cholesky with escalating relative jitter: first attempt is jitter-free,
// then 1e-10*mean(diag) up to 1e-6*mean(diag) in decade steps.
struct CholFactor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
};

CholFactor chol_with_jitter(const Eigen::MatrixXd& m, const char* what) {
    const double mean_diag = m.diagonal().mean();
    const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
    static constexpr double kFactors[] = {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
    for (double f : kFactors) {
        Eigen::MatrixXd mj = m;
        if (f > 0.0) {
            mj.diagonal().array() += f * scale;
        }
        Eigen::LLT<Eigen::MatrixXd> llt(mj);
        if (llt.info() == Eigen::Success) {
            return {std::move(llt), f * scale};
        }
    }
    throw NumericalFailureError(std::string("Cholesky of ") + what +
                                " failed after jitter escalation to 1e-6");
}

// Shared FITC factorization: Lambda = diag(Knn - Q) + noise_var I and
// B = I + V Lambda^-1 V^T with V = Lm^-1 Kmn.
struct FitcFactors {
    long d = 0;
    int m_count = 0;
    double amp2 = 0.0;
    double noise_var = 0.0;
    Eigen::MatrixXd knm;         // d x M
    Eigen::MatrixXd kmm_kernel;  // M x M, without jitter
    CholFactor lm;               // chol(Kmm + jitter I)
    Eigen::MatrixXd v;           // M x d
    Eigen::VectorXd lambda;      // d
    Eigen::LLT<Eigen::MatrixXd> lb;
    double log_det_b = 0.0;
};

FitcFactors build_fitc(const Eigen::MatrixXd& x, const HyperparameterSet& theta) {
    theta.validate();
    if (x.cols() != theta.input_dim()) {
        throw DimensionMismatchError(
            "embedding dimension " + std::to_string(x.cols()) +
            " does not match length-scale count " +
            std::to_string(theta.input_dim()));
    }

    FitcFactors f;
    f.d = x.rows();
    f.m_count = theta.inducing_count();
    f.amp2 = theta.amplitude * theta.amplitude;
    f.noise_var = theta.noise_var;

    f.knm = kernel_matrix(x, theta.inducing, theta);
    f.kmm_kernel = kernel_matrix(theta.inducing, theta.inducing, theta);
    f.lm = chol_with_jitter(f.kmm_kernel, "inducing kernel matrix");

    f.v = f.lm.llt.matrixL().solve(f.knm.transpose());
    const Eigen::VectorXd q = f.v.colwise().squaredNorm();
    f.lambda = (f.amp2 + f.noise_var) - q.array();
    // Q <= Knn in the Loewner sense, so lambda >= noise_var up to rounding.
    f.lambda = f.lambda.cwiseMax(f.noise_var * (1.0 - 1e-12));

    const Eigen::MatrixXd v_scaled =
        f.v * f.lambda.cwiseInverse().asDiagonal();
    Eigen::MatrixXd b = v_scaled * f.v.transpose();
    b.diagonal().array() += 1.0;
    b = 0.5 * (b + b.transpose().eval());
    f.lb.compute(b);
    if (f.lb.info() != Eigen::Success) {
        throw NumericalFailureError("Cholesky of the Woodbury core failed");
    }
    f.log_det_b =
        2.0 * f.lb.matrixLLT().diagonal().array().log().sum();
    return f;
}

// alpha = (Khat + noise_var I)^-1 y
Eigen::VectorXd woodbury_solve(const FitcFactors& f, const Eigen::VectorXd& y) {
    const Eigen::VectorXd a = y.cwiseQuotient(f.lambda);
    const Eigen::VectorXd gamma = f.lb.solve(f.v * a);
    return a - (f.v.transpose() * gamma).cwiseQuotient(f.lambda);
}

}  // namespace

void HyperparameterSet::validate() const {
    if (!(amplitude > 0.0) || !std::isfinite(amplitude)) {
        throw ValidationError("kernel amplitude must be finite and positive");
    }
    if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
        throw ValidationError("noise variance must be finite and positive");
    }
    if (lengthscales.size() == 0) {
        throw ValidationError("length-scale vector is empty");
    }
    for (long k = 0; k < lengthscales.size(); ++k) {
        if (!(lengthscales[k] > 0.0) || !std::isfinite(lengthscales[k])) {
            throw ValidationError("length scale " + std::to_string(k) +
                                  " must be finite and positive");
        }
    }
    if (inducing.rows() < 1) {
        throw ValidationError("at least one inducing point is required");
    }
    if (inducing.cols() != lengthscales.size()) {
        throw DimensionMismatchError(
            "inducing points have dimension " + std::to_string(inducing.cols()) +
            ", length scales have " + std::to_string(lengthscales.size()));
    }
    if (!inducing.allFinite()) {
        throw ValidationError("inducing points contain non-finite values");
    }
}

double se_ard_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     const HyperparameterSet& theta) {
    if (a.size() != b.size() || a.size() != theta.lengthscales.size()) {
        throw DimensionMismatchError(
            "kernel inputs of dimension " + std::to_string(a.size()) + "/" +
            std::to_string(b.size()) + " with " +
            std::to_string(theta.lengthscales.size()) + " length scales");
    }
    const Eigen::ArrayXd scaled =
        (a - b).array() / theta.lengthscales.array();
    return theta.amplitude * theta.amplitude *
           std::exp(-0.5 * scaled.square().sum());
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const HyperparameterSet& theta) {
    if (a.cols() != b.cols() || a.cols() != theta.lengthscales.size()) {
        throw DimensionMismatchError("kernel matrix inputs of dimension " +
                                     std::to_string(a.cols()) + "/" +
                                     std::to_string(b.cols()));
    }
    const Eigen::VectorXd inv_l = theta.lengthscales.cwiseInverse();
    const Eigen::MatrixXd as = a * inv_l.asDiagonal();
    const Eigen::MatrixXd bs = b * inv_l.asDiagonal();
    const Eigen::VectorXd an = as.rowwise().squaredNorm();
    const Eigen::VectorXd bn = bs.rowwise().squaredNorm();
    Eigen::MatrixXd sq = an.replicate(1, b.rows()) +
                         bn.transpose().replicate(a.rows(), 1) -
                         2.0 * as * bs.transpose();
    sq = sq.cwiseMax(0.0);
    return theta.amplitude * theta.amplitude * (-0.5 * sq.array()).exp();
}

Eigen::MatrixXd kernel_matrix(const EmbeddedSeries& a, const EmbeddedSeries& b,
                              const HyperparameterSet& theta) {
    return kernel_matrix(a.rows, b.rows, theta);
}

double log_det_psd(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) {
        throw DimensionMismatchError("log_det_psd requires a square matrix");
    }
    const CholFactor c = chol_with_jitter(m, "posterior covariance");
    return 2.0 * c.llt.matrixLLT().diagonal().array().log().sum();
}

PosteriorCovariance sparse_posterior_cov(const EmbeddedSeries& x_emb,
                                         const HyperparameterSet& theta) {
    if (x_emb.count() < 2) {
        throw InsufficientLengthError("posterior covariance needs at least 2 rows");
    }
    const FitcFactors f = build_fitc(x_emb.rows, theta);
    const double nv = f.noise_var;

    // Sigma = nv I - nv^2 (Khat + nv I)^-1, with the inverse expanded through
    // Woodbury as Lambda^-1 - R^T R.
    const Eigen::MatrixXd r = f.lb.matrixL().solve(
        f.v * f.lambda.cwiseInverse().asDiagonal());
    PosteriorCovariance out;
    out.matrix = (nv * nv) * (r.transpose() * r);
    out.matrix.diagonal().array() +=
        nv - (nv * nv) * f.lambda.array().inverse();
    out.matrix = 0.5 * (out.matrix + out.matrix.transpose().eval());
    out.log_det = log_det_psd(out.matrix);
    return out;
}

double gp_log_marginal(const Eigen::VectorXd& targets,
                       const EmbeddedSeries& x_emb,
                       const HyperparameterSet& theta) {
    if (targets.size() != x_emb.count()) {
        throw DimensionMismatchError(
            "target vector of length " + std::to_string(targets.size()) +
            " for " + std::to_string(x_emb.count()) + " embedding rows");
    }
    if (!targets.allFinite()) {
        throw ValidationError("targets contain non-finite values");
    }
    const FitcFactors f = build_fitc(x_emb.rows, theta);
    const Eigen::VectorXd alpha = woodbury_solve(f, targets);
    const double log_det_c = f.lambda.array().log().sum() + f.log_det_b;
    return -0.5 * (targets.dot(alpha) + log_det_c +
                   static_cast<double>(f.d) * kLog2Pi);
}

MarginalGradient gp_log_marginal_gradient(const Eigen::VectorXd& targets,
                                          const EmbeddedSeries& x_emb,
                                          const HyperparameterSet& theta) {
    if (targets.size() != x_emb.count()) {
        throw DimensionMismatchError("target/embedding size mismatch");
    }
    const Eigen::MatrixXd& x = x_emb.rows;
    const Eigen::MatrixXd& z = theta.inducing;
    const int dim = theta.input_dim();
    const FitcFactors f = build_fitc(x, theta);

    const Eigen::VectorXd alpha = woodbury_solve(f, targets);

    MarginalGradient out;
    out.value = -0.5 * (targets.dot(alpha) + f.lambda.array().log().sum() +
                        f.log_det_b + static_cast<double>(f.d) * kLog2Pi);

    // G = 0.5 (alpha alpha^T - C^-1) with C^-1 = Lambda^-1 - R^T R; the
    // adjoints below never materialize any d x d matrix.
    const Eigen::MatrixXd r = f.lb.matrixL().solve(
        f.v * f.lambda.cwiseInverse().asDiagonal());
    const Eigen::VectorXd g =
        0.5 * (alpha.array().square() - f.lambda.array().inverse() +
               r.colwise().squaredNorm().transpose().array());

    // E = Kmm^-1 Kmn  (the projection weights onto the inducing set)
    const Eigen::MatrixXd e = f.lm.llt.solve(f.knm.transpose());
    const Eigen::MatrixXd et = e.transpose();  // d x M
    const Eigen::VectorXd e_alpha = e * alpha;

    const Eigen::MatrixXd gat =
        0.5 * (alpha * e_alpha.transpose() -
               f.lambda.cwiseInverse().asDiagonal() * et +
               r.transpose() * (r * et));
    const Eigen::MatrixXd knm_bar = 2.0 * (gat - g.asDiagonal() * et);
    Eigen::MatrixXd kmm_bar = -e * gat + e * g.asDiagonal() * et;
    kmm_bar = 0.5 * (kmm_bar + kmm_bar.transpose().eval());

    const double sum_g = g.sum();
    const Eigen::MatrixXd h_nm = knm_bar.cwiseProduct(f.knm);
    const Eigen::MatrixXd h_mm = kmm_bar.cwiseProduct(f.kmm_kernel);

    out.d_amplitude = (2.0 / theta.amplitude) *
                      (h_nm.sum() + h_mm.sum() + f.amp2 * sum_g);
    out.d_noise_var = sum_g;

    const Eigen::VectorXd h_nm_rowsum = h_nm.rowwise().sum();
    const Eigen::VectorXd h_nm_colsum = h_nm.colwise().sum();
    const Eigen::VectorXd h_mm_rowsum = h_mm.rowwise().sum();

    out.d_lengthscales.resize(dim);
    for (int k = 0; k < dim; ++k) {
        const Eigen::VectorXd xk = x.col(k);
        const Eigen::VectorXd zk = z.col(k);
        const double term_nm = xk.array().square().matrix().dot(h_nm_rowsum) -
                               2.0 * xk.dot(h_nm * zk) +
                               zk.array().square().matrix().dot(h_nm_colsum);
        const double term_mm = 2.0 * (zk.array().square().matrix().dot(h_mm_rowsum) -
                                      zk.dot(h_mm * zk));
        const double l = theta.lengthscales[k];
        out.d_lengthscales[k] = (term_nm + term_mm) / (l * l * l);
    }

    const Eigen::MatrixXd hnt_x = h_nm.transpose() * x;  // M x dim
    const Eigen::MatrixXd hmm_z = h_mm * z;              // M x dim
    out.d_inducing.resize(f.m_count, dim);
    for (int k = 0; k < dim; ++k) {
        const double inv_l2 =
            1.0 / (theta.lengthscales[k] * theta.lengthscales[k]);
        out.d_inducing.col(k) =
            inv_l2 * (hnt_x.col(k) - h_nm_colsum.cwiseProduct(z.col(k)) +
                      2.0 * (hmm_z.col(k) - h_mm_rowsum.cwiseProduct(z.col(k))));
    }
    return out;
}

}  // namespace vgpccm
