#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gpsdd/core.hpp"
#include "gpsdd/kernels.hpp"
#include "gpsdd/linalg.hpp"

namespace gpsdd {

namespace detail {
/// Cholesky with a jitter ladder 1e-10 .. 1e-6 relative to the mean diagonal.
inline Eigen::LLT<Eigen::MatrixXd> jittered_cholesky(const Eigen::MatrixXd& A) {
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) return llt;
    const double base = A.diagonal().mean();
    for (double j = 1e-10; j <= 1e-6 * 1.001; j *= 100.0) {
        Eigen::MatrixXd Aj = A;
        Aj.diagonal().array() += j * base;
        llt.compute(Aj);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw Error(Error::Code::not_positive_definite,
                "jittered_cholesky: matrix not positive definite after jitter escalation");
}
}  // namespace detail

/// Dense conjugate posterior. Mean f*(x) = K_{xX} alpha with
/// alpha = (K + b^-1 I)^-1 Y; covariance by the usual Schur complement.
struct ExactPosterior {
    Eigen::MatrixXd train_inputs;
    KernelSpec kernel;
    NoiseModel noise;
    Eigen::VectorXd weights;            // alpha*
    Eigen::LLT<Eigen::MatrixXd> chol;   // of K + b^-1 I

    double mean_at(const Eigen::VectorXd& x) const {
        return gram(kernel, x.transpose(), train_inputs).row(0).dot(weights);
    }
    Eigen::VectorXd mean_at(const Eigen::MatrixXd& X) const {
        return gram(kernel, X, train_inputs) * weights;
    }
    double variance_at(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd kx = gram(kernel, train_inputs, x.transpose()).col(0);
        const double v = kernel.variance - kx.dot(chol.solve(kx));
        return std::max(v, 0.0);
    }
    Eigen::MatrixXd covariance_at(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd Kx = gram(kernel, train_inputs, X);
        return gram(kernel, X) - Kx.transpose() * chol.solve(Kx);
    }
};

inline ExactPosterior fit_exact(const Dataset& ds, const KernelSpec& spec, const NoiseModel& noise) {
    if (ds.n() > kDenseCap)
        throw Error(Error::Code::bad_argument, "fit_exact: dataset exceeds dense cap");
    Eigen::MatrixXd Kyy = gram(spec, ds.inputs);
    Kyy.diagonal().array() += noise.variance();
    ExactPosterior post{ds.inputs, spec, noise, {}, detail::jittered_cholesky(Kyy)};
    post.weights = post.chol.solve(ds.targets);
    return post;
}

/// Log marginal likelihood of the targets under the GP prior plus noise.
inline double evidence(const Dataset& ds, const KernelSpec& spec, const NoiseModel& noise) {
    if (ds.n() > kDenseCap)
        throw Error(Error::Code::bad_argument, "evidence: dataset exceeds dense cap");
    Eigen::MatrixXd Kyy = gram(spec, ds.inputs);
    Kyy.diagonal().array() += noise.variance();
    const auto llt = detail::jittered_cholesky(Kyy);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double quad = ds.targets.dot(llt.solve(ds.targets));
    const double n = static_cast<double>(ds.n());
    return -0.5 * n * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * quad;
}

/// Effective dimension gamma = tr(K (K + B^-1)^-1), kernel form.
inline double effective_dimension_kernel(const Eigen::MatrixXd& K, double b) {
    Eigen::MatrixXd Kyy = K;
    Kyy.diagonal().array() += 1.0 / b;
    return detail::jittered_cholesky(Kyy).solve(K).trace();
}

/// Weight-space forms: tr(M H^-1) and d - tr(A H^-1), with M = b Phi^T Phi,
/// H = M + a I. All three forms agree when K is the prior covariance
/// Phi A^-1 Phi^T, so the caller passes Phi, a, b.
struct EffectiveDimensionForms {
    double kernel_form;
    double trace_mh;
    double complement;  // d - tr(A H^-1)
};

inline EffectiveDimensionForms effective_dimension_forms(const Eigen::MatrixXd& Phi, double a,
                                                         double b) {
    const Eigen::Index d = Phi.cols();
    const Eigen::MatrixXd M = b * Phi.transpose() * Phi;
    Eigen::MatrixXd H = M;
    H.diagonal().array() += a;
    const auto llt = detail::jittered_cholesky(H);
    EffectiveDimensionForms f{};
    f.trace_mh = llt.solve(M).trace();
    f.complement = static_cast<double>(d) - a * llt.solve(Eigen::MatrixXd::Identity(d, d)).trace();
    f.kernel_form = effective_dimension_kernel(Phi * Phi.transpose() / a, b);
    return f;
}

/// Eigenbasis of the kernel matrix; columns of `coefficients` are
/// V[:,i] / sqrt(lambda_i), which are orthonormal in the RKHS inner
/// product <u, v> = u^T K v.
struct SpectralBasis {
    Eigen::VectorXd eigenvalues;   // descending
    Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
    Eigen::MatrixXd coefficients;  // V[:,i]/sqrt(lambda_i); zero where flagged null
    std::vector<bool> numerically_null;

    Eigen::Index size() const { return eigenvalues.size(); }
};

inline SpectralBasis spectral_basis(const Dataset& ds, const KernelSpec& spec) {
    if (ds.n() > kDenseCap)
        throw Error(Error::Code::bad_argument, "spectral_basis: dataset exceeds dense cap");
    const Eigen::MatrixXd K = gram(spec, ds.inputs);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K);
    const Eigen::Index n = ds.n();
    SpectralBasis sb;
    sb.eigenvalues.resize(n);
    sb.eigenvectors.resize(n, n);
    sb.coefficients = Eigen::MatrixXd::Zero(n, n);
    sb.numerically_null.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        // reverse to descending order
        const Eigen::Index src = n - 1 - i;
        sb.eigenvalues(i) = eig.eigenvalues()(src);
        sb.eigenvectors.col(i) = eig.eigenvectors().col(src);
        // relative cutoff: below it the 1/sqrt(lambda) scaling amplifies
        // round-off past any useful accuracy
        const bool null_dir = sb.eigenvalues(i) < std::max(1e-12, 1e-8 * sb.eigenvalues(0));
        sb.numerically_null[static_cast<std::size_t>(i)] = null_dir;
        if (!null_dir) sb.coefficients.col(i) = sb.eigenvectors.col(i) / std::sqrt(sb.eigenvalues(i));
    }
    return sb;
}

/// RKHS norm of the error projected onto basis direction i:
/// |sqrt(lambda_i) V[:,i]^T (alpha - alpha*)|.
inline double project_error(const SpectralBasis& basis, Eigen::Index i, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& alpha_star) {
    if (basis.numerically_null[static_cast<std::size_t>(i)])
        throw Error(Error::Code::bad_argument,
                    "project_error: direction " + std::to_string(i) + " is numerically null");
    return std::abs(std::sqrt(basis.eigenvalues(i)) *
                    basis.eigenvectors.col(i).dot(alpha - alpha_star));
}

inline double rkhs_norm(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& K) {
    return std::sqrt(std::max(alpha.dot(K * alpha), 0.0));
}

inline double k2_norm(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& K) {
    return (K * alpha).norm();
}

}  // namespace gpsdd
