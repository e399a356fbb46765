#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gpsdd/core.hpp"
#include "gpsdd/rng.hpp"

namespace gpsdd {

enum class KernelFamily { RBF, Matern12, Matern32 };

/// Stationary kernel with one lengthscale per input dimension.
///
/// Conventions, with u = ||(x - x') / psi||:
///   RBF:        variance * exp(-u^2)          (no factor 2 in the exponent)
///   Matern-1/2: variance * exp(-u)
///   Matern-3/2: variance * (1 + sqrt(3) u) * exp(-sqrt(3) u)
struct KernelSpec {
    KernelFamily family = KernelFamily::RBF;
    Eigen::VectorXd lengthscales;  // d', all > 0
    double variance = 1.0;

    KernelSpec() = default;
    KernelSpec(KernelFamily f, Eigen::VectorXd psi, double var)
        : family(f), lengthscales(std::move(psi)), variance(var) {
        if ((lengthscales.array() <= 0.0).any())
            throw Error(Error::Code::bad_argument, "lengthscales must be positive");
        if (!(variance > 0.0))
            throw Error(Error::Code::bad_argument, "kernel variance must be positive");
    }
    static KernelSpec isotropic(KernelFamily f, double psi, Eigen::Index dim, double var = 1.0) {
        return KernelSpec(f, Eigen::VectorXd::Constant(dim, psi), var);
    }
    Eigen::Index dim() const { return lengthscales.size(); }
};

namespace detail {
inline double kernel_of_u2(const KernelSpec& spec, double u2) {
    switch (spec.family) {
        case KernelFamily::RBF:
            return spec.variance * std::exp(-u2);
        case KernelFamily::Matern12:
            return spec.variance * std::exp(-std::sqrt(u2));
        case KernelFamily::Matern32: {
            const double su = std::sqrt(3.0 * u2);
            return spec.variance * (1.0 + su) * std::exp(-su);
        }
    }
    return 0.0;
}
}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& xp) {
    if (x.size() != spec.dim() || xp.size() != spec.dim())
        throw Error(Error::Code::dimension_mismatch, "kernel_eval: input dimension mismatch");
    const double u2 = ((x - xp).array() / spec.lengthscales.array()).square().sum();
    return detail::kernel_of_u2(spec, u2);
}

/// Cross-Gram matrix K(X, X'), n x m.
inline Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& X,
                            const Eigen::MatrixXd& Xp) {
    if (X.cols() != spec.dim() || Xp.cols() != spec.dim())
        throw Error(Error::Code::dimension_mismatch, "gram: input dimension mismatch");
    const Eigen::MatrixXd A = X.array().rowwise() / spec.lengthscales.transpose().array();
    const Eigen::MatrixXd B = Xp.array().rowwise() / spec.lengthscales.transpose().array();
    const Eigen::VectorXd a2 = A.rowwise().squaredNorm();
    const Eigen::VectorXd b2 = B.rowwise().squaredNorm();
    Eigen::MatrixXd U2 = (-2.0 * A * B.transpose()).colwise() + a2;
    U2.rowwise() += b2.transpose();
    U2 = U2.cwiseMax(0.0);  // clamp negative round-off
    Eigen::MatrixXd K(X.rows(), Xp.rows());
    switch (spec.family) {
        case KernelFamily::RBF:
            K = spec.variance * (-U2.array()).exp();
            break;
        case KernelFamily::Matern12:
            K = spec.variance * (-U2.array().sqrt()).exp();
            break;
        case KernelFamily::Matern32: {
            Eigen::ArrayXXd su = (3.0 * U2.array()).sqrt();
            K = spec.variance * (1.0 + su) * (-su).exp();
            break;
        }
    }
    return K;
}

inline Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& X) {
    return gram(spec, X, X);
}

/// Gradient of k(x, x') with respect to x. Matern-1/2 is not differentiable
/// at coincident points and raises an error there.
inline Eigen::VectorXd kernel_grad_x(const KernelSpec& spec, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& xp) {
    if (x.size() != spec.dim() || xp.size() != spec.dim())
        throw Error(Error::Code::dimension_mismatch, "kernel_grad_x: input dimension mismatch");
    const Eigen::ArrayXd delta = (x - xp).array();
    const Eigen::ArrayXd psi2 = spec.lengthscales.array().square();
    const double u2 = (delta.square() / psi2).sum();
    const double u = std::sqrt(u2);
    switch (spec.family) {
        case KernelFamily::RBF:
            // d/dx [v exp(-u^2)] = -2 v exp(-u^2) delta / psi^2
            return (-2.0 * spec.variance * std::exp(-u2) * delta / psi2).matrix();
        case KernelFamily::Matern12: {
            if (u == 0.0)
                throw Error(Error::Code::non_differentiable,
                            "Matern-1/2 kernel is not differentiable at coincident points");
            return (-spec.variance * std::exp(-u) / u * delta / psi2).matrix();
        }
        case KernelFamily::Matern32: {
            const double su = std::sqrt(3.0) * u;
            // dk/du = -3 v u exp(-su); du/dx_j = delta_j / (psi_j^2 u)
            return (-3.0 * spec.variance * std::exp(-su) * delta / psi2).matrix();
        }
    }
    return Eigen::VectorXd::Zero(x.size());
}

/// Batched weighted gradient: row i of the result is
/// sum_j coeff_j * grad_x k(x, X_j) evaluated at x = Xq row i.
inline Eigen::MatrixXd kernel_grad_weighted(const KernelSpec& spec, const Eigen::MatrixXd& Xq,
                                            const Eigen::MatrixXd& X,
                                            const Eigen::VectorXd& coeff) {
    if (Xq.cols() != spec.dim() || X.cols() != spec.dim() || coeff.size() != X.rows())
        throw Error(Error::Code::dimension_mismatch, "kernel_grad_weighted: size mismatch");
    const Eigen::MatrixXd A = Xq.array().rowwise() / spec.lengthscales.transpose().array();
    const Eigen::MatrixXd B = X.array().rowwise() / spec.lengthscales.transpose().array();
    Eigen::MatrixXd U2 = (-2.0 * A * B.transpose()).colwise() + A.rowwise().squaredNorm();
    U2.rowwise() += B.rowwise().squaredNorm().transpose();
    U2 = U2.cwiseMax(0.0);
    Eigen::ArrayXXd W;
    switch (spec.family) {
        case KernelFamily::RBF:
            W = -2.0 * spec.variance * (-U2.array()).exp();
            break;
        case KernelFamily::Matern12: {
            const Eigen::ArrayXXd U = U2.array().sqrt();
            if ((U <= 0.0).any())
                throw Error(Error::Code::non_differentiable,
                            "Matern-1/2 kernel is not differentiable at coincident points");
            W = -spec.variance * (-U).exp() / U;
            break;
        }
        case KernelFamily::Matern32:
            W = -3.0 * spec.variance * (-std::sqrt(3.0) * U2.array().sqrt()).exp();
            break;
    }
    const Eigen::ArrayXXd WC = W.rowwise() * coeff.transpose().array();
    const Eigen::VectorXd rowsum = WC.rowwise().sum();
    // scaled-coordinate gradient s_i xs_i - (WC B)_i, then one more /psi
    Eigen::MatrixXd G = (A.array().colwise() * rowsum.array()).matrix() - WC.matrix() * B;
    G.array().rowwise() /= spec.lengthscales.transpose().array();
    return G;
}

/// Random cosine features. Entries of feature_eval(x) are
///   sqrt(2 variance / d) * cos(s_i . (x / psi) + r_i),
/// with frequencies drawn from the unit-lengthscale kernel's normalized
/// spectral measure. The optional output_scaling is applied elementwise last
/// (used by the g-prior feature rescaling).
struct FeatureMap {
    Eigen::MatrixXd frequencies;  // d x d'
    Eigen::VectorXd phases;       // d, in [0, 2pi)
    Eigen::VectorXd lengthscales;
    double scale = 1.0;                  // sqrt(2 variance / d)
    Eigen::VectorXd output_scaling;      // optional, size d

    Eigen::Index count() const { return frequencies.rows(); }
    Eigen::Index dim() const { return frequencies.cols(); }
};

inline FeatureMap sample_features(const KernelSpec& spec, Eigen::Index d, RngStream rng) {
    if (d < 1) throw Error(Error::Code::bad_argument, "feature count must be >= 1");
    FeatureMap fm;
    fm.frequencies.resize(d, spec.dim());
    fm.phases.resize(d);
    fm.lengthscales = spec.lengthscales;
    fm.scale = std::sqrt(2.0 * spec.variance / static_cast<double>(d));
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < spec.dim(); ++j) fm.frequencies(i, j) = rng.normal();
        switch (spec.family) {
            case KernelFamily::RBF:
                // exp(-u^2) has spectral measure N(0, 2 I) at unit lengthscale
                fm.frequencies.row(i) *= std::sqrt(2.0);
                break;
            case KernelFamily::Matern12:
            case KernelFamily::Matern32: {
                // standard-t spectral measure: z * sqrt(2 nu) / chi_{2 nu}
                const double nu = spec.family == KernelFamily::Matern12 ? 0.5 : 1.5;
                fm.frequencies.row(i) *= std::sqrt(2.0 * nu) / rng.chi(2.0 * nu);
                break;
            }
        }
        fm.phases(i) = rng.uniform(0.0, 2.0 * M_PI);
    }
    return fm;
}

inline Eigen::VectorXd feature_eval(const FeatureMap& fm, const Eigen::VectorXd& x) {
    if (x.size() != fm.dim())
        throw Error(Error::Code::dimension_mismatch, "feature_eval: input dimension mismatch");
    const Eigen::VectorXd xs = (x.array() / fm.lengthscales.array()).matrix();
    Eigen::VectorXd phi = (fm.scale * ((fm.frequencies * xs + fm.phases).array().cos())).matrix();
    if (fm.output_scaling.size() > 0) phi.array() *= fm.output_scaling.array();
    return phi;
}

/// Stacked features for a batch of inputs: n x d design matrix.
inline Eigen::MatrixXd feature_matrix(const FeatureMap& fm, const Eigen::MatrixXd& X) {
    if (X.cols() != fm.dim())
        throw Error(Error::Code::dimension_mismatch, "feature_matrix: input dimension mismatch");
    const Eigen::MatrixXd Xs = X.array().rowwise() / fm.lengthscales.transpose().array();
    Eigen::MatrixXd Phi =
        (fm.scale * (((Xs * fm.frequencies.transpose()).rowwise() + fm.phases.transpose()).array().cos()))
            .matrix();
    if (fm.output_scaling.size() > 0) Phi.array().rowwise() *= fm.output_scaling.transpose().array();
    return Phi;
}

/// Jacobian of feature_eval with respect to x: d x d' matrix.
inline Eigen::MatrixXd feature_grad_x(const FeatureMap& fm, const Eigen::VectorXd& x) {
    const Eigen::VectorXd xs = (x.array() / fm.lengthscales.array()).matrix();
    const Eigen::ArrayXd s = -fm.scale * (fm.frequencies * xs + fm.phases).array().sin();
    Eigen::MatrixXd J = fm.frequencies.array().colwise() * s;
    J.array().rowwise() /= fm.lengthscales.transpose().array();
    if (fm.output_scaling.size() > 0) J.array().colwise() *= fm.output_scaling.array();
    return J;
}

}  // namespace gpsdd
