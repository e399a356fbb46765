#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "gpsdd/core.hpp"
#include "gpsdd/exact_gp.hpp"
#include "gpsdd/kernels.hpp"
#include "gpsdd/sgd.hpp"

namespace gpsdd {

struct InducingSet {
    Eigen::MatrixXd Z;  // m x d'
    Eigen::Index m() const { return Z.rows(); }
};

enum class InducingMethod { kmeans, nn_elimination };

namespace detail {
inline InducingSet kmeans_select(const Eigen::MatrixXd& X, Eigen::Index m, RngStream rng) {
    const Eigen::Index n = X.rows();
    // init: distinct random training points
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Eigen::MatrixXd C(m, X.cols());
    for (Eigen::Index j = 0; j < m; ++j) C.row(j) = X.row(perm[static_cast<std::size_t>(j)]);

    std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < 25; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < m; ++j) {
                const double d2 = (X.row(i) - C.row(j)).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    assign[static_cast<std::size_t>(i)] = j;
                }
            }
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, X.cols());
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
            counts(assign[static_cast<std::size_t>(i)]) += 1.0;
        }
        for (Eigen::Index j = 0; j < m; ++j)
            if (counts(j) > 0.0) C.row(j) = sums.row(j) / counts(j);
        // empty clusters keep their previous centroid
    }
    return {C};
}

/// Greedily removes the point whose nearest surviving neighbour is closest
/// until m remain. Ties break on the lowest index.
inline InducingSet nn_eliminate(const Eigen::MatrixXd& X, Eigen::Index m) {
    const Eigen::Index n = X.rows();
    std::vector<bool> alive(static_cast<std::size_t>(n), true);
    Eigen::MatrixXd D2(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            D2(i, j) = i == j ? std::numeric_limits<double>::infinity()
                              : (X.row(i) - X.row(j)).squaredNorm();
    Eigen::Index remaining = n;
    while (remaining > m) {
        Eigen::Index victim = -1;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!alive[static_cast<std::size_t>(i)]) continue;
            double nearest = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j)
                if (alive[static_cast<std::size_t>(j)] && j != i) nearest = std::min(nearest, D2(i, j));
            if (nearest < best) {
                best = nearest;
                victim = i;
            }
        }
        alive[static_cast<std::size_t>(victim)] = false;
        --remaining;
    }
    Eigen::MatrixXd Z(m, X.cols());
    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (alive[static_cast<std::size_t>(i)]) Z.row(row++) = X.row(i);
    return {Z};
}
}  // namespace detail

inline InducingSet select_inducing(const Dataset& ds, Eigen::Index m, InducingMethod method,
                                   RngStream rng) {
    if (m < 1 || m > ds.n())
        throw Error(Error::Code::bad_argument, "inducing count must lie in [1, n]");
    switch (method) {
        case InducingMethod::kmeans:
            return detail::kmeans_select(ds.inputs, m, rng);
        case InducingMethod::nn_elimination:
            return detail::nn_eliminate(ds.inputs, m);
    }
    throw Error(Error::Code::unsupported, "unknown inducing selection method");
}

/// Optimal inducing-point posterior moments (dense oracle):
///   mu(x)  = K_xZ (K_ZZ + K_ZX B K_XZ)^-1 K_ZX B Y
///   var(x) = k(x,x) - K_xZ K_ZZ^-1 K_Zx + K_xZ (K_ZZ + K_ZX B K_XZ)^-1 K_Zx
struct TitsiasMoments {
    double mean;
    double variance;
};

inline TitsiasMoments titsias_moments_exact(const Dataset& ds, const InducingSet& ind,
                                            const KernelSpec& spec, const NoiseModel& noise,
                                            const Eigen::VectorXd& x) {
    if (ds.n() > kDenseCap || ind.m() > kDenseCap)
        throw Error(Error::Code::bad_argument, "titsias_moments_exact: exceeds dense cap");
    const double b = noise.precision;
    const Eigen::MatrixXd Kzz = gram(spec, ind.Z);
    const Eigen::MatrixXd Kzx = gram(spec, ind.Z, ds.inputs);
    Eigen::MatrixXd S = Kzz + b * Kzx * Kzx.transpose();
    const auto S_llt = detail::jittered_cholesky(S);
    const Eigen::VectorXd kz = gram(spec, ind.Z, x.transpose()).col(0);
    const double mean = kz.dot(S_llt.solve(b * Kzx * ds.targets));
    const auto Kzz_llt = detail::jittered_cholesky(Kzz);
    const double var = kernel_eval(spec, x, x) - kz.dot(Kzz_llt.solve(kz)) + kz.dot(S_llt.solve(kz));
    return {mean, std::max(var, 0.0)};
}

/// Exact GP fit under the Nystrom prior K_XZ K_ZZ^-1 K_ZX; the resulting
/// moments coincide with the optimal inducing-point posterior.
inline TitsiasMoments nystrom_moments_exact(const Dataset& ds, const InducingSet& ind,
                                            const KernelSpec& spec, const NoiseModel& noise,
                                            const Eigen::VectorXd& x) {
    const Eigen::MatrixXd Kzz = gram(spec, ind.Z);
    const Eigen::MatrixXd Kxz = gram(spec, ds.inputs, ind.Z);
    const auto Kzz_llt = detail::jittered_cholesky(Kzz);
    Eigen::MatrixXd Kyy = Kxz * Kzz_llt.solve(Kxz.transpose());
    Kyy.diagonal().array() += noise.variance();
    const auto llt = detail::jittered_cholesky(Kyy);
    const Eigen::VectorXd kz = gram(spec, ind.Z, x.transpose()).col(0);
    const Eigen::VectorXd kx = Kxz * Kzz_llt.solve(kz);  // Nystrom k(X, x)
    const double kxx = kz.dot(Kzz_llt.solve(kz));        // Nystrom k(x, x)
    const double mean = kx.dot(llt.solve(ds.targets));
    // full prior variance at x, reduced by the Nystrom-informed part
    const double var = kernel_eval(spec, x, x) - kxx + std::max(kxx - kx.dot(llt.solve(kx)), 0.0);
    return {mean, var};
}

/// Mean weights by SGD on sum_i b (y_i - K_{x_i Z} alpha)^2 / 2 + ||alpha||^2_{K_ZZ} / 2.
/// The regulariser gradient uses fresh random features evaluated at Z.
inline Eigen::VectorXd inducing_mean_sgd(const Dataset& ds, const InducingSet& ind,
                                         const KernelSpec& spec, const NoiseModel& noise,
                                         OptimiserConfig cfg, int regulariser_features = 100) {
    cfg.validate(ds.n());
    const Eigen::Index m = ind.m();
    const double rho = cfg.momentum;
    const double chi = cfg.chi();
    const double scale = static_cast<double>(ds.n()) / static_cast<double>(cfg.batch_size);
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd vel = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(m);
    RngStream feature_rng = cfg.rng.derive(0x5eed);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg.batch_size));
    for (int t = 1; t <= cfg.steps; ++t) {
        for (auto& i : idx)
            i = static_cast<Eigen::Index>(cfg.rng.uniform_index(static_cast<std::uint64_t>(ds.n())));
        const Eigen::VectorXd look = alpha + rho * vel;
        Eigen::MatrixXd Xi(static_cast<Eigen::Index>(idx.size()), ds.dim());
        Eigen::VectorXd yi(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            Xi.row(static_cast<Eigen::Index>(j)) = ds.inputs.row(idx[j]);
            yi(static_cast<Eigen::Index>(j)) = ds.targets(idx[j]);
        }
        const Eigen::MatrixXd Kiz = gram(spec, Xi, ind.Z);  // r x m
        Eigen::VectorXd grad = scale * noise.precision * Kiz.transpose() * (Kiz * look - yi);
        const FeatureMap fm = sample_features(spec, regulariser_features,
                                              feature_rng.derive(static_cast<std::uint64_t>(t)));
        const Eigen::MatrixXd PhiZ = feature_matrix(fm, ind.Z);  // m x s
        grad += PhiZ * (PhiZ.transpose() * look);
        vel = rho * vel - cfg.step_size * grad;
        alpha += vel;
        detail::check_divergence(alpha);
        avg = chi * alpha + (1.0 - chi) * avg;
    }
    return avg;
}

/// Sample weights: same objective with targets f~(x_i) + eps_i in place of y_i.
inline Eigen::VectorXd inducing_sample_sgd(const Dataset& ds, const InducingSet& ind,
                                           const KernelSpec& spec, const NoiseModel& noise,
                                           const Eigen::VectorXd& sample_targets,
                                           OptimiserConfig cfg, int regulariser_features = 100) {
    Dataset tmp = ds;
    tmp.targets = sample_targets;
    return inducing_mean_sgd(tmp, ind, spec, noise, cfg, regulariser_features);
}

/// Dense oracle for the inducing quadratics: alpha = (K_ZZ + b K_ZX K_XZ)^-1 b K_ZX y.
inline Eigen::VectorXd inducing_weights_dense(const Dataset& ds, const InducingSet& ind,
                                              const KernelSpec& spec, const NoiseModel& noise,
                                              const Eigen::VectorXd& targets) {
    const double b = noise.precision;
    const Eigen::MatrixXd Kzx = gram(spec, ind.Z, ds.inputs);
    Eigen::MatrixXd S = gram(spec, ind.Z) + b * Kzx * Kzx.transpose();
    return detail::jittered_cholesky(S).solve(b * Kzx * targets);
}

/// Pathwise inducing-point sample: prior draw plus K_xZ-parameterised
/// uncertainty reduction.
struct InducingPathwiseSample {
    FeatureMap prior_features;
    Eigen::VectorXd prior_weights;
    Eigen::VectorXd alpha_unc;   // m-vector
    Eigen::VectorXd alpha_mean;  // m-vector
    Eigen::MatrixXd Z;
    KernelSpec kernel;

    double value_at(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd kz = gram(kernel, Z, x.transpose()).col(0);
        return feature_eval(prior_features, x).dot(prior_weights) + kz.dot(alpha_mean - alpha_unc);
    }
};

}  // namespace gpsdd
