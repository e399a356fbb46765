#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gpsdd/core.hpp"
#include "gpsdd/exact_gp.hpp"
#include "gpsdd/kernels.hpp"

namespace gpsdd {

inline double metric_rmse(const Eigen::VectorXd& preds, const Eigen::VectorXd& targets) {
    if (preds.size() != targets.size())
        throw Error(Error::Code::dimension_mismatch, "metric_rmse: length mismatch");
    return std::sqrt((preds - targets).squaredNorm() / static_cast<double>(targets.size()));
}

/// Mean negative Gaussian log-density with predictive variance equal to the
/// sample-estimated function variance plus the observation noise b^-1.
inline double metric_nll(const Eigen::VectorXd& means, const Eigen::VectorXd& sample_variances,
                         const Eigen::VectorXd& targets, double b) {
    if (means.size() != targets.size() || sample_variances.size() != targets.size())
        throw Error(Error::Code::dimension_mismatch, "metric_nll: length mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < targets.size(); ++i) {
        const double v = std::max(sample_variances(i), 1e-8) + 1.0 / b;
        const double r = targets(i) - means(i);
        acc += 0.5 * std::log(2.0 * M_PI * v) + 0.5 * r * r / v;
    }
    return acc / static_cast<double>(targets.size());
}

struct HyperparamFit {
    KernelSpec kernel;
    double noise_precision;
};

namespace detail {
/// Golden-section maximisation of f over [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         int iters = 20) {
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}
}  // namespace detail

/// Evidence-maximising hyperparameters by coordinate-wise golden-section
/// search in log10 space (3 sweeps over per-dimension lengthscales, signal
/// variance, and noise precision).
inline HyperparamFit fit_hyperparams_evidence(const Dataset& ds, KernelFamily family,
                                              int sweeps = 3) {
    const Eigen::Index d = ds.dim();
    Eigen::VectorXd log_psi = Eigen::VectorXd::Zero(d);
    double log_var = 0.0;
    double log_b = 0.0;
    auto evidence_at = [&]() {
        KernelSpec spec(family, (log_psi.array() * std::log(10.0)).exp().matrix(),
                        std::pow(10.0, log_var));
        return evidence(ds, spec, NoiseModel(std::pow(10.0, log_b)));
    };
    for (int s = 0; s < sweeps; ++s) {
        for (Eigen::Index j = 0; j < d; ++j)
            log_psi(j) = detail::golden_max(
                [&](double v) {
                    log_psi(j) = v;
                    return evidence_at();
                },
                -2.0, 2.0);
        log_var = detail::golden_max(
            [&](double v) {
                log_var = v;
                return evidence_at();
            },
            -2.0, 2.0);
        log_b = detail::golden_max(
            [&](double v) {
                log_b = v;
                return evidence_at();
            },
            -2.0, 4.0);
    }
    return {KernelSpec(family, (log_psi.array() * std::log(10.0)).exp().matrix(),
                       std::pow(10.0, log_var)),
            std::pow(10.0, log_b)};
}

/// Centroid-subset hyperparameter procedure for datasets too large for a
/// direct evidence fit: fit on the nearest-neighbour subsets of several
/// random centroids and average the resulting hyperparameter vectors.
/// Subset sizes are clamped to the dense cap.
inline HyperparamFit centroid_hyperparams(const Dataset& ds, KernelFamily family,
                                          Eigen::Index subset_size, int centroids, RngStream rng) {
    subset_size = std::min(subset_size, kDenseCap);
    if (ds.n() <= subset_size) return fit_hyperparams_evidence(ds, family);
    const Eigen::Index d = ds.dim();
    Eigen::VectorXd psi_sum = Eigen::VectorXd::Zero(d);
    double var_sum = 0.0, b_sum = 0.0;
    for (int c = 0; c < centroids; ++c) {
        const Eigen::Index ci =
            static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(ds.n())));
        const Eigen::VectorXd center = ds.inputs.row(ci).transpose();
        std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.n()));
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + subset_size, order.end(),
                          [&](Eigen::Index a, Eigen::Index b) {
                              return (ds.inputs.row(a).transpose() - center).squaredNorm() <
                                     (ds.inputs.row(b).transpose() - center).squaredNorm();
                          });
        Dataset sub;
        sub.inputs.resize(subset_size, d);
        sub.targets.resize(subset_size);
        for (Eigen::Index i = 0; i < subset_size; ++i) {
            sub.inputs.row(i) = ds.inputs.row(order[static_cast<std::size_t>(i)]);
            sub.targets(i) = ds.targets(order[static_cast<std::size_t>(i)]);
        }
        const HyperparamFit fit = fit_hyperparams_evidence(sub, family);
        psi_sum += fit.kernel.lengthscales;
        var_sum += fit.kernel.variance;
        b_sum += fit.noise_precision;
    }
    const double inv = 1.0 / static_cast<double>(centroids);
    return {KernelSpec(family, psi_sum * inv, var_sum * inv), b_sum * inv};
}

}  // namespace gpsdd
