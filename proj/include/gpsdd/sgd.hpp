#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "gpsdd/core.hpp"
#include "gpsdd/exact_gp.hpp"
#include "gpsdd/kernels.hpp"
#include "gpsdd/linalg.hpp"
#include "gpsdd/rng.hpp"

namespace gpsdd {

enum class Averaging { geometric, arithmetic, none };

/// Step sizes are absolute (per-step); presets quote beta * n products.
struct OptimiserConfig {
    double step_size = 0.0;
    double momentum = 0.9;
    Averaging averaging = Averaging::geometric;
    double geometric_chi = 0.0;  // 0 means the 100/T default
    int steps = 0;
    int batch_size = 512;
    RngStream rng;
    int trace_interval = 0;  // 0 means max(steps/200, 1)

    void validate(Eigen::Index n) const {
        if (!(step_size > 0.0)) throw Error(Error::Code::bad_argument, "step size must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw Error(Error::Code::bad_argument, "momentum must lie in [0, 1)");
        if (steps < 1) throw Error(Error::Code::bad_argument, "step count must be >= 1");
        if (batch_size < 1 || batch_size > n)
            throw Error(Error::Code::bad_argument, "batch size must lie in [1, n]");
        const double chi = geometric_chi;
        if (chi < 0.0 || chi > 1.0)
            throw Error(Error::Code::bad_argument, "averaging weight must lie in (0, 1]");
    }
    double chi() const {
        if (geometric_chi > 0.0) return geometric_chi;
        return std::min(1.0, 100.0 / static_cast<double>(steps));
    }
    int effective_trace_interval() const {
        return trace_interval > 0 ? trace_interval : std::max(steps / 200, 1);
    }
};

/// Batched row access to an n x n kernel matrix: rows(idx) returns the
/// |idx| x n block. Backends either slice a dense matrix or evaluate
/// kernel rows on demand.
/// Serves rows of a symmetric n x n matrix. `gather(idx)` returns the
/// n x |idx| matrix whose j-th column is row idx[j]; by symmetry these are
/// columns of the matrix, which keeps the dense gather contiguous in
/// column-major storage.
struct RowSource {
    Eigen::Index n = 0;
    std::function<Eigen::MatrixXd(const std::vector<Eigen::Index>&)> gather;
    // optional fused product: returns rows(idx) * M (|idx| x k) without
    // materialising the gathered block; dense sources set it because a
    // column dot-product reads each column exactly once
    std::function<Eigen::MatrixXd(const std::vector<Eigen::Index>&, const Eigen::MatrixXd&)> apply;

    Eigen::MatrixXd rows_times(const std::vector<Eigen::Index>& idx,
                               const Eigen::MatrixXd& M) const {
        if (apply) return apply(idx, M);
        return gather(idx).transpose() * M;
    }

    static RowSource from_dense(Eigen::MatrixXd K) {
        RowSource rs;
        rs.n = K.rows();
        auto held = std::make_shared<Eigen::MatrixXd>(std::move(K));
        rs.gather = [held](const std::vector<Eigen::Index>& idx) {
            Eigen::MatrixXd out(held->rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t j = 0; j < idx.size(); ++j)
                out.col(static_cast<Eigen::Index>(j)) = held->col(idx[j]);
            return out;
        };
        rs.apply = [held](const std::vector<Eigen::Index>& idx, const Eigen::MatrixXd& M) {
            Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), M.cols());
            for (std::size_t j = 0; j < idx.size(); ++j)
                out.row(static_cast<Eigen::Index>(j)) = held->col(idx[j]).transpose() * M;
            return out;
        };
        return rs;
    }
    static RowSource from_kernel(KernelSpec spec, Eigen::MatrixXd X) {
        RowSource rs;
        rs.n = X.rows();
        rs.gather = [spec = std::move(spec), X = std::move(X)](const std::vector<Eigen::Index>& idx) {
            Eigen::MatrixXd Xi(static_cast<Eigen::Index>(idx.size()), X.cols());
            for (std::size_t i = 0; i < idx.size(); ++i) Xi.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
            return gram(spec, X, Xi);
        };
        return rs;
    }
};

/// Dense rows when the kernel matrix fits under the dense cap (one gram
/// evaluation, cheap row slicing), on-demand kernel rows otherwise.
inline RowSource make_row_source(const KernelSpec& spec, const Eigen::MatrixXd& X) {
    if (X.rows() <= kDenseCap) return RowSource::from_dense(gram(spec, X));
    return RowSource::from_kernel(spec, X);
}

struct SolverRun {
    Eigen::MatrixXd averaged;  // n x k (k = number of simultaneous targets)
    Eigen::MatrixXd last;
    std::vector<std::pair<int, double>> trace;  // (step, diagnostic value)

    Eigen::VectorXd averaged_vector() const { return averaged.col(0); }
};

/// Optional per-trace-point diagnostic, e.g. a K-norm distance to a
/// reference solution. Receives the current averaged iterate.
using TraceFn = std::function<double(const Eigen::MatrixXd&)>;

/// Full dual gradient b^-1 alpha - z + K alpha.
inline Eigen::VectorXd dual_gradient(const Eigen::MatrixXd& K, const Eigen::VectorXd& alpha,
                                     const Eigen::VectorXd& z, double b) {
    if (K.rows() != alpha.size() || alpha.size() != z.size())
        throw Error(Error::Code::dimension_mismatch, "dual_gradient: size mismatch");
    return alpha / b - z + K * alpha;
}

/// Single-coordinate dual gradient estimate n ((K_i + b^-1 e_i)^T alpha - z_i) e_i.
inline Eigen::VectorXd dual_gradient_coordinate(const Eigen::MatrixXd& K,
                                                const Eigen::VectorXd& alpha,
                                                const Eigen::VectorXd& z, double b,
                                                Eigen::Index i) {
    const double n = static_cast<double>(K.rows());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(K.rows());
    g(i) = n * (K.row(i).dot(alpha) + alpha(i) / b - z(i));
    return g;
}

namespace detail {
inline void check_divergence(const Eigen::MatrixXd& alpha) {
    if (!alpha.allFinite() || alpha.norm() > 1e8)
        throw Error(Error::Code::solver_divergence,
                    "solver diverged (weight norm exceeded 1e8); reduce the step size");
}

/// Top kernel eigenvalue estimate by power iteration on a strided subset,
/// extrapolated linearly in n (conservative for step sizing).
inline double estimated_top_eigenvalue(const Eigen::MatrixXd& inputs, const KernelSpec& spec) {
    const Eigen::Index n = inputs.rows();
    const Eigen::Index m = std::min<Eigen::Index>(n, 2000);
    Eigen::MatrixXd Xs(m, inputs.cols());
    for (Eigen::Index i = 0; i < m; ++i) Xs.row(i) = inputs.row(i * n / m);
    const Eigen::MatrixXd K = gram(spec, Xs);
    RngStream rng(0x5eed5eedULL);
    Eigen::VectorXd v(m);
    for (Eigen::Index i = 0; i < m; ++i) v(i) = rng.normal();
    v.normalize();
    double lambda = spec.variance;
    for (int t = 0; t < 30; ++t) {
        const Eigen::VectorXd w = K * v;
        lambda = w.norm();
        if (lambda == 0.0) break;
        v = w / lambda;
    }
    return lambda * static_cast<double>(n) / static_cast<double>(m);
}
}  // namespace detail

/// Stochastic dual descent on the quadratic with Hessian K + b^-1 I and
/// linear term Z. Coordinates are sampled uniformly with replacement and
/// shared across target columns; with independent target columns the
/// resulting optima are independent.
inline SolverRun sdd_solve(const RowSource& src, const Eigen::MatrixXd& Z, double b,
                           OptimiserConfig cfg, const TraceFn& trace_fn = nullptr) {
    const Eigen::Index n = src.n;
    const Eigen::Index k = Z.cols();
    if (Z.rows() != n) throw Error(Error::Code::dimension_mismatch, "sdd_solve: target size mismatch");
    cfg.validate(n);
    const double chi = cfg.chi();
    const double rho = cfg.momentum;
    const double scale = static_cast<double>(n) / static_cast<double>(cfg.batch_size);
    const int interval = cfg.effective_trace_interval();

    Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd arith_sum = Eigen::MatrixXd::Zero(n, k);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg.batch_size));
    SolverRun run;

    for (int t = 1; t <= cfg.steps; ++t) {
        for (auto& i : idx) i = static_cast<Eigen::Index>(cfg.rng.uniform_index(static_cast<std::uint64_t>(n)));
        const Eigen::MatrixXd look = alpha + rho * vel;
        // residuals at the sampled coordinates: (K_i + b^-1 e_i)^T look - z_i
        Eigen::MatrixXd resid = src.rows_times(idx, look);  // r x k
        for (std::size_t j = 0; j < idx.size(); ++j)
            resid.row(static_cast<Eigen::Index>(j)) += look.row(idx[j]) / b - Z.row(idx[j]);
        vel *= rho;
        for (std::size_t j = 0; j < idx.size(); ++j)
            vel.row(idx[j]) -= cfg.step_size * scale * resid.row(static_cast<Eigen::Index>(j));
        alpha += vel;
        detail::check_divergence(alpha);
        switch (cfg.averaging) {
            case Averaging::geometric:
                avg = chi * alpha + (1.0 - chi) * avg;
                break;
            case Averaging::arithmetic:
                arith_sum += alpha;
                avg = arith_sum / static_cast<double>(t);
                break;
            case Averaging::none:
                avg = alpha;
                break;
        }
        if (trace_fn && (t % interval == 0 || t == cfg.steps))
            run.trace.emplace_back(t, trace_fn(avg));
    }
    run.averaged = avg;
    run.last = alpha;
    return run;
}

inline SolverRun sdd_solve(const RowSource& src, const Eigen::VectorXd& z, double b,
                           const OptimiserConfig& cfg, const TraceFn& trace_fn = nullptr) {
    return sdd_solve(src, Eigen::MatrixXd(z), b, cfg, trace_fn);
}

/// Primal SGD: minibatch fit gradient (n/r) sum_i K_i (K_i^T a + b^-1 a_i - z_i)
/// plus the random-feature regulariser is folded into the same residual;
/// per-step cost stays linear in n through the sampled rows. The noise
/// term uses fresh random features each step.
inline SolverRun primal_sgd_solve(const KernelSpec& spec, const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& Z, double b, OptimiserConfig cfg,
                                  int regulariser_features = 100,
                                  const TraceFn& trace_fn = nullptr) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = Z.cols();
    if (Z.rows() != n)
        throw Error(Error::Code::dimension_mismatch, "primal_sgd_solve: target size mismatch");
    cfg.validate(n);
    const double chi = cfg.chi();
    const double rho = cfg.momentum;
    const double scale = static_cast<double>(n) / static_cast<double>(cfg.batch_size);
    const int interval = cfg.effective_trace_interval();

    Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(n, k);
    Eigen::MatrixXd arith_sum = Eigen::MatrixXd::Zero(n, k);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg.batch_size));
    RngStream feature_rng = cfg.rng.derive(0x5eed);
    SolverRun run;

    for (int t = 1; t <= cfg.steps; ++t) {
        for (auto& i : idx) i = static_cast<Eigen::Index>(cfg.rng.uniform_index(static_cast<std::uint64_t>(n)));
        const Eigen::MatrixXd look = alpha + rho * vel;

        Eigen::MatrixXd Xi(static_cast<Eigen::Index>(idx.size()), X.cols());
        for (std::size_t j = 0; j < idx.size(); ++j) Xi.row(static_cast<Eigen::Index>(j)) = X.row(idx[j]);
        const Eigen::MatrixXd Krows = gram(spec, Xi, X);  // r x n

        // fit term: (n/r) sum_i K_i (K_i^T look - z_i)
        Eigen::MatrixXd resid = Krows * look;  // r x k
        for (std::size_t j = 0; j < idx.size(); ++j) resid.row(static_cast<Eigen::Index>(j)) -= Z.row(idx[j]);
        Eigen::MatrixXd grad = scale * (Krows.transpose() * resid);

        // regulariser term: b^-1 Phi_s Phi_s^T look with fresh features
        const FeatureMap fm = sample_features(spec, regulariser_features, feature_rng.derive(static_cast<std::uint64_t>(t)));
        const Eigen::MatrixXd Phi = feature_matrix(fm, X);  // n x s
        grad += (Phi * (Phi.transpose() * look)) / b;

        vel = rho * vel - cfg.step_size * grad;
        alpha += vel;
        detail::check_divergence(alpha);
        switch (cfg.averaging) {
            case Averaging::geometric:
                avg = chi * alpha + (1.0 - chi) * avg;
                break;
            case Averaging::arithmetic:
                arith_sum += alpha;
                avg = arith_sum / static_cast<double>(t);
                break;
            case Averaging::none:
                avg = alpha;
                break;
        }
        if (trace_fn && (t % interval == 0 || t == cfg.steps))
            run.trace.emplace_back(t, trace_fn(avg));
    }
    run.averaged = avg;
    run.last = alpha;
    return run;
}

/// Posterior sample in pathwise form:
///   f(x) = prior(x) + K_{xX} (alpha_mean - alpha_unc)
/// with prior(x) = phi(x) . w a random-feature draw from the prior.
struct PathwiseSample {
    FeatureMap prior_features;
    Eigen::VectorXd prior_weights;   // w ~ N(0, I)
    Eigen::VectorXd alpha_unc;       // solves (K + b^-1 I) a = prior(X) + eps
    Eigen::VectorXd alpha_mean;      // shared alpha*
    const Eigen::MatrixXd* train_inputs = nullptr;
    KernelSpec kernel;

    double prior_at(const Eigen::VectorXd& x) const {
        return feature_eval(prior_features, x).dot(prior_weights);
    }
    double value_at(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd kx = gram(kernel, x.transpose(), *train_inputs).row(0);
        return prior_at(x) + kx.dot(alpha_mean - alpha_unc);
    }
    Eigen::VectorXd values_at(const Eigen::MatrixXd& X) const {
        return feature_matrix(prior_features, X) * prior_weights +
               gram(kernel, X, *train_inputs) * (alpha_mean - alpha_unc);
    }
    /// Analytic gradient of value_at with respect to x.
    Eigen::VectorXd gradient_at(const Eigen::VectorXd& x) const {
        return gradients_at(x.transpose()).row(0).transpose();
    }
    /// Batched gradients: row i is the gradient at row i of Xq.
    Eigen::MatrixXd gradients_at(const Eigen::MatrixXd& Xq) const {
        const FeatureMap& fm = prior_features;
        Eigen::VectorXd w = prior_weights;
        if (fm.output_scaling.size() > 0) w.array() *= fm.output_scaling.array();
        const Eigen::MatrixXd Xs = Xq.array().rowwise() / fm.lengthscales.transpose().array();
        const Eigen::ArrayXXd S =
            ((Xs * fm.frequencies.transpose()).rowwise() + fm.phases.transpose()).array().sin();
        Eigen::MatrixXd G =
            (-fm.scale) * ((S.rowwise() * w.transpose().array()).matrix() * fm.frequencies);
        G.array().rowwise() /= fm.lengthscales.transpose().array();
        G += kernel_grad_weighted(kernel, Xq, *train_inputs, alpha_mean - alpha_unc);
        return G;
    }
};

inline double evaluate_sample(const PathwiseSample& s, const Eigen::VectorXd& x) {
    return s.value_at(x);
}

inline double evaluate_mean(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& X_train,
                            const KernelSpec& spec, const Eigen::VectorXd& x) {
    return gram(spec, x.transpose(), X_train).row(0).dot(alpha);
}

enum class SampleSolver { sdd, primal, exact };

/// Draws k pathwise posterior samples. All sample systems share one
/// solver run over stacked target columns; targets are independent across
/// columns so the optima remain independent. `alpha_mean` must already
/// solve the mean system.
inline std::vector<PathwiseSample> draw_posterior_samples(
    const Dataset& ds, const KernelSpec& spec, const NoiseModel& noise,
    const Eigen::VectorXd& alpha_mean, int k, int prior_feature_count, OptimiserConfig cfg,
    SampleSolver solver, RngStream rng) {
    if (k < 1) throw Error(Error::Code::bad_argument, "sample count must be >= 1");
    const Eigen::Index n = ds.n();
    std::vector<PathwiseSample> samples(static_cast<std::size_t>(k));
    Eigen::MatrixXd targets(n, k);
    for (int j = 0; j < k; ++j) {
        RngStream sample_rng = rng.derive(static_cast<std::uint64_t>(j));
        PathwiseSample& s = samples[static_cast<std::size_t>(j)];
        s.prior_features = sample_features(spec, prior_feature_count, sample_rng.derive(0));
        s.prior_weights.resize(prior_feature_count);
        RngStream wr = sample_rng.derive(1);
        for (int i = 0; i < prior_feature_count; ++i) s.prior_weights(i) = wr.normal();
        s.alpha_mean = alpha_mean;
        s.train_inputs = &ds.inputs;
        s.kernel = spec;
        // targets: prior draw at the training inputs plus observation noise
        Eigen::VectorXd z = feature_matrix(s.prior_features, ds.inputs) * s.prior_weights;
        RngStream er = sample_rng.derive(2);
        const double noise_sd = std::sqrt(noise.variance());
        for (Eigen::Index i = 0; i < n; ++i) z(i) += noise_sd * er.normal();
        targets.col(j) = z;
    }

    Eigen::MatrixXd solutions;
    switch (solver) {
        case SampleSolver::exact: {
            Eigen::MatrixXd Kyy = gram(spec, ds.inputs);
            Kyy.diagonal().array() += noise.variance();
            solutions = detail::jittered_cholesky(Kyy).solve(targets);
            break;
        }
        case SampleSolver::sdd: {
            cfg.rng = rng.derive(0xabcd);
            solutions = sdd_solve(make_row_source(spec, ds.inputs), targets, noise.precision, cfg)
                            .averaged;
            break;
        }
        case SampleSolver::primal: {
            cfg.rng = rng.derive(0xabcd);
            solutions = primal_sgd_solve(spec, ds.inputs, targets, noise.precision, cfg).averaged;
            break;
        }
    }
    for (int j = 0; j < k; ++j) samples[static_cast<std::size_t>(j)].alpha_unc = solutions.col(j);
    return samples;
}

/// Empirical trace of the covariance of a stochastic gradient estimator
/// at a fixed point: sum of per-coordinate variances over n_draws draws.
inline double variance_probe(const std::function<Eigen::VectorXd(RngStream&)>& draw_gradient,
                             int n_draws, RngStream rng) {
    if (n_draws < 2) throw Error(Error::Code::bad_argument, "variance probe needs >= 2 draws");
    Eigen::VectorXd sum, sumsq;
    for (int t = 0; t < n_draws; ++t) {
        const Eigen::VectorXd g = draw_gradient(rng);
        if (t == 0) {
            sum = Eigen::VectorXd::Zero(g.size());
            sumsq = Eigen::VectorXd::Zero(g.size());
        }
        sum += g;
        sumsq += g.cwiseAbs2();
    }
    const double m = static_cast<double>(n_draws);
    return (sumsq / m - (sum / m).cwiseAbs2()).sum();
}

inline void export_solver_trace(const std::string& path,
                                const std::vector<std::pair<int, double>>& trace,
                                const std::string& column) {
    std::ofstream out(path);
    out << "step," << column << "\n";
    for (const auto& [step, value] : trace) out << step << "," << value << "\n";
}

}  // namespace gpsdd
