#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <functional>
#include <vector>

#include "gpsdd/core.hpp"
#include "gpsdd/exact_gp.hpp"
#include "gpsdd/sgd.hpp"

namespace gpsdd {

/// Thompson sampling on the unit box [0, 1]^d'.
struct ThompsonConfig {
    int batch_size = 100;     // queries per step
    int candidate_pool = 1000;
    int top_k = 10;           // candidates kept for ascent
    int ascent_steps = 100;
    double ascent_step_scale = 0.05;  // times the smallest lengthscale
    int thompson_steps = 10;
    int prior_feature_count = 2000;

    void validate() const {
        if (batch_size < 1 || candidate_pool < 1 || top_k < 1 || ascent_steps < 0 ||
            thompson_steps < 0)
            throw Error(Error::Code::bad_argument, "all Thompson counts must be >= 1");
        if (top_k > candidate_pool)
            throw Error(Error::Code::bad_argument, "top-k cannot exceed the candidate pool");
    }
};

struct BayesOptTraceEntry {
    int step;
    Eigen::Index cumulative_queries;
    double best_value;
    double seconds;
};

struct BayesOptTrace {
    std::vector<BayesOptTraceEntry> entries;
};

struct ArgmaxResult {
    Eigen::VectorXd argmax;
    double value;
};

/// Candidate screening followed by fixed-step gradient ascent on a
/// pathwise sample, clipped to the unit box.
inline ArgmaxResult maximise_sample(const PathwiseSample& s, const ThompsonConfig& cfg,
                                    RngStream rng) {
    cfg.validate();
    const Eigen::Index dim = s.kernel.dim();
    const double step = cfg.ascent_step_scale * s.kernel.lengthscales.minCoeff();

    Eigen::MatrixXd cand(cfg.candidate_pool, dim);
    for (Eigen::Index i = 0; i < cand.rows(); ++i)
        for (Eigen::Index j = 0; j < dim; ++j) cand(i, j) = rng.uniform();
    const Eigen::VectorXd vals = s.values_at(cand);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(cfg.candidate_pool));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + cfg.top_k, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) { return vals(a) > vals(b); });

    ArgmaxResult best{cand.row(order[0]).transpose(), vals(order[0])};
    // all top-k starts ascend in lockstep so gradients batch into matrix ops
    Eigen::MatrixXd pts(cfg.top_k, dim);
    for (int c = 0; c < cfg.top_k; ++c) pts.row(c) = cand.row(order[static_cast<std::size_t>(c)]);
    for (int t = 0; t < cfg.ascent_steps; ++t) {
        pts += step * s.gradients_at(pts);
        pts = pts.cwiseMax(0.0).cwiseMin(1.0);
    }
    const Eigen::VectorXd final_vals = s.values_at(pts);
    for (int c = 0; c < cfg.top_k; ++c) {
        if (!std::isfinite(final_vals(c)))
            throw Error(Error::Code::solver_divergence, "sample ascent produced non-finite value");
        if (final_vals(c) > best.value) best = {pts.row(c).transpose(), final_vals(c)};
    }
    return best;
}

using Oracle = std::function<double(const Eigen::VectorXd&)>;

struct ThompsonState {
    Dataset data;
    KernelSpec kernel;
    NoiseModel noise{1.0};
    SampleSolver solver = SampleSolver::exact;
    OptimiserConfig solver_cfg;  // used by the sdd / primal paths
    Eigen::VectorXd alpha_mean;
    double best_observed = -std::numeric_limits<double>::infinity();

    /// A non-positive configured step size means automatic: recomputed from
    /// the current data every round, because acquisition clusters queries
    /// and drives the top eigenvalue up as the run progresses.
    OptimiserConfig sized_cfg() const {
        OptimiserConfig cfg = solver_cfg;
        if (solver == SampleSolver::exact || cfg.step_size > 0.0) return cfg;
        const double lk = detail::estimated_top_eigenvalue(data.inputs, kernel);
        cfg.step_size = solver == SampleSolver::primal
                            ? 0.5 / (lk * (lk + noise.variance()))
                            : 0.5 / (lk + noise.variance());
        return cfg;
    }

    void refit(RngStream rng) {
        switch (solver) {
            case SampleSolver::exact:
                alpha_mean = fit_exact(data, kernel, noise).weights;
                break;
            case SampleSolver::sdd: {
                OptimiserConfig cfg = sized_cfg();
                cfg.rng = rng;
                alpha_mean = sdd_solve(make_row_source(kernel, data.inputs),
                                       Eigen::MatrixXd(data.targets), noise.precision, cfg)
                                 .averaged_vector();
                break;
            }
            case SampleSolver::primal: {
                OptimiserConfig cfg = sized_cfg();
                cfg.rng = rng;
                alpha_mean = primal_sgd_solve(kernel, data.inputs, Eigen::MatrixXd(data.targets),
                                              noise.precision, cfg)
                                 .averaged_vector();
                break;
            }
        }
        if (data.targets.size() > 0) best_observed = data.targets.maxCoeff();
    }
};

/// One acquisition round: draw batch-size posterior samples, maximise
/// each, query the oracle at the argmaxes, extend the dataset and refit.
inline void thompson_step(ThompsonState& state, const Oracle& oracle, const ThompsonConfig& cfg,
                          RngStream rng) {
    cfg.validate();
    const OptimiserConfig sample_cfg = state.sized_cfg();
    const auto samples =
        draw_posterior_samples(state.data, state.kernel, state.noise, state.alpha_mean,
                               cfg.batch_size, cfg.prior_feature_count, sample_cfg, state.solver,
                               rng.derive(0));
    Eigen::MatrixXd new_x(cfg.batch_size, state.data.dim());
    Eigen::VectorXd new_y(cfg.batch_size);
    RngStream ascent_rng = rng.derive(1);
    for (int j = 0; j < cfg.batch_size; ++j) {
        const auto res = maximise_sample(samples[static_cast<std::size_t>(j)], cfg,
                                         ascent_rng.derive(static_cast<std::uint64_t>(j)));
        new_x.row(j) = res.argmax.transpose();
        new_y(j) = oracle(res.argmax);
    }
    const Eigen::Index n_old = state.data.n();
    Eigen::MatrixXd X(n_old + cfg.batch_size, state.data.dim());
    Eigen::VectorXd Y(n_old + cfg.batch_size);
    X << state.data.inputs, new_x;
    Y << state.data.targets, new_y;
    state.data.inputs = std::move(X);
    state.data.targets = std::move(Y);
    state.refit(rng.derive(2));
}

/// End-to-end benchmark against a random-feature target function drawn
/// from the same prior. The target is evaluated with configurable
/// observation noise.
inline BayesOptTrace run_benchmark(const KernelSpec& spec, const NoiseModel& noise,
                                   Eigen::Index n_init, const ThompsonConfig& cfg,
                                   SampleSolver solver, const OptimiserConfig& solver_cfg,
                                   RngStream rng, int target_feature_count = 5000) {
    const Eigen::Index dim = spec.dim();
    // ground-truth function: a high-count feature draw, cheap to evaluate
    const FeatureMap target_fm = sample_features(spec, target_feature_count, rng.derive(10));
    Eigen::VectorXd target_w(target_feature_count);
    RngStream wr = rng.derive(11);
    for (int i = 0; i < target_feature_count; ++i) target_w(i) = wr.normal();
    const double noise_sd = std::sqrt(noise.variance());
    RngStream obs_rng = rng.derive(12);
    Oracle oracle = [&](const Eigen::VectorXd& x) {
        return feature_eval(target_fm, x).dot(target_w) + noise_sd * obs_rng.normal();
    };

    ThompsonState state;
    state.kernel = spec;
    state.noise = noise;
    state.solver = solver;
    state.solver_cfg = solver_cfg;
    state.data.inputs.resize(n_init, dim);
    state.data.targets.resize(n_init);
    RngStream init_rng = rng.derive(13);
    for (Eigen::Index i = 0; i < n_init; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) state.data.inputs(i, j) = init_rng.uniform();
        state.data.targets(i) = oracle(state.data.inputs.row(i).transpose());
    }
    state.refit(rng.derive(14));

    BayesOptTrace trace;
    trace.entries.push_back({0, n_init, state.best_observed, 0.0});
    for (int step = 1; step <= cfg.thompson_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        thompson_step(state, oracle, cfg, rng.derive(100 + static_cast<std::uint64_t>(step)));
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        trace.entries.push_back({step, state.data.n(), state.best_observed, secs});
    }
    return trace;
}

inline void export_bayesopt_trace(const std::string& path, const BayesOptTrace& trace) {
    std::ofstream out(path);
    out << "step,cumulative_queries,best_value,seconds\n";
    for (const auto& e : trace.entries)
        out << e.step << "," << e.cumulative_queries << "," << e.best_value << "," << e.seconds
            << "\n";
}

}  // namespace gpsdd
