#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "gpsdd/core.hpp"
#include "gpsdd/kernels.hpp"
#include "gpsdd/sgd.hpp"

namespace gpsdd {

/// Gaussian linear model on an explicit feature map: targets Y = Phi w + noise,
/// noise precision B = b I, prior w ~ N(0, a^-1 I). Any g-prior structure is
/// absorbed into the feature scaling beforehand, leaving scalar a.
struct FeatureModel {
    Eigen::MatrixXd Phi;  // n x d
    double noise_precision = 1.0;
    double prior_precision = 1.0;

    Eigen::Index n() const { return Phi.rows(); }
    Eigen::Index d() const { return Phi.cols(); }

    Eigen::MatrixXd information() const {  // M = b Phi^T Phi
        return noise_precision * Phi.transpose() * Phi;
    }
    Eigen::MatrixXd hessian() const {  // H = M + a I
        Eigen::MatrixXd H = information();
        H.diagonal().array() += prior_precision;
        return H;
    }
};

inline constexpr double kScalingFloor = 1e-12;

/// Exact g-prior scaling s_i = [M]_ii^{-1/2}; scaled features have unit
/// information diagonal.
inline Eigen::VectorXd gprior_scaling_exact(const Eigen::MatrixXd& Phi, double b) {
    Eigen::VectorXd diag = b * Phi.colwise().squaredNorm();
    for (Eigen::Index i = 0; i < diag.size(); ++i)
        if (diag(i) < kScalingFloor) diag(i) = kScalingFloor;
    return diag.cwiseSqrt().cwiseInverse();
}

struct StochasticScaling {
    Eigen::VectorXd scaling;                       // s
    std::vector<Eigen::VectorXd> projected_noise;  // Phi^T B eps_j, reusable as data parts
};

/// Monte-Carlo scaling estimate from noise draws eps_j ~ N(0, B^-1):
/// s = (mean_j (Phi^T B eps_j)^2)^(-1/2). The projected noise vectors are
/// kept so EM can reuse them as regulariser data parts.
inline StochasticScaling gprior_scaling_stochastic(const Eigen::MatrixXd& Phi, double b, int k,
                                                   RngStream rng) {
    if (k < 1) throw Error(Error::Code::bad_argument, "scaling sample count must be >= 1");
    StochasticScaling out;
    Eigen::VectorXd mean_sq = Eigen::VectorXd::Zero(Phi.cols());
    const double noise_sd = 1.0 / std::sqrt(b);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd eps(Phi.rows());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = noise_sd * rng.normal();
        Eigen::VectorXd v = b * Phi.transpose() * eps;
        mean_sq += v.cwiseAbs2();
        out.projected_noise.push_back(std::move(v));
    }
    mean_sq /= static_cast<double>(k);
    for (Eigen::Index i = 0; i < mean_sq.size(); ++i)
        if (mean_sq(i) < kScalingFloor) mean_sq(i) = kScalingFloor;
    out.scaling = mean_sq.cwiseSqrt().cwiseInverse();
    return out;
}

/// Frozen randomness behind one sampling objective: prior part w0 ~ N(0, a^-1 I)
/// and data part a^-1 Phi^T B eps. The effective target is their sum.
struct RegulariserParts {
    Eigen::VectorXd prior_part;  // w0
    Eigen::VectorXd data_part;   // a^-1 Phi^T B eps

    Eigen::VectorXd target() const { return prior_part + data_part; }
};

/// Draws fresh parts at precision a given the projected noise Phi^T B eps.
inline RegulariserParts sample_objective_targets(double a, const Eigen::VectorXd& projected_noise,
                                                 RngStream rng) {
    if (!(a > 0.0)) throw Error(Error::Code::bad_argument, "prior precision must be positive");
    RegulariserParts parts;
    parts.prior_part.resize(projected_noise.size());
    const double sd = 1.0 / std::sqrt(a);
    for (Eigen::Index i = 0; i < parts.prior_part.size(); ++i)
        parts.prior_part(i) = sd * rng.normal();
    parts.data_part = projected_noise / a;
    return parts;
}

/// Precision change a_old -> a_new: the prior part is a N(0, a^-1 I) draw
/// (scales with a^-1/2), the data part carries an explicit a^-1.
inline RegulariserParts rescale_regulariser(const RegulariserParts& parts, double a_old,
                                            double a_new) {
    if (!(a_old > 0.0) || !(a_new > 0.0))
        throw Error(Error::Code::bad_argument, "precisions must be positive");
    RegulariserParts out;
    out.prior_part = parts.prior_part * std::sqrt(a_old / a_new);
    out.data_part = parts.data_part * (a_old / a_new);
    return out;
}

namespace detail {
/// Nesterov SGD on a weight-space quadratic; grad(w) must return the full
/// or minibatch gradient at the lookahead point.
inline Eigen::VectorXd sgd_weights(const std::function<Eigen::VectorXd(const Eigen::VectorXd&, RngStream&)>& grad,
                                   Eigen::VectorXd w, OptimiserConfig cfg) {
    const double rho = cfg.momentum;
    const double chi = cfg.chi();
    Eigen::VectorXd vel = Eigen::VectorXd::Zero(w.size());
    Eigen::VectorXd avg = w;
    for (int t = 1; t <= cfg.steps; ++t) {
        const Eigen::VectorXd g = grad(w + rho * vel, cfg.rng);
        vel = rho * vel - cfg.step_size * g;
        w += vel;
        check_divergence(w);
        switch (cfg.averaging) {
            case Averaging::geometric:
                avg = chi * w + (1.0 - chi) * avg;
                break;
            case Averaging::arithmetic:
                avg = ((static_cast<double>(t) - 1.0) * avg + w) / static_cast<double>(t);
                break;
            case Averaging::none:
                avg = w;
                break;
        }
    }
    return avg;
}
}  // namespace detail

/// Minimises the fit-free sampling objective
///   L'(w) = 1/2 ||Phi w||_B^2 + 1/2 ||w - target||_A^2,
/// whose minimiser H^-1 (Phi^T B eps + A w0) is a draw from N(0, H^-1).
inline Eigen::VectorXd solve_sample(const FeatureModel& model, const RegulariserParts& parts,
                                    const Eigen::VectorXd& warm_start, OptimiserConfig cfg) {
    cfg.validate(model.n());
    const Eigen::VectorXd target = parts.target();
    const double a = model.prior_precision;
    const double b = model.noise_precision;
    const double n = static_cast<double>(model.n());
    auto grad = [&](const Eigen::VectorXd& w, RngStream& rng) {
        Eigen::VectorXd g = a * (w - target);
        if (cfg.batch_size >= model.n()) {
            g += b * model.Phi.transpose() * (model.Phi * w);
        } else {
            const double scale = n / static_cast<double>(cfg.batch_size);
            for (int j = 0; j < cfg.batch_size; ++j) {
                const Eigen::Index i =
                    static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(model.n())));
                g += scale * b * model.Phi.row(i).dot(w) * model.Phi.row(i).transpose();
            }
        }
        return g;
    };
    Eigen::VectorXd w0 = warm_start.size() == model.d() ? warm_start
                                                        : Eigen::VectorXd::Zero(model.d());
    return detail::sgd_weights(grad, std::move(w0), cfg);
}

/// Minimises the ridge objective 1/2 ||Y - Phi w||_B^2 + 1/2 ||w||_A^2.
inline Eigen::VectorXd solve_mode(const FeatureModel& model, const Eigen::VectorXd& Y,
                                  const Eigen::VectorXd& warm_start, OptimiserConfig cfg) {
    cfg.validate(model.n());
    const double a = model.prior_precision;
    const double b = model.noise_precision;
    const double n = static_cast<double>(model.n());
    auto grad = [&](const Eigen::VectorXd& w, RngStream& rng) {
        Eigen::VectorXd g = a * w;
        if (cfg.batch_size >= model.n()) {
            g += b * model.Phi.transpose() * (model.Phi * w - Y);
        } else {
            const double scale = n / static_cast<double>(cfg.batch_size);
            for (int j = 0; j < cfg.batch_size; ++j) {
                const Eigen::Index i =
                    static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(model.n())));
                g += scale * b * (model.Phi.row(i).dot(w) - Y(i)) * model.Phi.row(i).transpose();
            }
        }
        return g;
    };
    Eigen::VectorXd w0 = warm_start.size() == model.d() ? warm_start
                                                        : Eigen::VectorXd::Zero(model.d());
    return detail::sgd_weights(grad, std::move(w0), cfg);
}

inline Eigen::VectorXd solve_sample_dense(const FeatureModel& model, const RegulariserParts& parts) {
    const Eigen::VectorXd rhs =
        model.prior_precision * parts.data_part + model.prior_precision * parts.prior_part;
    return model.hessian().llt().solve(rhs);
}

inline Eigen::VectorXd solve_mode_dense(const FeatureModel& model, const Eigen::VectorXd& Y) {
    return model.hessian().llt().solve(model.noise_precision * model.Phi.transpose() * Y);
}

/// Max abs deviation between the full-batch gradients of the direct
/// sampling loss L (data E, prior anchor w0) and the fit-free loss L'
/// sharing the same (E, w0). Identically zero in exact arithmetic.
inline double gradient_identity_check(const FeatureModel& model, const Eigen::VectorXd& eps,
                                      const Eigen::VectorXd& w0,
                                      const std::vector<Eigen::VectorXd>& probes) {
    const double a = model.prior_precision;
    const double b = model.noise_precision;
    const Eigen::VectorXd projected = b * model.Phi.transpose() * eps;
    const Eigen::VectorXd target = w0 + projected / a;
    double worst = 0.0;
    for (const auto& w : probes) {
        const Eigen::VectorXd gL =
            b * model.Phi.transpose() * (model.Phi * w - eps) + a * (w - w0);
        const Eigen::VectorXd gLp = b * model.Phi.transpose() * (model.Phi * w) + a * (w - target);
        worst = std::max(worst, (gL - gLp).cwiseAbs().maxCoeff());
    }
    return worst;
}

/// gamma-hat = (1/k) sum_j ||Phi zeta_j||_B^2, the kernelised estimator.
inline double effective_dimension_sampled(const std::vector<Eigen::VectorXd>& samples,
                                          const Eigen::MatrixXd& Phi, double b) {
    if (samples.empty()) throw Error(Error::Code::bad_argument, "need >= 1 sample");
    double acc = 0.0;
    for (const auto& z : samples) acc += b * (Phi * z).squaredNorm();
    return acc / static_cast<double>(samples.size());
}

/// gamma-hat = d - (1/k) sum_j a zeta_j^T zeta_j; can go negative at small k.
inline double effective_dimension_weightspace(const std::vector<Eigen::VectorXd>& samples,
                                              double a, Eigen::Index d) {
    if (samples.empty()) throw Error(Error::Code::bad_argument, "need >= 1 sample");
    double acc = 0.0;
    for (const auto& z : samples) acc += a * z.squaredNorm();
    return static_cast<double>(d) - acc / static_cast<double>(samples.size());
}

inline constexpr double kPrecisionMin = 1e-8;
inline constexpr double kPrecisionMax = 1e12;

/// Fixed-point precision step a <- gamma / ||w*||^2, clamped.
inline double mackay_update(double gamma_hat, const Eigen::VectorXd& w_mode,
                            double a_min = kPrecisionMin, double a_max = kPrecisionMax) {
    const double nrm2 = w_mode.squaredNorm();
    if (nrm2 == 0.0) return a_max;
    const double a = gamma_hat / nrm2;
    return std::min(std::max(a, a_min), a_max);
}

/// Blockwise variant: one precision per feature block. Off by default in
/// the EM driver; exposed for experimentation.
inline Eigen::VectorXd mackay_update_blockwise(const Eigen::VectorXd& gamma_blocks,
                                               const std::vector<Eigen::VectorXd>& w_blocks) {
    if (static_cast<std::size_t>(gamma_blocks.size()) != w_blocks.size())
        throw Error(Error::Code::dimension_mismatch, "blockwise update: block count mismatch");
    Eigen::VectorXd a(gamma_blocks.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        a(i) = mackay_update(gamma_blocks(i), w_blocks[static_cast<std::size_t>(i)]);
    return a;
}

struct EMHistoryEntry {
    int step;
    double precision;
    double gamma_hat;
    double mode_norm_sq;
};

struct EMState {
    double precision = 1.0;
    Eigen::VectorXd mode;
    std::vector<Eigen::VectorXd> samples;
    std::vector<RegulariserParts> parts;  // frozen (eps, w0), rescaled in place
    int steps_taken = 0;
    std::vector<EMHistoryEntry> history;
};

struct EMConfig {
    int sample_count = 16;
    int max_steps = 10;
    double tol = 1e-2;
    bool exact_inner_solves = false;  // dense solves instead of SGD
    OptimiserConfig optimiser;
};

/// EM loop: solve the mode and k sampling objectives (warm-started, with
/// frozen noise/prior draws rescaled analytically between steps), estimate
/// the effective dimension from the samples, and apply the fixed-point
/// precision update until relative change falls below tol.
inline EMState run_em(FeatureModel model, const Eigen::VectorXd& Y, const EMConfig& cfg,
                      RngStream rng) {
    EMState state;
    state.precision = model.prior_precision;
    state.mode = Eigen::VectorXd::Zero(model.d());

    // frozen randomness: projected noise and prior anchors, drawn once
    RngStream noise_rng = rng.derive(0);
    std::vector<Eigen::VectorXd> projected;
    const double noise_sd = 1.0 / std::sqrt(model.noise_precision);
    for (int j = 0; j < cfg.sample_count; ++j) {
        Eigen::VectorXd eps(model.n());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = noise_sd * noise_rng.normal();
        projected.push_back(model.noise_precision * model.Phi.transpose() * eps);
    }
    RngStream prior_rng = rng.derive(1);
    for (int j = 0; j < cfg.sample_count; ++j)
        state.parts.push_back(
            sample_objective_targets(state.precision, projected[static_cast<std::size_t>(j)],
                                     prior_rng.derive(static_cast<std::uint64_t>(j))));
    state.samples.assign(static_cast<std::size_t>(cfg.sample_count), Eigen::VectorXd());

    for (int step = 1; step <= cfg.max_steps; ++step) {
        model.prior_precision = state.precision;
        OptimiserConfig inner = cfg.optimiser;
        inner.rng = rng.derive(1000 + static_cast<std::uint64_t>(step));

        if (cfg.exact_inner_solves)
            state.mode = solve_mode_dense(model, Y);
        else
            state.mode = solve_mode(model, Y, step == 1 ? Eigen::VectorXd() : state.mode, inner);

        for (int j = 0; j < cfg.sample_count; ++j) {
            auto& zeta = state.samples[static_cast<std::size_t>(j)];
            const auto& parts = state.parts[static_cast<std::size_t>(j)];
            if (cfg.exact_inner_solves) {
                zeta = solve_sample_dense(model, parts);
            } else {
                OptimiserConfig sc = inner;
                sc.rng = inner.rng.derive(static_cast<std::uint64_t>(j));
                const Eigen::VectorXd warm = step == 1 ? parts.prior_part : zeta;
                zeta = solve_sample(model, parts, warm, sc);
            }
        }

        const double gamma =
            effective_dimension_sampled(state.samples, model.Phi, model.noise_precision);
        const double a_new = mackay_update(gamma, state.mode);
        state.history.push_back({step, a_new, gamma, state.mode.squaredNorm()});
        const double rel = std::abs(a_new - state.precision) / state.precision;
        for (auto& parts : state.parts) parts = rescale_regulariser(parts, state.precision, a_new);
        state.precision = a_new;
        state.steps_taken = step;
        if (rel < cfg.tol) break;
    }
    return state;
}

enum class SampleStatistic { mean, variance };

/// Statistic of the sample-based predictive {mean(x) + phi(x) . zeta_j}.
inline double predict_with_samples(double mean_value, const Eigen::VectorXd& phi_x,
                                   const std::vector<Eigen::VectorXd>& samples,
                                   SampleStatistic stat) {
    if (samples.empty()) throw Error(Error::Code::bad_argument, "need >= 1 sample");
    std::vector<double> vals;
    vals.reserve(samples.size());
    for (const auto& z : samples) vals.push_back(mean_value + phi_x.dot(z));
    const double k = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= k;
    if (stat == SampleStatistic::mean) return mean;
    if (samples.size() < 2)
        throw Error(Error::Code::bad_argument, "variance needs >= 2 samples");
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return var / (k - 1.0);
}

inline void export_em_history(const std::string& path, const std::vector<EMHistoryEntry>& hist) {
    std::ofstream out(path);
    out << "step,precision,effective_dimension,mode_norm_sq\n";
    for (const auto& h : hist)
        out << h.step << "," << h.precision << "," << h.gamma_hat << "," << h.mode_norm_sq << "\n";
}

}  // namespace gpsdd
