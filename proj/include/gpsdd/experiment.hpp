#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "gpsdd/bayesopt.hpp"
#include "gpsdd/core.hpp"
#include "gpsdd/ct.hpp"
#include "gpsdd/em.hpp"
#include "gpsdd/exact_gp.hpp"
#include "gpsdd/inducing.hpp"
#include "gpsdd/kernels.hpp"
#include "gpsdd/metrics.hpp"
#include "gpsdd/sgd.hpp"

namespace gpsdd {

enum class Task { regression, sampling_diagnostics, em, bayesopt, ct_design };

inline Task parse_task(const std::string& name) {
    if (name == "regression") return Task::regression;
    if (name == "sampling-diagnostics") return Task::sampling_diagnostics;
    if (name == "em") return Task::em;
    if (name == "bayesopt") return Task::bayesopt;
    if (name == "ct-design") return Task::ct_design;
    throw Error(Error::Code::bad_argument, "unknown task '" + name + "'");
}

inline KernelFamily parse_family(const std::string& name) {
    if (name == "rbf") return KernelFamily::RBF;
    if (name == "matern12") return KernelFamily::Matern12;
    if (name == "matern32") return KernelFamily::Matern32;
    throw Error(Error::Code::bad_argument, "unknown kernel family '" + name + "'");
}

struct ExperimentConfig {
    Task task = Task::regression;
    std::string dataset_path;   // empty means synthetic
    std::string target_column = "y";
    std::string synthetic = "sine";  // sine | infill
    Eigen::Index n = 2000;
    Eigen::Index dim = 1;
    std::string kernel_family = "rbf";
    double lengthscale = 0.5;
    double variance = 1.0;
    double noise_precision = 4.0;
    std::string solver = "sdd";  // sdd | primal | exact
    int steps = 20000;
    double step_size_times_n = 0.0;  // <= 0: automatic (1 / top-eigenvalue estimate)
    int batch_size = 512;
    int sample_count = 64;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    // em
    int em_feature_count = 400;
    int em_max_steps = 10;
    // bayesopt
    int bo_thompson_steps = 10;
    int bo_batch = 100;
    Eigen::Index bo_n_init = 1000;
    // ct
    Eigen::Index ct_side = 64;
    Eigen::Index ct_angles = 200;
    std::size_t ct_total = 15;
    int ct_samples = 256;
    std::string ct_criterion = "ese";  // eig | ese | random
    std::string ct_prior = "matern";   // matern | isotropic
    double ct_noise_fraction = 0.05;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
};

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    const char* task_names[] = {"regression", "sampling-diagnostics", "em", "bayesopt",
                                "ct-design"};
    j["task"] = task_names[static_cast<int>(task)];
    j["dataset_path"] = dataset_path;
    j["target_column"] = target_column;
    j["synthetic"] = synthetic;
    j["n"] = n;
    j["dim"] = dim;
    j["kernel_family"] = kernel_family;
    j["lengthscale"] = lengthscale;
    j["variance"] = variance;
    j["noise_precision"] = noise_precision;
    j["solver"] = solver;
    j["steps"] = steps;
    j["step_size_times_n"] = step_size_times_n;
    j["batch_size"] = batch_size;
    j["sample_count"] = sample_count;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["em_feature_count"] = em_feature_count;
    j["em_max_steps"] = em_max_steps;
    j["bo_thompson_steps"] = bo_thompson_steps;
    j["bo_batch"] = bo_batch;
    j["bo_n_init"] = bo_n_init;
    j["ct_side"] = ct_side;
    j["ct_angles"] = ct_angles;
    j["ct_total"] = ct_total;
    j["ct_samples"] = ct_samples;
    j["ct_criterion"] = ct_criterion;
    j["ct_prior"] = ct_prior;
    j["ct_noise_fraction"] = ct_noise_fraction;
    return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("dataset_path", c.dataset_path);
    get("target_column", c.target_column);
    get("synthetic", c.synthetic);
    get("n", c.n);
    get("dim", c.dim);
    get("kernel_family", c.kernel_family);
    get("lengthscale", c.lengthscale);
    get("variance", c.variance);
    get("noise_precision", c.noise_precision);
    get("solver", c.solver);
    get("steps", c.steps);
    get("step_size_times_n", c.step_size_times_n);
    get("batch_size", c.batch_size);
    get("sample_count", c.sample_count);
    get("seed", c.seed);
    get("out_dir", c.out_dir);
    get("em_feature_count", c.em_feature_count);
    get("em_max_steps", c.em_max_steps);
    get("bo_thompson_steps", c.bo_thompson_steps);
    get("bo_batch", c.bo_batch);
    get("bo_n_init", c.bo_n_init);
    get("ct_side", c.ct_side);
    get("ct_angles", c.ct_angles);
    get("ct_total", c.ct_total);
    get("ct_samples", c.ct_samples);
    get("ct_criterion", c.ct_criterion);
    get("ct_prior", c.ct_prior);
    get("ct_noise_fraction", c.ct_noise_fraction);
    parse_family(c.kernel_family);  // validate before any compute
    if (!(c.noise_precision > 0.0))
        throw Error(Error::Code::bad_argument, "noise precision must be positive");
    return c;
}

namespace detail {
inline Dataset make_synthetic(const ExperimentConfig& cfg, RngStream rng) {
    Dataset ds;
    ds.inputs.resize(cfg.n, 1);
    ds.targets.resize(cfg.n);
    const double noise_sd = 0.5;
    for (Eigen::Index i = 0; i < cfg.n; ++i) {
        double x;
        if (cfg.synthetic == "infill")
            x = rng.normal();
        else  // evenly spaced over a wide interval
            x = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(cfg.n - 1);
        ds.inputs(i, 0) = x;
        ds.targets(i) = std::sin(2.0 * x) + std::cos(5.0 * x) + noise_sd * rng.normal();
    }
    return ds;
}

inline double dual_step_size(const ExperimentConfig& cfg, const Eigen::MatrixXd& inputs,
                             const KernelSpec& spec, const NoiseModel& noise) {
    if (cfg.step_size_times_n > 0.0)
        return cfg.step_size_times_n / static_cast<double>(inputs.rows());
    return 1.0 / (estimated_top_eigenvalue(inputs, spec) + noise.variance());
}

inline double primal_step_size(const ExperimentConfig& cfg, const Eigen::MatrixXd& inputs,
                               const KernelSpec& spec, const NoiseModel& noise) {
    if (cfg.step_size_times_n > 0.0)
        return cfg.step_size_times_n / static_cast<double>(inputs.rows());
    const double lk = estimated_top_eigenvalue(inputs, spec);
    return 1.0 / (lk * (lk + noise.variance()));
}

inline Eigen::VectorXd solve_mean_weights(const Dataset& ds, const KernelSpec& spec,
                                          const NoiseModel& noise, const ExperimentConfig& cfg,
                                          RngStream rng) {
    if (cfg.solver == "exact") return fit_exact(ds, spec, noise).weights;
    OptimiserConfig oc;
    oc.step_size = cfg.solver == "primal" ? primal_step_size(cfg, ds.inputs, spec, noise)
                                          : dual_step_size(cfg, ds.inputs, spec, noise);
    oc.steps = cfg.steps;
    oc.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(ds.n()));
    oc.rng = rng;
    if (cfg.solver == "primal")
        return primal_sgd_solve(spec, ds.inputs, Eigen::MatrixXd(ds.targets), noise.precision, oc)
            .averaged_vector();
    return sdd_solve(RowSource::from_kernel(spec, ds.inputs), ds.targets, noise.precision, oc)
        .averaged_vector();
}
}  // namespace detail

/// Runs one experiment into cfg.out_dir: config snapshot, CSV traces, and
/// a summary.json with final metrics. Deterministic given the seed.
inline std::string run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream snap(cfg.out_dir + "/config.json");
        snap << cfg.to_json().dump(2) << "\n";
    }
    RngStream rng(cfg.seed);
    nlohmann::json summary;
    summary["schema_version"] = 1;
    summary["seed"] = cfg.seed;

    const KernelFamily family = parse_family(cfg.kernel_family);
    const KernelSpec spec = KernelSpec::isotropic(family, cfg.lengthscale, cfg.dim, cfg.variance);
    const NoiseModel noise(cfg.noise_precision);

    switch (cfg.task) {
        case Task::regression: {
            summary["task"] = "regression";
            Dataset full = cfg.dataset_path.empty()
                               ? detail::make_synthetic(cfg, rng.derive(0))
                               : load_csv(cfg.dataset_path, cfg.target_column);
            auto [train, test] = split(full, SplitSpec{}, rng.derive(1));
            const Eigen::VectorXd alpha =
                detail::solve_mean_weights(train, spec, noise, cfg, rng.derive(2));
            const Eigen::VectorXd preds = gram(spec, test.inputs, train.inputs) * alpha;
            const double rmse = metric_rmse(preds, test.targets);
            OptimiserConfig oc;
            oc.step_size = detail::dual_step_size(cfg, train.inputs, spec, noise);
            oc.steps = cfg.steps;
            oc.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(train.n()));
            const auto samples = draw_posterior_samples(
                train, spec, noise, alpha, cfg.sample_count, 2000, oc,
                cfg.solver == "exact" ? SampleSolver::exact : SampleSolver::sdd, rng.derive(3));
            Eigen::VectorXd vars(test.n());
            for (Eigen::Index i = 0; i < test.n(); ++i) {
                double mean = 0.0, m2 = 0.0;
                std::vector<double> vals;
                for (const auto& s : samples) vals.push_back(s.value_at(test.inputs.row(i).transpose()));
                for (double v : vals) mean += v;
                mean /= static_cast<double>(vals.size());
                for (double v : vals) m2 += (v - mean) * (v - mean);
                vars(i) = m2 / static_cast<double>(vals.size() - 1);
            }
            summary["rmse"] = rmse;
            summary["nll"] = metric_nll(preds, vars, test.targets, noise.precision);
            break;
        }
        case Task::sampling_diagnostics: {
            summary["task"] = "sampling-diagnostics";
            Dataset ds = detail::make_synthetic(cfg, rng.derive(0));
            const ExactPosterior post = fit_exact(ds, spec, noise);
            const Eigen::VectorXd alpha = detail::solve_mean_weights(ds, spec, noise, cfg, rng.derive(2));
            const Eigen::MatrixXd K = gram(spec, ds.inputs);
            summary["mean_knorm_error"] =
                rkhs_norm(alpha - post.weights, K) / rkhs_norm(post.weights, K);
            break;
        }
        case Task::em: {
            summary["task"] = "em";
            Dataset ds = detail::make_synthetic(cfg, rng.derive(0));
            const FeatureMap fm = sample_features(spec, cfg.em_feature_count, rng.derive(1));
            FeatureModel model{feature_matrix(fm, ds.inputs), noise.precision, 1.0};
            EMConfig ec;
            ec.max_steps = cfg.em_max_steps;
            ec.sample_count = cfg.sample_count;
            ec.exact_inner_solves = cfg.solver == "exact";
            if (cfg.step_size_times_n > 0.0) {
                ec.optimiser.step_size = cfg.step_size_times_n / static_cast<double>(ds.n());
            } else {
                // power iteration on the information matrix b Phi^T Phi
                const Eigen::MatrixXd M = model.information();
                RngStream pr(0x5eed5eedULL);
                Eigen::VectorXd v(M.rows());
                for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = pr.normal();
                v.normalize();
                double lambda = 1.0;
                for (int t = 0; t < 30; ++t) {
                    const Eigen::VectorXd w = M * v;
                    lambda = w.norm();
                    if (lambda == 0.0) break;
                    v = w / lambda;
                }
                ec.optimiser.step_size = 1.0 / (lambda + model.prior_precision);
            }
            ec.optimiser.steps = cfg.steps;
            ec.optimiser.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(ds.n()));
            const EMState st = run_em(model, ds.targets, ec, rng.derive(2));
            export_em_history(cfg.out_dir + "/em_history.csv", st.history);
            summary["final_precision"] = st.precision;
            summary["steps_taken"] = st.steps_taken;
            break;
        }
        case Task::bayesopt: {
            summary["task"] = "bayesopt";
            ThompsonConfig tc;
            tc.batch_size = cfg.bo_batch;
            tc.thompson_steps = cfg.bo_thompson_steps;
            OptimiserConfig oc;
            if (cfg.step_size_times_n > 0.0) {
                oc.step_size = cfg.step_size_times_n / static_cast<double>(cfg.bo_n_init);
            } else {
                // representative uniform design; halve for query clustering
                RngStream pr(0x5eed5eedULL);
                Eigen::MatrixXd X0(cfg.bo_n_init, cfg.dim);
                for (Eigen::Index i = 0; i < X0.size(); ++i) X0(i) = pr.uniform();
                oc.step_size =
                    0.5 / (detail::estimated_top_eigenvalue(X0, spec) + noise.variance());
            }
            oc.steps = cfg.steps;
            oc.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(cfg.bo_n_init));
            const SampleSolver solver = cfg.solver == "exact"
                                            ? SampleSolver::exact
                                            : (cfg.solver == "primal" ? SampleSolver::primal
                                                                      : SampleSolver::sdd);
            const BayesOptTrace trace =
                run_benchmark(spec, noise, cfg.bo_n_init, tc, solver, oc, rng.derive(0));
            export_bayesopt_trace(cfg.out_dir + "/bayesopt_trace.csv", trace);
            summary["best_value"] = trace.entries.back().best_value;
            break;
        }
        case Task::ct_design: {
            summary["task"] = "ct-design";
            const Eigen::Index side = cfg.ct_side;
            std::vector<double> angles(static_cast<std::size_t>(cfg.ct_angles));
            for (std::size_t i = 0; i < angles.size(); ++i)
                angles[i] = 180.0 * static_cast<double>(i) / static_cast<double>(cfg.ct_angles);
            const RadonOperator radon = build_radon(side, side, side, angles);
            const Eigen::VectorXd phantom = generate_phantom(side, rng.derive(0));
            export_image_csv(cfg.out_dir + "/phantom.csv", phantom, side);

            std::vector<std::size_t> pilot;
            for (int i = 0; i < 5; ++i)
                pilot.push_back(static_cast<std::size_t>(i) * angles.size() / 5);
            Eigen::VectorXd pilot_y(static_cast<Eigen::Index>(pilot.size()) * side);
            const double clean_mean = radon.apply(phantom).cwiseAbs().mean();
            const double noise_sd = cfg.ct_noise_fraction * clean_mean;
            RngStream meas_rng = rng.derive(1);
            for (std::size_t i = 0; i < pilot.size(); ++i) {
                Eigen::VectorXd y = radon.blocks[pilot[i]] * phantom;
                for (Eigen::Index k = 0; k < y.size(); ++k) y(k) += noise_sd * meas_rng.normal();
                pilot_y.segment(static_cast<Eigen::Index>(i) * side, side) = y;
            }
            const double b = 1.0 / (noise_sd * noise_sd);

            ImagePrior prior = cfg.ct_prior == "isotropic" ? make_isotropic_prior(side)
                                                           : make_matern_prior(side, 10.0);
            DesignState st = init_design(radon, prior, pilot, pilot_y, b);
            const DesignCriterion crit = cfg.ct_criterion == "eig"
                                             ? DesignCriterion::eig
                                             : (cfg.ct_criterion == "random"
                                                    ? DesignCriterion::random
                                                    : DesignCriterion::ese);
            const GreedyDesignResult res = greedy_design(std::move(st), prior, crit, cfg.ct_total,
                                                         cfg.ct_samples, rng.derive(2), phantom,
                                                         noise_sd);
            export_design_trace(cfg.out_dir + "/design_trace.csv", res.trace);
            const Eigen::VectorXd recon = posterior_mean_image(res.state, prior);
            export_image_csv(cfg.out_dir + "/reconstruction.csv", recon, side);
            summary["final_psnr"] = psnr(recon, phantom);
            break;
        }
    }
    std::ofstream out(cfg.out_dir + "/summary.json");
    out << summary.dump(2) << "\n";
    return cfg.out_dir;
}

}  // namespace gpsdd
