#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gpsdd/experiment.hpp"

using namespace gpsdd;
namespace fs = std::filesystem;

namespace {
std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p.string();
}
}  // namespace

TEST_CASE("rmse on hand-computed values") {
    Eigen::VectorXd preds(3), targets(3);
    preds << 1.0, 2.0, 3.0;
    targets << 1.0, 4.0, 3.0;
    CHECK(metric_rmse(preds, targets) == Catch::Approx(2.0 / std::sqrt(3.0)));
    CHECK(metric_rmse(targets, targets) == 0.0);
    CHECK_THROWS_AS(metric_rmse(preds, Eigen::VectorXd::Zero(2)), Error);
}

TEST_CASE("nll on hand-computed values") {
    // zero residual at total predictive variance 1: exactly 0.5 log(2 pi)
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
    const Eigen::VectorXd half = Eigen::VectorXd::Constant(4, 0.5);
    CHECK(metric_nll(zero, half, zero, 2.0) == Catch::Approx(0.5 * std::log(2.0 * M_PI)));

    // one point, residual 2, total variance 2
    Eigen::VectorXd mean(1), var(1), y(1);
    mean << 0.0;
    var << 1.0;
    y << 2.0;
    CHECK(metric_nll(mean, var, y, 1.0) ==
          Catch::Approx(0.5 * std::log(4.0 * M_PI) + 1.0));

    // variance floor keeps degenerate inputs finite
    Eigen::VectorXd neg_var = Eigen::VectorXd::Constant(1, -5.0);
    CHECK(std::isfinite(metric_nll(mean, neg_var, y, 1.0)));
    CHECK_THROWS_AS(metric_nll(mean, var, Eigen::VectorXd::Zero(2), 1.0), Error);
}

TEST_CASE("evidence search recovers generating hyperparameters") {
    const auto true_spec = KernelSpec::isotropic(KernelFamily::RBF, 0.5, 1, 1.0);
    const double b_true = 25.0;
    RngStream rng(1);
    Dataset ds;
    const Eigen::Index n = 120;
    ds.inputs = Eigen::VectorXd::LinSpaced(n, -3.0, 3.0);
    // sample a function from the prior and add noise
    Eigen::MatrixXd K = gram(true_spec, ds.inputs);
    K.diagonal().array() += 1e-10;
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
    ds.targets = Eigen::LLT<Eigen::MatrixXd>(K).matrixL() * z;
    for (Eigen::Index i = 0; i < n; ++i) ds.targets(i) += rng.normal() / std::sqrt(b_true);

    const HyperparamFit fit = fit_hyperparams_evidence(ds, KernelFamily::RBF);
    CHECK(std::abs(std::log10(fit.kernel.lengthscales(0) / 0.5)) < 0.5);
    CHECK(std::abs(std::log10(fit.noise_precision / b_true)) < 0.7);
    CHECK(fit.kernel.variance > 0.1);
    CHECK(fit.kernel.variance < 10.0);

    // the fitted point beats nearby perturbations in evidence
    const double at_fit = evidence(ds, fit.kernel, NoiseModel(fit.noise_precision));
    KernelSpec wide = fit.kernel;
    wide.lengthscales *= 4.0;
    CHECK(at_fit >= evidence(ds, wide, NoiseModel(fit.noise_precision)));
}

TEST_CASE("centroid fitting is deterministic and reduces to the direct fit") {
    RngStream rng(2);
    Dataset small;
    small.inputs.resize(60, 1);
    small.targets.resize(60);
    for (Eigen::Index i = 0; i < 60; ++i) {
        small.inputs(i, 0) = rng.normal();
        small.targets(i) = std::sin(small.inputs(i, 0)) + 0.1 * rng.normal();
    }
    // n <= subset size: identical to the direct evidence fit
    const HyperparamFit direct = fit_hyperparams_evidence(small, KernelFamily::RBF);
    const HyperparamFit via_centroid =
        centroid_hyperparams(small, KernelFamily::RBF, 100, 3, RngStream(3));
    CHECK(via_centroid.kernel.lengthscales == direct.kernel.lengthscales);
    CHECK(via_centroid.noise_precision == direct.noise_precision);

    Dataset big;
    big.inputs.resize(400, 1);
    big.targets.resize(400);
    for (Eigen::Index i = 0; i < 400; ++i) {
        big.inputs(i, 0) = rng.normal();
        big.targets(i) = std::sin(big.inputs(i, 0)) + 0.1 * rng.normal();
    }
    const HyperparamFit a = centroid_hyperparams(big, KernelFamily::RBF, 150, 2, RngStream(4));
    const HyperparamFit b = centroid_hyperparams(big, KernelFamily::RBF, 150, 2, RngStream(4));
    CHECK(a.kernel.lengthscales == b.kernel.lengthscales);
    CHECK(a.noise_precision == b.noise_precision);
    // subset averaging lands near the direct fit on homogeneous data
    const HyperparamFit full = fit_hyperparams_evidence(big, KernelFamily::RBF);
    CHECK(std::abs(std::log10(a.kernel.lengthscales(0) / full.kernel.lengthscales(0))) < 0.5);
}

TEST_CASE("task and family parsing") {
    CHECK(parse_task("regression") == Task::regression);
    CHECK(parse_task("ct-design") == Task::ct_design);
    CHECK_THROWS_AS(parse_task("nonsense"), Error);
    CHECK(parse_family("matern32") == KernelFamily::Matern32);
    CHECK_THROWS_AS(parse_family("cubic"), Error);
}

TEST_CASE("config json round-trip and validation") {
    ExperimentConfig cfg;
    cfg.task = Task::em;
    cfg.kernel_family = "matern12";
    cfg.n = 123;
    cfg.seed = 77;
    cfg.ct_criterion = "eig";
    const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(back.task == Task::em);
    CHECK(back.kernel_family == "matern12");
    CHECK(back.n == 123);
    CHECK(back.seed == 77);
    CHECK(back.ct_criterion == "eig");

    nlohmann::json bad = cfg.to_json();
    bad["kernel_family"] = "quintic";
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad), Error);
    nlohmann::json bad_noise = cfg.to_json();
    bad_noise["noise_precision"] = -1.0;
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad_noise), Error);
}

TEST_CASE("regression experiment is reproducible byte for byte") {
    ExperimentConfig cfg;
    cfg.task = Task::regression;
    cfg.n = 200;
    cfg.solver = "exact";
    cfg.sample_count = 8;
    cfg.seed = 5;
    cfg.out_dir = temp_dir("gpsdd_reg_a");
    run_experiment(cfg);
    ExperimentConfig cfg2 = cfg;
    cfg2.out_dir = temp_dir("gpsdd_reg_b");
    run_experiment(cfg2);

    const std::string a = slurp(cfg.out_dir + "/summary.json");
    const std::string b = slurp(cfg2.out_dir + "/summary.json");
    REQUIRE_FALSE(a.empty());
    CHECK(a == b);

    const auto j = nlohmann::json::parse(a);
    CHECK(j.at("schema_version") == 1);
    CHECK(j.at("task") == "regression");
    CHECK(j.at("rmse").get<double>() < 1.0);
    CHECK(std::isfinite(j.at("nll").get<double>()));
    CHECK(fs::exists(cfg.out_dir + "/config.json"));
}

TEST_CASE("sampling diagnostics experiment reports solver accuracy") {
    ExperimentConfig cfg;
    cfg.task = Task::sampling_diagnostics;
    cfg.n = 300;
    cfg.solver = "sdd";
    cfg.steps = 4000;
    cfg.batch_size = 64;
    cfg.seed = 6;
    cfg.out_dir = temp_dir("gpsdd_diag");
    run_experiment(cfg);
    const auto j = nlohmann::json::parse(slurp(cfg.out_dir + "/summary.json"));
    CHECK(j.at("task") == "sampling-diagnostics");
    CHECK(j.at("mean_knorm_error").get<double>() < 0.1);
}

TEST_CASE("em experiment writes a history and a final precision") {
    ExperimentConfig cfg;
    cfg.task = Task::em;
    cfg.n = 150;
    cfg.solver = "exact";
    cfg.em_feature_count = 60;
    cfg.em_max_steps = 8;
    cfg.sample_count = 16;
    cfg.seed = 7;
    cfg.out_dir = temp_dir("gpsdd_em");
    run_experiment(cfg);
    const auto j = nlohmann::json::parse(slurp(cfg.out_dir + "/summary.json"));
    CHECK(j.at("task") == "em");
    CHECK(j.at("final_precision").get<double>() > 0.0);
    CHECK(j.at("steps_taken").get<int>() >= 1);
    CHECK(fs::exists(cfg.out_dir + "/em_history.csv"));
}

TEST_CASE("bayesopt experiment writes a trace") {
    ExperimentConfig cfg;
    cfg.task = Task::bayesopt;
    cfg.solver = "exact";
    cfg.lengthscale = 0.3;
    cfg.bo_n_init = 40;
    cfg.bo_batch = 5;
    cfg.bo_thompson_steps = 2;
    cfg.seed = 8;
    cfg.out_dir = temp_dir("gpsdd_bo");
    run_experiment(cfg);
    const auto j = nlohmann::json::parse(slurp(cfg.out_dir + "/summary.json"));
    CHECK(j.at("task") == "bayesopt");
    CHECK(std::isfinite(j.at("best_value").get<double>()));
    CHECK(fs::exists(cfg.out_dir + "/bayesopt_trace.csv"));
}

TEST_CASE("ct design experiment reconstructs the phantom") {
    ExperimentConfig cfg;
    cfg.task = Task::ct_design;
    cfg.ct_side = 16;
    cfg.ct_angles = 24;
    cfg.ct_total = 8;
    cfg.ct_samples = 48;
    cfg.ct_criterion = "ese";
    cfg.seed = 9;
    cfg.out_dir = temp_dir("gpsdd_ct");
    run_experiment(cfg);
    const auto j = nlohmann::json::parse(slurp(cfg.out_dir + "/summary.json"));
    CHECK(j.at("task") == "ct-design");
    CHECK(j.at("final_psnr").get<double>() > 5.0);
    CHECK(fs::exists(cfg.out_dir + "/phantom.csv"));
    CHECK(fs::exists(cfg.out_dir + "/reconstruction.csv"));
    CHECK(fs::exists(cfg.out_dir + "/design_trace.csv"));
}
