#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <vector>

#include "gpsdd/core.hpp"
#include "gpsdd/exact_gp.hpp"
#include "gpsdd/linalg.hpp"
#include "gpsdd/rng.hpp"

namespace gpsdd {

/// Discrete parallel-beam Radon transform. Pixel (row, col) of a side x side
/// image flattens to row * side + col; each operator row holds Siddon
/// intersection lengths of one detector ray, so a row sum equals the ray's
/// chord length through the image square.
struct RadonOperator {
    Eigen::Index side = 0;
    Eigen::Index detector_pixels = 0;
    std::vector<double> angles_deg;
    std::vector<Eigen::SparseMatrix<double, Eigen::RowMajor>> blocks;  // one per angle

    Eigen::Index pixel_count() const { return side * side; }
    Eigen::Index measurement_count() const {
        return detector_pixels * static_cast<Eigen::Index>(angles_deg.size());
    }

    Eigen::VectorXd apply_block(std::size_t angle_idx, const Eigen::VectorXd& image) const {
        return blocks[angle_idx] * image;
    }
    Eigen::VectorXd apply(const Eigen::VectorXd& image) const {
        Eigen::VectorXd y(measurement_count());
        for (std::size_t a = 0; a < blocks.size(); ++a)
            y.segment(static_cast<Eigen::Index>(a) * detector_pixels, detector_pixels) =
                blocks[a] * image;
        return y;
    }
    Eigen::VectorXd apply_adjoint(const Eigen::VectorXd& y) const {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(pixel_count());
        for (std::size_t a = 0; a < blocks.size(); ++a)
            x += blocks[a].transpose() *
                 y.segment(static_cast<Eigen::Index>(a) * detector_pixels, detector_pixels);
        return x;
    }
};

namespace detail {
/// Siddon trace of one ray through the [0, side]^2 pixel grid. Entries are
/// (flat pixel index, intersection length).
inline std::vector<std::pair<Eigen::Index, double>> trace_ray(Eigen::Index side, double p0x,
                                                              double p0y, double ux, double uy) {
    const double s = static_cast<double>(side);
    // slab intersection of the ray with the image square
    double s_enter = -std::numeric_limits<double>::infinity();
    double s_exit = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 2; ++axis) {
        const double p = axis == 0 ? p0x : p0y;
        const double u = axis == 0 ? ux : uy;
        if (std::abs(u) < 1e-14) {
            if (p < 0.0 || p > s) return {};
        } else {
            double lo = (0.0 - p) / u, hi = (s - p) / u;
            if (lo > hi) std::swap(lo, hi);
            s_enter = std::max(s_enter, lo);
            s_exit = std::min(s_exit, hi);
        }
    }
    if (s_enter >= s_exit) return {};

    std::vector<double> alphas{s_enter, s_exit};
    if (std::abs(ux) > 1e-14)
        for (Eigen::Index i = 0; i <= side; ++i) {
            const double a = (static_cast<double>(i) - p0x) / ux;
            if (a > s_enter && a < s_exit) alphas.push_back(a);
        }
    if (std::abs(uy) > 1e-14)
        for (Eigen::Index i = 0; i <= side; ++i) {
            const double a = (static_cast<double>(i) - p0y) / uy;
            if (a > s_enter && a < s_exit) alphas.push_back(a);
        }
    std::sort(alphas.begin(), alphas.end());

    std::vector<std::pair<Eigen::Index, double>> out;
    for (std::size_t k = 0; k + 1 < alphas.size(); ++k) {
        const double len = alphas[k + 1] - alphas[k];
        if (len < 1e-12) continue;
        const double mid = 0.5 * (alphas[k] + alphas[k + 1]);
        const double mx = p0x + mid * ux;
        const double my = p0y + mid * uy;
        const auto col = static_cast<Eigen::Index>(std::floor(mx));
        const auto row = static_cast<Eigen::Index>(std::floor(my));
        if (col < 0 || col >= side || row < 0 || row >= side) continue;
        out.emplace_back(row * side + col, len);
    }
    return out;
}
}  // namespace detail

/// At angle 0 rays travel along +y (columns integrate vertically); the
/// detector axis rotates counter-clockwise with the angle.
inline RadonOperator build_radon(Eigen::Index h, Eigen::Index w, Eigen::Index d_p,
                                 std::vector<double> angles_deg) {
    if (h != w) throw Error(Error::Code::bad_argument, "only square images are supported");
    if (d_p < 1) throw Error(Error::Code::bad_argument, "detector needs >= 1 pixel");
    RadonOperator op;
    op.side = h;
    op.detector_pixels = d_p;
    op.angles_deg = std::move(angles_deg);
    const double s = static_cast<double>(h);
    const double cx = s / 2.0, cy = s / 2.0;
    const double spacing = s / static_cast<double>(d_p);
    for (double deg : op.angles_deg) {
        const double th = deg * M_PI / 180.0;
        const double ux = -std::sin(th), uy = std::cos(th);  // ray direction
        const double vx = std::cos(th), vy = std::sin(th);   // detector axis
        Eigen::SparseMatrix<double, Eigen::RowMajor> block(d_p, h * w);
        std::vector<Eigen::Triplet<double>> trip;
        for (Eigen::Index k = 0; k < d_p; ++k) {
            const double t = (static_cast<double>(k) + 0.5) * spacing - s / 2.0;
            const double p0x = cx + t * vx - 2.0 * s * ux;
            const double p0y = cy + t * vy - 2.0 * s * uy;
            for (const auto& [pix, len] : detail::trace_ray(h, p0x, p0y, ux, uy))
                trip.emplace_back(static_cast<int>(k), static_cast<int>(pix), len);
        }
        block.setFromTriplets(trip.begin(), trip.end());
        op.blocks.push_back(std::move(block));
    }
    return op;
}

/// y = T x + eps with eps sd equal to fraction * mean |T x|.
inline Eigen::VectorXd simulate_measurements(const RadonOperator& op, const Eigen::VectorXd& image,
                                             double noise_fraction, RngStream rng) {
    Eigen::VectorXd y = op.apply(image);
    if (noise_fraction > 0.0) {
        const double sd = noise_fraction * y.cwiseAbs().mean();
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += sd * rng.normal();
    }
    return y;
}

enum class PriorKind { isotropic, pixel_matern12 };

inline constexpr Eigen::Index kImagePriorDenseCap = 4096;

/// Gaussian image prior: identity covariance, or the exponential pixel
/// covariance exp(-dist/psi) on the pixel grid. The Matern variant is
/// dense-only and capped at 4096 pixels (64 x 64).
struct ImagePrior {
    PriorKind kind = PriorKind::isotropic;
    Eigen::Index side = 0;
    double lengthscale = 1.0;
    Eigen::MatrixXd K;                // empty for isotropic
    Eigen::LLT<Eigen::MatrixXd> llt;  // factor of K, for sampling

    Eigen::Index pixel_count() const { return side * side; }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        return kind == PriorKind::isotropic ? v : Eigen::VectorXd(K * v);
    }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& V) const {
        return kind == PriorKind::isotropic ? V : Eigen::MatrixXd(K * V);
    }
    Eigen::VectorXd sample(RngStream& rng) const {
        Eigen::VectorXd z(pixel_count());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
        if (kind == PriorKind::isotropic) return z;
        return llt.matrixL() * z;
    }
};

inline ImagePrior make_isotropic_prior(Eigen::Index side) {
    ImagePrior p;
    p.side = side;
    return p;
}

inline Eigen::MatrixXd pixel_matern_covariance(Eigen::Index side, double psi) {
    const Eigen::Index npix = side * side;
    Eigen::MatrixXd K(npix, npix);
    for (Eigen::Index a = 0; a < npix; ++a) {
        const double ra = static_cast<double>(a / side), ca = static_cast<double>(a % side);
        for (Eigen::Index b = a; b < npix; ++b) {
            const double rb = static_cast<double>(b / side), cb = static_cast<double>(b % side);
            const double dist = std::hypot(ra - rb, ca - cb);
            K(a, b) = K(b, a) = std::exp(-dist / psi);
        }
    }
    return K;
}

inline ImagePrior make_matern_prior(Eigen::Index side, double psi) {
    if (side * side > kImagePriorDenseCap)
        throw Error(Error::Code::unsupported,
                    "pixel covariance prior is dense-only and capped at 64 x 64");
    if (!(psi > 0.0)) throw Error(Error::Code::bad_argument, "prior lengthscale must be positive");
    ImagePrior p;
    p.kind = PriorKind::pixel_matern12;
    p.side = side;
    p.lengthscale = psi;
    p.K = pixel_matern_covariance(side, psi);
    Eigen::MatrixXd Kj = p.K;
    Kj.diagonal().array() += 1e-8;
    p.llt.compute(Kj);
    if (p.llt.info() != Eigen::Success)
        throw Error(Error::Code::not_positive_definite, "pixel covariance factorization failed");
    return p;
}

/// Greedy-design bookkeeping: chosen angle blocks with their stacked
/// measurements and the dense measurement covariance K_yy = T K T^T.
struct DesignState {
    const RadonOperator* radon = nullptr;  // all candidate angles
    std::vector<std::size_t> chosen;       // indices into radon->angles_deg
    std::vector<std::size_t> remaining;
    Eigen::VectorXd measurements;  // stacked per chosen angle
    Eigen::MatrixXd Kyy;
    double noise_precision = 1.0;

    Eigen::Index measurement_count() const {
        return static_cast<Eigen::Index>(chosen.size()) * radon->detector_pixels;
    }
    Eigen::VectorXd apply_chosen(const Eigen::VectorXd& image) const {
        Eigen::VectorXd y(measurement_count());
        for (std::size_t i = 0; i < chosen.size(); ++i)
            y.segment(static_cast<Eigen::Index>(i) * radon->detector_pixels,
                      radon->detector_pixels) = radon->blocks[chosen[i]] * image;
        return y;
    }
    Eigen::VectorXd apply_chosen_adjoint(const Eigen::VectorXd& y) const {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(radon->pixel_count());
        for (std::size_t i = 0; i < chosen.size(); ++i)
            x += radon->blocks[chosen[i]].transpose() *
                 y.segment(static_cast<Eigen::Index>(i) * radon->detector_pixels,
                           radon->detector_pixels);
        return x;
    }
};

inline DesignState init_design(const RadonOperator& radon, const ImagePrior& prior,
                               const std::vector<std::size_t>& pilot,
                               const Eigen::VectorXd& pilot_measurements, double b) {
    DesignState st;
    st.radon = &radon;
    st.chosen = pilot;
    for (std::size_t a = 0; a < radon.angles_deg.size(); ++a)
        if (std::find(pilot.begin(), pilot.end(), a) == pilot.end()) st.remaining.push_back(a);
    st.measurements = pilot_measurements;
    st.noise_precision = b;
    const Eigen::Index dp = radon.detector_pixels;
    st.Kyy.resize(st.measurement_count(), st.measurement_count());
    for (std::size_t i = 0; i < pilot.size(); ++i) {
        // K T_i^T computed columnwise through the prior
        const Eigen::MatrixXd KTi =
            prior.apply(Eigen::MatrixXd(radon.blocks[pilot[i]].transpose()));
        for (std::size_t j = 0; j < pilot.size(); ++j)
            st.Kyy.block(static_cast<Eigen::Index>(j) * dp, static_cast<Eigen::Index>(i) * dp, dp,
                         dp) = radon.blocks[pilot[j]] * KTi;
    }
    return st;
}

/// Appends one angle: new measurements plus the covariance border blocks
/// T^(t) K (T^beta)^T and T^beta K (T^beta)^T.
inline void extend_design(DesignState& st, const ImagePrior& prior, std::size_t angle_idx,
                          const Eigen::VectorXd& new_measurements) {
    const Eigen::Index dp = st.radon->detector_pixels;
    const Eigen::Index old_m = st.measurement_count();
    const Eigen::MatrixXd KTb =
        prior.apply(Eigen::MatrixXd(st.radon->blocks[angle_idx].transpose()));  // npix x dp
    Eigen::MatrixXd cross(old_m, dp);
    for (std::size_t j = 0; j < st.chosen.size(); ++j)
        cross.block(static_cast<Eigen::Index>(j) * dp, 0, dp, dp) =
            st.radon->blocks[st.chosen[j]] * KTb;
    const Eigen::MatrixXd corner = st.radon->blocks[angle_idx] * KTb;

    Eigen::MatrixXd Kyy(old_m + dp, old_m + dp);
    Kyy.topLeftCorner(old_m, old_m) = st.Kyy;
    Kyy.topRightCorner(old_m, dp) = cross;
    Kyy.bottomLeftCorner(dp, old_m) = cross.transpose();
    Kyy.bottomRightCorner(dp, dp) = corner;
    st.Kyy = std::move(Kyy);

    Eigen::VectorXd y(old_m + dp);
    y << st.measurements, new_measurements;
    st.measurements = std::move(y);

    st.chosen.push_back(angle_idx);
    st.remaining.erase(std::find(st.remaining.begin(), st.remaining.end(), angle_idx));
}

namespace detail {
inline Eigen::MatrixXd solve_measurement_system(const DesignState& st, Eigen::MatrixXd rhs) {
    Eigen::MatrixXd A = st.Kyy;
    A.diagonal().array() += 1.0 / st.noise_precision;
    return jittered_cholesky(A).solve(std::move(rhs));
}
}  // namespace detail

/// mu = K T^T (K_yy + b^-1 I)^-1 y.
inline Eigen::VectorXd posterior_mean_image(const DesignState& st, const ImagePrior& prior) {
    if (st.chosen.empty()) return Eigen::VectorXd::Zero(st.radon->pixel_count());
    const Eigen::VectorXd s = detail::solve_measurement_system(st, st.measurements);
    return prior.apply(st.apply_chosen_adjoint(s));
}

/// Pseudo-measurements of every remaining angle under the current posterior:
/// column i stacks T-bar (x_i - K T^T (K_yy + b^-1 I)^-1 (eps_i + T x_i))
/// for a prior draw x_i and noise draw eps_i. Zero-mean by construction.
inline Eigen::MatrixXd pseudo_measurement_samples(const DesignState& st, const ImagePrior& prior,
                                                  int m, RngStream rng) {
    if (m < 1) throw Error(Error::Code::bad_argument, "sample count must be >= 1");
    const Eigen::Index dp = st.radon->detector_pixels;
    const Eigen::Index out_rows = static_cast<Eigen::Index>(st.remaining.size()) * dp;
    Eigen::MatrixXd out(out_rows, m);
    const double noise_sd = 1.0 / std::sqrt(st.noise_precision);

    Eigen::MatrixXd X(st.radon->pixel_count(), m);
    for (int i = 0; i < m; ++i) X.col(i) = prior.sample(rng);

    if (!st.chosen.empty()) {
        Eigen::MatrixXd resid(st.measurement_count(), m);
        for (int i = 0; i < m; ++i) {
            resid.col(i) = st.apply_chosen(X.col(i));
            for (Eigen::Index j = 0; j < resid.rows(); ++j) resid(j, i) += noise_sd * rng.normal();
        }
        const Eigen::MatrixXd S = detail::solve_measurement_system(st, std::move(resid));
        for (int i = 0; i < m; ++i) X.col(i) -= prior.apply(st.apply_chosen_adjoint(S.col(i)));
    }
    for (std::size_t a = 0; a < st.remaining.size(); ++a)
        for (int i = 0; i < m; ++i)
            out.block(static_cast<Eigen::Index>(a) * dp, i, dp, 1) =
                st.radon->blocks[st.remaining[a]] * X.col(i);
    return out;
}

/// EIG score logdet(b^-1 I + Sigma-hat) from the sample second moment;
/// beta-independent additive constants are kept so the exact-value
/// comparison is direct.
inline double eig_score(const Eigen::MatrixXd& angle_samples, double b) {
    const double m = static_cast<double>(angle_samples.cols());
    Eigen::MatrixXd S = angle_samples * angle_samples.transpose() / m;
    S.diagonal().array() += 1.0 / b;
    const auto llt = detail::jittered_cholesky(S);
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// ESE score tr(Sigma-hat) = mean squared sample norm.
inline double ese_score(const Eigen::MatrixXd& angle_samples) {
    return angle_samples.squaredNorm() / static_cast<double>(angle_samples.cols());
}

enum class DesignCriterion { eig, ese, random };

struct DesignTraceEntry {
    int step;
    std::size_t angle_index;
    double angle_deg;
    double score;
    double psnr;  // NaN when not evaluated at this step
};

inline double psnr(const Eigen::VectorXd& reconstruction, const Eigen::VectorXd& truth) {
    const double mse = (reconstruction - truth).squaredNorm() / static_cast<double>(truth.size());
    const double peak = truth.cwiseAbs().maxCoeff();
    return 10.0 * std::log10(peak * peak / std::max(mse, 1e-300));
}

struct GreedyDesignResult {
    DesignState state;
    std::vector<DesignTraceEntry> trace;
};

/// Greedy angle selection: score every remaining angle on a shared pseudo-
/// measurement block, take the argmax (lowest index on ties), measure the
/// oracle image at the new angle, and extend the covariance incrementally.
/// PSNR against the oracle image is recorded every 5 acquired angles.
inline GreedyDesignResult greedy_design(DesignState state, const ImagePrior& prior,
                                        DesignCriterion criterion, std::size_t total_angles,
                                        int sample_count, RngStream rng,
                                        const Eigen::VectorXd& oracle_image,
                                        double measurement_noise_sd) {
    GreedyDesignResult res;
    const Eigen::Index dp = state.radon->detector_pixels;
    int step = 0;
    while (state.chosen.size() < total_angles && !state.remaining.empty()) {
        ++step;
        std::size_t pick = 0;
        double pick_score = 0.0;
        if (criterion == DesignCriterion::random) {
            pick = static_cast<std::size_t>(rng.uniform_index(state.remaining.size()));
        } else {
            const Eigen::MatrixXd samples =
                pseudo_measurement_samples(state, prior, sample_count,
                                           rng.derive(static_cast<std::uint64_t>(step)));
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < state.remaining.size(); ++a) {
                const Eigen::MatrixXd blockA =
                    samples.middleRows(static_cast<Eigen::Index>(a) * dp, dp);
                const double sc = criterion == DesignCriterion::eig
                                      ? eig_score(blockA, state.noise_precision)
                                      : ese_score(blockA);
                if (sc > best) {
                    best = sc;
                    pick = a;
                }
            }
            pick_score = best;
        }
        const std::size_t angle_idx = state.remaining[pick];
        Eigen::VectorXd y_new = state.radon->blocks[angle_idx] * oracle_image;
        if (measurement_noise_sd > 0.0) {
            RngStream nr = rng.derive(0xfeed0000 + static_cast<std::uint64_t>(step));
            for (Eigen::Index i = 0; i < y_new.size(); ++i)
                y_new(i) += measurement_noise_sd * nr.normal();
        }
        extend_design(state, prior, angle_idx, y_new);

        double p = std::numeric_limits<double>::quiet_NaN();
        if (state.chosen.size() % 5 == 0)
            p = psnr(posterior_mean_image(state, prior), oracle_image);
        res.trace.push_back({step, angle_idx, state.radon->angles_deg[angle_idx], pick_score, p});
    }
    res.state = std::move(state);
    return res;
}

/// Phantom of 3 superimposed near-axis-aligned rectangles; orientations
/// are normal with sd 2.86 degrees, intensities add where they overlap.
inline Eigen::VectorXd generate_phantom(Eigen::Index side, RngStream rng) {
    Eigen::VectorXd img = Eigen::VectorXd::Zero(side * side);
    const double s = static_cast<double>(side);
    for (int r = 0; r < 3; ++r) {
        const double cx = rng.uniform(0.25, 0.75) * s;
        const double cy = rng.uniform(0.25, 0.75) * s;
        const double half_w = rng.uniform(0.075, 0.25) * s;
        const double half_h = rng.uniform(0.075, 0.25) * s;
        const double theta = rng.normal() * 2.86 * M_PI / 180.0;
        const double intensity = rng.uniform(0.3, 1.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (Eigen::Index row = 0; row < side; ++row)
            for (Eigen::Index col = 0; col < side; ++col) {
                const double px = static_cast<double>(col) + 0.5 - cx;
                const double py = static_cast<double>(row) + 0.5 - cy;
                const double u = ct * px + st * py;
                const double v = -st * px + ct * py;
                if (std::abs(u) <= half_w && std::abs(v) <= half_h)
                    img(row * side + col) += intensity;
            }
    }
    return img;
}

/// Evidence of the pilot measurements under the pixel covariance prior at
/// lengthscale psi; used for 1-D grid fitting on pilot data.
inline double pilot_evidence(const DesignState& st, double psi) {
    const Eigen::Index side = st.radon->side;
    const Eigen::MatrixXd K = pixel_matern_covariance(side, psi);
    const Eigen::Index dp = st.radon->detector_pixels;
    const Eigen::Index mtot = st.measurement_count();
    Eigen::MatrixXd Kyy(mtot, mtot);
    for (std::size_t i = 0; i < st.chosen.size(); ++i) {
        const Eigen::MatrixXd KTi = K * Eigen::MatrixXd(st.radon->blocks[st.chosen[i]].transpose());
        for (std::size_t j = 0; j < st.chosen.size(); ++j)
            Kyy.block(static_cast<Eigen::Index>(j) * dp, static_cast<Eigen::Index>(i) * dp, dp,
                      dp) = st.radon->blocks[st.chosen[j]] * KTi;
    }
    Kyy.diagonal().array() += 1.0 / st.noise_precision;
    const auto llt = detail::jittered_cholesky(Kyy);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double quad = st.measurements.dot(llt.solve(st.measurements));
    return -0.5 * static_cast<double>(mtot) * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * quad;
}

inline double fit_pilot_lengthscale(const DesignState& st, const std::vector<double>& grid) {
    if (grid.empty()) throw Error(Error::Code::bad_argument, "lengthscale grid is empty");
    double best_psi = grid.front();
    double best = -std::numeric_limits<double>::infinity();
    for (double psi : grid) {
        const double e = pilot_evidence(st, psi);
        if (e > best) {
            best = e;
            best_psi = psi;
        }
    }
    return best_psi;
}

inline void export_image_csv(const std::string& path, const Eigen::VectorXd& image,
                             Eigen::Index side) {
    std::ofstream out(path);
    out.precision(17);
    for (Eigen::Index r = 0; r < side; ++r) {
        for (Eigen::Index c = 0; c < side; ++c) out << image(r * side + c) << (c + 1 < side ? "," : "");
        out << "\n";
    }
}

inline void export_design_trace(const std::string& path,
                                const std::vector<DesignTraceEntry>& trace) {
    std::ofstream out(path);
    out << "step,angle_index,angle_deg,score,psnr\n";
    for (const auto& e : trace)
        out << e.step << "," << e.angle_index << "," << e.angle_deg << "," << e.score << ","
            << e.psnr << "\n";
}

}  // namespace gpsdd
