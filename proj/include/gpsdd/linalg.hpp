#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "gpsdd/core.hpp"
#include "gpsdd/rng.hpp"

namespace gpsdd {

/// Matrix-free linear operator. `row` is optional and only needed by
/// consumers that subsample coordinates (SDD).
struct LinearOperator {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;
    std::function<Eigen::VectorXd(Eigen::Index)> row;  // may be empty

    static LinearOperator dense(const Eigen::MatrixXd& A) {
        LinearOperator op;
        op.rows = A.rows();
        op.cols = A.cols();
        op.apply = [A](const Eigen::VectorXd& v) { return Eigen::VectorXd(A * v); };
        op.row = [A](Eigen::Index i) { return Eigen::VectorXd(A.row(i)); };
        return op;
    }
    static LinearOperator identity(Eigen::Index n) {
        LinearOperator op;
        op.rows = op.cols = n;
        op.apply = [](const Eigen::VectorXd& v) { return v; };
        op.row = [n](Eigen::Index i) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
            e(i) = 1.0;
            return e;
        };
        return op;
    }
};

/// Low-rank-plus-noise approximation P = U diag(lambda) U^T + b^-1 I with
/// the inverse applied through the Woodbury identity.
struct Preconditioner {
    Eigen::MatrixXd basis;        // c x r, orthonormal columns
    Eigen::VectorXd eigenvalues;  // r, positive
    double noise_precision = 1.0;

    Eigen::Index rank() const { return eigenvalues.size(); }

    /// P^{-1} v = b v - b^2 U (b U^T U + diag(lambda)^{-1})^{-1} U^T v.
    Eigen::VectorXd apply_inverse(const Eigen::VectorXd& v) const {
        if (rank() == 0) return noise_precision * v;
        const double b = noise_precision;
        Eigen::MatrixXd inner = b * basis.transpose() * basis;
        inner.diagonal() += eigenvalues.cwiseInverse();
        return b * v - b * b * basis * inner.llt().solve(basis.transpose() * v);
    }
};

struct CgResult {
    Eigen::VectorXd solution;
    int iterations = 0;
    bool converged = false;
    std::vector<double> residual_history;  // relative residual per iteration
};

/// Preconditioned conjugate gradients for symmetric PD operators.
inline CgResult cg_solve(const LinearOperator& op, const Eigen::VectorXd& rhs, double tol,
                         int max_iter, const Preconditioner* precond = nullptr) {
    if (!(tol > 0.0)) throw Error(Error::Code::bad_argument, "cg tolerance must be positive");
    const double rhs_norm = rhs.norm();
    CgResult res;
    res.solution = Eigen::VectorXd::Zero(op.cols);
    if (rhs_norm == 0.0) {
        res.converged = true;
        return res;
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(op.cols);
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = precond ? precond->apply_inverse(r) : r;
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    Eigen::VectorXd best_x = x;
    double best_res = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd Ap = op.apply(p);
        const double alpha = rz / p.dot(Ap);
        x += alpha * p;
        r -= alpha * Ap;
        const double rel = r.norm() / rhs_norm;
        if (!std::isfinite(rel))
            throw Error(Error::Code::solver_divergence, "cg_solve: non-finite residual");
        res.residual_history.push_back(rel);
        res.iterations = it + 1;
        if (rel < best_res) {
            best_res = rel;
            best_x = x;
        }
        if (rel <= tol) {
            res.converged = true;
            break;
        }
        z = precond ? precond->apply_inverse(r) : r;
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    res.solution = res.converged ? x : best_x;
    return res;
}

/// Randomized-SVD preconditioner for K_yy + b^-1 I. `op` must apply the
/// noise-free K_yy.
inline Preconditioner build_preconditioner(const LinearOperator& op, double noise_precision,
                                           Eigen::Index rank, RngStream rng) {
    if (rank > op.rows)
        throw Error(Error::Code::bad_argument, "preconditioner rank exceeds operator size");
    const Eigen::Index c = op.rows;
    Eigen::MatrixXd test(c, rank);
    for (Eigen::Index j = 0; j < rank; ++j)
        for (Eigen::Index i = 0; i < c; ++i) test(i, j) = rng.normal();

    Eigen::MatrixXd sketch(c, rank);
    for (Eigen::Index j = 0; j < rank; ++j) sketch.col(j) = op.apply(test.col(j));

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(sketch);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(c, rank);

    Eigen::MatrixXd KQ(c, rank);
    for (Eigen::Index j = 0; j < rank; ++j) KQ.col(j) = op.apply(Q.col(j));
    Eigen::MatrixXd small = Q.transpose() * KQ;
    small = 0.5 * (small + small.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(small);
    // keep numerically significant directions only
    const double cutoff = std::max(1e-12 * std::abs(eig.eigenvalues().maxCoeff()), 0.0);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < rank; ++i)
        if (eig.eigenvalues()(i) > cutoff) keep.push_back(i);

    Preconditioner p;
    p.noise_precision = noise_precision;
    p.basis.resize(c, static_cast<Eigen::Index>(keep.size()));
    p.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        p.basis.col(static_cast<Eigen::Index>(k)) = Q * eig.eigenvectors().col(keep[k]);
        p.eigenvalues(static_cast<Eigen::Index>(k)) = eig.eigenvalues()(keep[k]);
    }
    return p;
}

inline constexpr Eigen::Index kDenseCap = 4000;

inline Eigen::LLT<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& A) {
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
        // locate the failing pivot for the error message
        Eigen::Index bad = A.rows() - 1;
        for (Eigen::Index k = 1; k <= A.rows(); ++k) {
            Eigen::LLT<Eigen::MatrixXd> sub(A.topLeftCorner(k, k));
            if (sub.info() != Eigen::Success) {
                bad = k - 1;
                break;
            }
        }
        throw Error(Error::Code::not_positive_definite,
                    "cholesky: matrix not positive definite at pivot " + std::to_string(bad));
    }
    return llt;
}

inline Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs) {
    if (A.rows() > kDenseCap)
        throw Error(Error::Code::bad_argument, "cholesky_solve: size exceeds dense cap");
    return cholesky(A).solve(rhs);
}

inline double cholesky_logdet(const Eigen::MatrixXd& A) {
    if (A.rows() > kDenseCap)
        throw Error(Error::Code::bad_argument, "cholesky_logdet: size exceeds dense cap");
    const auto llt = cholesky(A);
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

inline void export_residual_history(const std::string& path, const std::vector<double>& hist) {
    std::ofstream out(path);
    out << "iteration,relative_residual\n";
    for (std::size_t i = 0; i < hist.size(); ++i) out << i + 1 << "," << hist[i] << "\n";
}

}  // namespace gpsdd
