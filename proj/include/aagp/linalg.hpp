#pragma once

#include <cmath>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#ifdef AAGP_USE_LAPACKE
#include <lapacke.h>
#endif

#include "aagp/error.hpp"

namespace aagp {

/// Default jitter ladder tried by cholesky_spd, smallest first.
inline const std::vector<double>& default_jitter_schedule() {
    static const std::vector<double> schedule{0.0, 1e-10, 1e-8, 1e-6};
    return schedule;
}

/// Nugget added to both separable correlation factors.
inline constexpr double kSeparableJitter = 1e-6;

/// Lower Cholesky factor of M + jitter_used * I.
struct CholeskyFactor {
    Eigen::MatrixXd L;
    double jitter_used = 0.0;

    [[nodiscard]] Eigen::Index size() const { return L.rows(); }

    /// L^{-1} x
    template <typename Rhs>
    [[nodiscard]] Eigen::MatrixXd half_solve(const Eigen::MatrixBase<Rhs>& x) const {
        return L.triangularView<Eigen::Lower>().solve(x);
    }

    /// (L L^T)^{-1} x
    template <typename Rhs>
    [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixBase<Rhs>& x) const {
        Eigen::MatrixXd y = L.triangularView<Eigen::Lower>().solve(x);
        L.transpose().triangularView<Eigen::Upper>().solveInPlace(y);
        return y;
    }

    [[nodiscard]] double logdet() const { return 2.0 * L.diagonal().array().log().sum(); }

    [[nodiscard]] Eigen::MatrixXd reconstruct() const { return L * L.transpose(); }
};

/// Factor a symmetric matrix, escalating through `schedule` until the factorization succeeds.
/// `what` names the structure in the error message.
inline CholeskyFactor cholesky_spd(const Eigen::MatrixXd& m, const std::vector<double>& schedule,
                                   const std::string& what = "matrix") {
    if (m.rows() != m.cols()) throw DimensionError("cholesky_spd: " + what + " is not square");
    if (!m.allFinite()) throw DomainError("cholesky_spd: " + what + " has non-finite entries");
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw DomainError("cholesky_spd: " + what + " is not symmetric");
    for (double jitter : schedule) {
        Eigen::MatrixXd shifted = m;
        shifted.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() != Eigen::Success) continue;
        Eigen::MatrixXd lower = llt.matrixL();
        if (!lower.diagonal().allFinite() || (lower.diagonal().array() <= 0.0).any()) continue;
        return {std::move(lower), jitter};
    }
    throw SingularMatrixError("cholesky_spd: " + what + " is not positive definite at the largest jitter");
}

inline CholeskyFactor cholesky_spd(const Eigen::MatrixXd& m, const std::string& what = "matrix") {
    return cholesky_spd(m, default_jitter_schedule(), what);
}

/// diag + U core^{-1} U^T with the core held in factored form.
struct LowRankPlusDiag {
    Eigen::MatrixXd U;
    CholeskyFactor core_chol;
    Eigen::VectorXd diag;
};

/// Reusable Sherman-Morrison-Woodbury solver for base + U core^{-1} U^T.
/// `base_solve(X)` must return base^{-1} X for a matrix X with n rows.
template <typename BaseSolve>
class WoodburySolver {
public:
    WoodburySolver(BaseSolve base_solve, const Eigen::MatrixXd& u, const CholeskyFactor& core)
        : base_solve_(std::move(base_solve)), u_(u) {
        if (core.size() != u.cols()) throw DimensionError("woodbury: core size does not match U");
        base_inv_u_ = base_solve_(u_);
        Eigen::MatrixXd inner = core.reconstruct() + u_.transpose() * base_inv_u_;
        inner = 0.5 * (inner + inner.transpose());
        inner_ = cholesky_spd(inner, "woodbury inner matrix");
        core_logdet_ = core.logdet();
    }

    [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
        if (rhs.rows() != u_.rows()) throw DimensionError("woodbury: rhs length mismatch");
        Eigen::MatrixXd base_rhs = base_solve_(rhs);
        return base_rhs - base_inv_u_ * inner_.solve(u_.transpose() * base_rhs);
    }

    /// log det(base + U core^{-1} U^T) given log det(base).
    [[nodiscard]] double logdet(double base_logdet) const { return base_logdet + inner_.logdet() - core_logdet_; }

private:
    BaseSolve base_solve_;
    Eigen::MatrixXd u_;
    Eigen::MatrixXd base_inv_u_;
    CholeskyFactor inner_;
    double core_logdet_ = 0.0;
};

inline auto diagonal_solver(const Eigen::VectorXd& diag) {
    return [inv = diag.cwiseInverse().eval()](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
        return inv.asDiagonal() * x;
    };
}

/// (diag + U core^{-1} U^T)^{-1} rhs in O(n m^2 + m^3).
inline Eigen::MatrixXd smw_solve(const LowRankPlusDiag& s, const Eigen::MatrixXd& rhs) {
    if (s.U.rows() != s.diag.size()) throw DimensionError("smw_solve: U and diag disagree on n");
    if ((s.diag.array() <= 0.0).any()) throw DomainError("smw_solve: diagonal must be positive");
    WoodburySolver solver(diagonal_solver(s.diag), s.U, s.core_chol);
    return solver.solve(rhs);
}

inline double smw_logdet(const LowRankPlusDiag& s) {
    WoodburySolver solver(diagonal_solver(s.diag), s.U, s.core_chol);
    return solver.logdet(s.diag.array().log().sum());
}

// ---------------------------------------------------------------------------
// Kronecker structure. Vectors over an n1 x n2 grid are ordered time-fastest,
// so a length n1*n2 vector reshapes to an n2 x n1 column-major matrix whose
// column i holds site i.

struct SymEig {
    Eigen::MatrixXd Q;
    Eigen::VectorXd lam;
};

inline SymEig sym_eig(const Eigen::MatrixXd& m, double jitter, const std::string& what = "matrix") {
    if (m.rows() != m.cols()) throw DimensionError("sym_eig: " + what + " is not square");
    if (!m.allFinite()) throw DomainError("sym_eig: " + what + " has non-finite entries");
    Eigen::MatrixXd shifted = m;
    shifted.diagonal().array() += jitter;
#ifdef AAGP_USE_LAPACKE
    // divide and conquer; several times faster than Eigen's QR iteration at a few hundred rows
    Eigen::VectorXd lam(m.rows());
    const auto n = static_cast<lapack_int>(m.rows());
    if (LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, shifted.data(), n, lam.data()) != 0)
        throw SingularMatrixError("eigensolver failed on " + what);
    SymEig out{std::move(shifted), std::move(lam)};
#else
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shifted);
    if (es.info() != Eigen::Success) throw SingularMatrixError("eigensolver failed on " + what);
    SymEig out{es.eigenvectors(), es.eigenvalues()};
#endif
    if (!(out.lam.array() > 0.0).all()) throw SingularMatrixError(what + " has a non-positive eigenvalue after jitter");
    return out;
}

/// Eigendecompositions of the jittered spatial and temporal correlation factors.
struct KroneckerEig {
    Eigen::MatrixXd Q_s;
    Eigen::VectorXd lam_s;
    Eigen::MatrixXd Q_u;
    Eigen::VectorXd lam_u;

    [[nodiscard]] Eigen::Index n_sites() const { return lam_s.size(); }
    [[nodiscard]] Eigen::Index n_times() const { return lam_u.size(); }
    [[nodiscard]] Eigen::Index size() const { return lam_s.size() * lam_u.size(); }
};

inline KroneckerEig kron_eig(const Eigen::MatrixXd& r_s, const Eigen::MatrixXd& r_u, double jitter_s = kSeparableJitter,
                             double jitter_u = kSeparableJitter) {
    auto es = sym_eig(r_s, jitter_s, "spatial correlation");
    auto eu = sym_eig(r_u, jitter_u, "temporal correlation");
    return {std::move(es.Q), std::move(es.lam), std::move(eu.Q), std::move(eu.lam)};
}

namespace detail {
inline void check_kron_length(Eigen::Index n1, Eigen::Index n2, Eigen::Index len) {
    if (n1 * n2 != len) throw DimensionError("kronecker: vector length does not match n1*n2");
}
}  // namespace detail

/// (A kron B) v computed as vec(B V A^T) without forming the product.
inline Eigen::VectorXd kron_matvec(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& v) {
    detail::check_kron_length(a.cols(), b.cols(), v.size());
    Eigen::Map<const Eigen::MatrixXd> vm(v.data(), b.cols(), a.cols());
    Eigen::VectorXd out(a.rows() * b.rows());
    Eigen::Map<Eigen::MatrixXd>(out.data(), b.rows(), a.rows()).noalias() = b * vm * a.transpose();
    return out;
}

/// Q^T v for Q = Q_s kron Q_u.
inline Eigen::VectorXd eig_rotate(const KroneckerEig& e, const Eigen::VectorXd& v) {
    return kron_matvec(e.Q_s.transpose(), e.Q_u.transpose(), v);
}

/// Q x for Q = Q_s kron Q_u.
inline Eigen::VectorXd eig_unrotate(const KroneckerEig& e, const Eigen::VectorXd& x) {
    return kron_matvec(e.Q_s, e.Q_u, x);
}

/// Eigenvalues of the Kronecker product in grid order.
inline Eigen::VectorXd kron_lambda(const KroneckerEig& e) {
    Eigen::VectorXd out(e.size());
    Eigen::Map<Eigen::MatrixXd>(out.data(), e.n_times(), e.n_sites()) = e.lam_u * e.lam_s.transpose();
    return out;
}

/// (R_s kron R_u) v reconstructed from the eigenpairs.
inline Eigen::VectorXd kron_matvec(const KroneckerEig& e, const Eigen::VectorXd& v) {
    return eig_unrotate(e, kron_lambda(e).cwiseProduct(eig_rotate(e, v)));
}

inline Eigen::VectorXd kron_solve(const KroneckerEig& e, const Eigen::VectorXd& v) {
    return eig_unrotate(e, eig_rotate(e, v).cwiseQuotient(kron_lambda(e)));
}

inline double kron_logdet(const KroneckerEig& e) {
    return static_cast<double>(e.n_times()) * e.lam_s.array().log().sum() +
           static_cast<double>(e.n_sites()) * e.lam_u.array().log().sum();
}

/// v^T (R_s kron R_u)^{-1} v
inline double kron_quadform(const KroneckerEig& e, const Eigen::VectorXd& v) {
    const Eigen::VectorXd rotated = eig_rotate(e, v);
    return (rotated.array().square() / kron_lambda(e).array()).sum();
}

}  // namespace aagp
