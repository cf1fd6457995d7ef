#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "aagp/dataset.hpp"
#include "aagp/error.hpp"
#include "aagp/kernels.hpp"
#include "aagp/linalg.hpp"
#include "aagp/mpp.hpp"

namespace aagp {

/// All unknowns of the additive model; alpha inside theta1 is fixed.
struct ModelParams {
    Eigen::VectorXd b;
    double tau2 = 1.0;
    double sigma2_1 = 1.0;
    double sigma2_2 = 1.0;
    NonsepParams theta1;
    SepParams theta2;
};

struct InverseGamma {
    double shape = 2.0;
    double scale = 0.01;
};

struct UniformBounds {
    double lower = 0.0;
    double upper = 1.0;

    [[nodiscard]] bool contains(double x) const { return x > lower && x < upper; }
    [[nodiscard]] double midpoint() const { return 0.5 * (lower + upper); }
};

struct Priors {
    Eigen::VectorXd mu_b;
    Eigen::MatrixXd V_b;
    InverseGamma tau2;
    InverseGamma sigma2_1;
    InverseGamma sigma2_2;
    UniformBounds a{0.0, 20.0};
    UniformBounds c{0.0, 20.0};
    UniformBounds beta{0.0, 1.0};
    UniformBounds phi_s{0.0, 20.0};
    UniformBounds phi_u{0.0, 20.0};
};

/// Vague defaults used in the simulation studies: b ~ N(0, 1000 I), IG(2, 0.01) variances,
/// U(0, 20) ranges and U(0, 1) interaction.
inline Priors default_priors(Eigen::Index p) {
    Priors pr;
    pr.mu_b = Eigen::VectorXd::Zero(p);
    pr.V_b = 1000.0 * Eigen::MatrixXd::Identity(p, p);
    return pr;
}

inline void validate(const Priors& pr) {
    using Kind = ValidationError::Kind;
    if (pr.mu_b.size() != pr.V_b.rows() || pr.V_b.rows() != pr.V_b.cols())
        throw ValidationError(Kind::length_mismatch, "priors: mu_b / V_b size mismatch");
    if (Eigen::LLT<Eigen::MatrixXd>(pr.V_b).info() != Eigen::Success)
        throw ValidationError(Kind::invalid_parameter, "priors: V_b must be SPD");
    for (const auto* ig : {&pr.tau2, &pr.sigma2_1, &pr.sigma2_2})
        if (!(ig->shape > 0.0 && ig->scale > 0.0))
            throw ValidationError(Kind::invalid_parameter, "priors: inverse-gamma shape and scale must be positive");
    for (const auto* u : {&pr.a, &pr.c, &pr.beta, &pr.phi_s, &pr.phi_u})
        if (!(std::isfinite(u->lower) && std::isfinite(u->upper) && u->lower < u->upper))
            throw ValidationError(Kind::invalid_parameter, "priors: uniform bounds need lower < upper");
}

/// Latent quantities of the hierarchical model over the complete grid.
struct LatentState {
    Eigen::VectorXd w_star;     // m
    Eigen::VectorXd w1;         // n
    Eigen::VectorXd w2;         // n
    Eigen::VectorXd z_missing;  // n_missing
};

/// Separable correlation factors with the fixed nugget, and their eigendecompositions.
struct SeparableStructures {
    SepParams params;
    double jitter = kSeparableJitter;
    KroneckerEig eig;
};

inline Eigen::MatrixXd family_matrix(const Eigen::MatrixXd& lags, double range, CorrFamily family) {
    return lags.unaryExpr([&](double h) { return family_corr(h, range, family); });
}

inline Eigen::MatrixXd spatial_factor(const ValidatedDataset& data, const SepParams& p) {
    return family_matrix(data.site_distances(), p.phi_s, p.space_family);
}

inline Eigen::MatrixXd temporal_factor(const ValidatedDataset& data, const SepParams& p) {
    return family_matrix(data.time_lags(), p.phi_u, p.time_family);
}

inline SeparableStructures build_separable(const ValidatedDataset& data, const SepParams& p,
                                           double jitter = kSeparableJitter) {
    validate(p);
    return {p, jitter, kron_eig(spatial_factor(data, p), temporal_factor(data, p), jitter, jitter)};
}

// ---------------------------------------------------------------------------
// Scalar log densities.

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double log_inverse_gamma(double x, const InverseGamma& ig) {
    if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
    return ig.shape * std::log(ig.scale) - std::lgamma(ig.shape) - (ig.shape + 1.0) * std::log(x) - ig.scale / x;
}

inline double log_uniform(double x, const UniformBounds& u) {
    return u.contains(x) ? -std::log(u.upper - u.lower) : -std::numeric_limits<double>::infinity();
}

inline double log_mvn_prior_b(const Eigen::VectorXd& b, const Priors& pr) {
    const auto chol = cholesky_spd(pr.V_b, "prior covariance V_b");
    const Eigen::VectorXd r = chol.half_solve(b - pr.mu_b);
    return -0.5 * (static_cast<double>(b.size()) * kLog2Pi + chol.logdet() + r.squaredNorm());
}

/// Sum of the prior log densities of every parameter.
inline double log_prior(const ModelParams& p, const Priors& pr) {
    return log_mvn_prior_b(p.b, pr) + log_inverse_gamma(p.tau2, pr.tau2) + log_inverse_gamma(p.sigma2_1, pr.sigma2_1) +
           log_inverse_gamma(p.sigma2_2, pr.sigma2_2) + log_uniform(p.theta1.a, pr.a) + log_uniform(p.theta1.c, pr.c) +
           log_uniform(p.theta1.beta, pr.beta) + log_uniform(p.theta2.phi_s, pr.phi_s) +
           log_uniform(p.theta2.phi_u, pr.phi_u);
}

/// log N_m(w* | 0, sigma2_1 R_*)
inline double log_density_w_star(const Eigen::VectorXd& w_star, double sigma2_1, const MppStructures& mpp) {
    const double m = static_cast<double>(w_star.size());
    return -0.5 * (m * (kLog2Pi + std::log(sigma2_1)) + mpp.Rstar_chol.logdet() +
                   mpp.Rstar_chol.half_solve(w_star).squaredNorm() / sigma2_1);
}

/// log N_n(w1 | R_nm R_*^{-1} w*, sigma2_1 V) with the V floor applied.
inline double log_density_w1(const Eigen::VectorXd& w1, const Eigen::VectorXd& w_star, double sigma2_1,
                             const MppStructures& mpp) {
    const Eigen::VectorXd v = mpp.v_floored();
    const Eigen::VectorXd resid = w1 - mpp.project(w_star);
    const double n = static_cast<double>(w1.size());
    return -0.5 * (n * (kLog2Pi + std::log(sigma2_1)) + v.array().log().sum() +
                   (resid.array().square() / v.array()).sum() / sigma2_1);
}

/// log N_n(w2 | 0, sigma2_2 (R_s kron R_u))
inline double log_density_w2(const Eigen::VectorXd& w2, double sigma2_2, const KroneckerEig& eig) {
    const double n = static_cast<double>(w2.size());
    return -0.5 * (n * (kLog2Pi + std::log(sigma2_2)) + kron_logdet(eig) + kron_quadform(eig, w2) / sigma2_2);
}

/// log N_n(z | mean, tau2 I)
inline double log_density_data(const Eigen::VectorXd& z, const Eigen::VectorXd& mean, double tau2) {
    const double n = static_cast<double>(z.size());
    return -0.5 * (n * (kLog2Pi + std::log(tau2)) + (z - mean).squaredNorm() / tau2);
}

namespace detail {
inline void check_params(const ModelParams& p, const ValidatedDataset& data) {
    using Kind = ValidationError::Kind;
    if (!(p.tau2 > 0.0 && p.sigma2_1 > 0.0 && p.sigma2_2 > 0.0))
        throw ValidationError(Kind::invalid_parameter, "variances must be strictly positive");
    if (p.b.size() != data.p()) throw DimensionError("regression coefficients do not match covariates");
}

/// The marginal likelihood is defined with either component switched off.
inline void check_marginal_params(const ModelParams& p, const ValidatedDataset& data) {
    using Kind = ValidationError::Kind;
    if (!(p.tau2 > 0.0)) throw ValidationError(Kind::invalid_parameter, "tau2 must be strictly positive");
    if (!(p.sigma2_1 >= 0.0 && p.sigma2_2 >= 0.0))
        throw ValidationError(Kind::invalid_parameter, "component variances must be nonnegative");
    if (p.b.size() != data.p()) throw DimensionError("regression coefficients do not match covariates");
}

inline bool same(const NonsepParams& a, const NonsepParams& b) {
    return a.a == b.a && a.c == b.c && a.beta == b.beta && a.alpha == b.alpha && a.d == b.d;
}

inline bool same(const SepParams& a, const SepParams& b) {
    return a.phi_s == b.phi_s && a.phi_u == b.phi_u && a.space_family == b.space_family &&
           a.time_family == b.time_family;
}
}  // namespace detail

/// Unnormalized log joint posterior of parameters, latents and missing responses.
inline double log_joint_density(const ModelParams& p, const LatentState& latent, const ValidatedDataset& data,
                                const Priors& priors, const MppStructures& mpp, const SeparableStructures& sep) {
    detail::check_params(p, data);
    if (!detail::same(p.theta1, mpp.params) || !detail::same(p.theta2, sep.params))
        throw ValidationError(ValidationError::Kind::invalid_parameter,
                              "log_joint_density: structures were built for different correlation parameters");
    if (latent.w1.size() != data.n() || latent.w2.size() != data.n() || latent.w_star.size() != mpp.m() ||
        mpp.n() != data.n())
        throw DimensionError("log_joint_density: latent lengths inconsistent with data/knots");
    const Eigen::VectorXd z = data.complete_z(latent.z_missing);
    return log_prior(p, priors) + log_density_w_star(latent.w_star, p.sigma2_1, mpp) +
           log_density_w1(latent.w1, latent.w_star, p.sigma2_1, mpp) +
           log_density_w2(latent.w2, p.sigma2_2, sep.eig) +
           log_density_data(z, data.H() * p.b + latent.w1 + latent.w2, p.tau2);
}

inline constexpr Eigen::Index kDenseGuard = 2500;

/// Gaussian log-likelihood of the observed responses with a dense covariance assembled from
/// the MPP and Kronecker structures. Desk-scale only.
inline double marginal_loglik_dense(const ModelParams& p, const ValidatedDataset& data, const MppStructures& mpp,
                                    const SeparableStructures& sep) {
    detail::check_marginal_params(p, data);
    const auto& obs = data.observed_cells();
    const Eigen::Index no = data.n_obs();
    if (no > kDenseGuard)
        throw ValidationError(ValidationError::Kind::size_guard, "marginal_loglik_dense: more than 2500 observations");
    const Eigen::Index n2 = data.n_times();
    const Eigen::MatrixXd rs = sep.eig.Q_s * sep.eig.lam_s.asDiagonal() * sep.eig.Q_s.transpose();
    const Eigen::MatrixXd ru = sep.eig.Q_u * sep.eig.lam_u.asDiagonal() * sep.eig.Q_u.transpose();
    Eigen::MatrixXd b_obs(mpp.m(), no);
    for (Eigen::Index k = 0; k < no; ++k) b_obs.col(k) = mpp.B.col(obs[static_cast<std::size_t>(k)]);
    Eigen::MatrixXd sigma = p.sigma2_1 * (b_obs.transpose() * b_obs);
    for (Eigen::Index l = 0; l < no; ++l) {
        const Eigen::Index kl = obs[static_cast<std::size_t>(l)];
        for (Eigen::Index k = 0; k < no; ++k) {
            const Eigen::Index kk = obs[static_cast<std::size_t>(k)];
            sigma(k, l) += p.sigma2_2 * rs(kk / n2, kl / n2) * ru(kk % n2, kl % n2);
        }
        sigma(l, l) += p.sigma2_1 * mpp.V(kl) + p.tau2;
    }
    const auto chol = cholesky_spd(sigma, std::vector<double>{0.0}, "marginal covariance");
    Eigen::VectorXd resid(no);
    for (Eigen::Index k = 0; k < no; ++k)
        resid(k) = data.z_obs()(k) - data.H().row(obs[static_cast<std::size_t>(k)]).dot(p.b);
    return -0.5 * (static_cast<double>(no) * kLog2Pi + chol.logdet() + chol.half_solve(resid).squaredNorm());
}

/// Same likelihood evaluated as Sigma = D + sigma2_1 R_nm R_*^{-1} R_nm^T through the
/// Woodbury identity and the matrix determinant lemma, with
/// D = sigma2_2 (R_s kron R_u) + diag(sigma2_1 V + tau2).
/// When every cell is observed and D's diagonal part is constant, D is solved in the
/// Kronecker eigenbasis in O(n (n1 + n2)); otherwise D is factored densely over the
/// observed cells (the O(n^3) step that motivates the fully conditional sampler).
inline double marginal_loglik_structured(const ModelParams& p, const ValidatedDataset& data, const MppStructures& mpp,
                                         const SeparableStructures& sep) {
    detail::check_marginal_params(p, data);
    const auto& obs = data.observed_cells();
    const Eigen::Index no = data.n_obs(), n2 = data.n_times();
    Eigen::VectorXd g(no);
    Eigen::MatrixXd u(no, mpp.m());
    const Eigen::MatrixXd rnm = mpp.R_nm();
    Eigen::VectorXd resid(no);
    for (Eigen::Index k = 0; k < no; ++k) {
        const Eigen::Index cell = obs[static_cast<std::size_t>(k)];
        g(k) = p.sigma2_1 * mpp.V(cell) + p.tau2;
        u.row(k) = rnm.row(cell);
        resid(k) = data.z_obs()(k) - data.H().row(cell).dot(p.b);
    }
    // core = R_* / sigma2_1, so U core^{-1} U^T = sigma2_1 R_nm R_*^{-1} R_nm^T
    CholeskyFactor core{p.sigma2_1 > 0.0 ? Eigen::MatrixXd(mpp.Rstar_chol.L / std::sqrt(p.sigma2_1)) : mpp.Rstar_chol.L,
                        mpp.Rstar_chol.jitter_used};

    auto finish = [&](auto base_solve, double base_logdet) {
        if (p.sigma2_1 == 0.0) {
            const Eigen::MatrixXd x = base_solve(resid);
            return -0.5 * (static_cast<double>(no) * kLog2Pi + base_logdet + resid.dot(x.col(0)));
        }
        WoodburySolver solver(std::move(base_solve), u, core);
        const double quad = resid.dot(solver.solve(resid).col(0));
        return -0.5 * (static_cast<double>(no) * kLog2Pi + solver.logdet(base_logdet) + quad);
    };

    const bool homogeneous = (g.array() == g(0)).all();
    if (no == data.n() && homogeneous) {
        const Eigen::VectorXd d = (p.sigma2_2 * kron_lambda(sep.eig)).array() + g(0);
        auto base = [&sep, inv = d.cwiseInverse().eval()](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            Eigen::MatrixXd out(x.rows(), x.cols());
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                out.col(j) = eig_unrotate(sep.eig, inv.cwiseProduct(eig_rotate(sep.eig, x.col(j))));
            return out;
        };
        return finish(base, d.array().log().sum());
    }

    if (no > kDenseGuard)
        throw ValidationError(ValidationError::Kind::size_guard,
                              "marginal_loglik_structured: dense D needed for more than 2500 observations");
    // Rows of Q_s kron Q_u at the observed cells.
    Eigen::MatrixXd q_obs(no, data.n());
    for (Eigen::Index k = 0; k < no; ++k) {
        const Eigen::Index cell = obs[static_cast<std::size_t>(k)];
        for (Eigen::Index i = 0; i < data.n_sites(); ++i)
            q_obs.row(k).segment(i * n2, n2) = sep.eig.Q_s(cell / n2, i) * sep.eig.Q_u.row(cell % n2);
    }
    Eigen::MatrixXd d = p.sigma2_2 * q_obs * kron_lambda(sep.eig).asDiagonal() * q_obs.transpose();
    d.diagonal() += g;
    d = 0.5 * (d + d.transpose());
    const auto d_chol = cholesky_spd(d, std::vector<double>{0.0}, "D matrix");
    auto base = [&d_chol](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return d_chol.solve(x); };
    return finish(base, d_chol.logdet());
}

}  // namespace aagp
