#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aagp/dataset.hpp"
#include "aagp/error.hpp"
#include "aagp/kernels.hpp"
#include "aagp/linalg.hpp"
#include "aagp/model.hpp"
#include "aagp/mpp.hpp"
#include "aagp/random.hpp"

namespace aagp {

/// Range parameters updated by Metropolis-Hastings, in update order.
enum class Theta : int { a = 0, c = 1, beta = 2, phi_s = 3, phi_u = 4 };
inline constexpr int kThetaCount = 5;
inline constexpr std::array<const char*, kThetaCount> kThetaNames{"a", "c", "beta", "phi_s", "phi_u"};

using ThetaArray = std::array<double, kThetaCount>;
using ThetaCounts = std::array<std::int64_t, kThetaCount>;

/// Parameters held fixed at their initial value. Pinning everything gives a fixed-parameter
/// chain over the latents; pinning sigma2_2 near zero gives the MPP-only surrogate.
struct PinnedParams {
    bool b = false;
    bool tau2 = false;
    bool sigma2_1 = false;
    bool sigma2_2 = false;
    std::array<bool, kThetaCount> theta{};

    [[nodiscard]] static PinnedParams all() {
        PinnedParams p{true, true, true, true, {}};
        p.theta.fill(true);
        return p;
    }
};

struct ChainConfig {
    std::int64_t n_iter = 25000;
    std::int64_t burn_in = 15000;
    std::int64_t thin = 1;
    std::uint64_t seed = 0;
    ThetaArray proposal_scales{0.2, 0.2, 0.2, 0.2, 0.2};
    bool adapt = true;
    std::int64_t adapt_window = 50;
    double target_acceptance = 0.3;

    CorrFamily space_family = CorrFamily::exponential;
    CorrFamily time_family = CorrFamily::exponential;
    double alpha = 0.5;

    /// Starting parameters; when absent the data-driven initialization is used.
    std::optional<ModelParams> initial;
    PinnedParams pinned;

    /// Write a checkpoint every this many iterations (0 disables).
    std::int64_t checkpoint_every = 0;

    /// Latent-only sweeps at the starting parameters before the first iteration. Without them
    /// the first variance draws see all-zero latents and sigma2_1 can collapse toward zero.
    int warm_start_sweeps = 10;

    /// Added to the sigma2_1 full-conditional shape. Zero for the correct sampler;
    /// nonzero only to check that the joint-distribution test detects a wrong conditional.
    double sigma1_shape_shift = 0.0;
};

inline void validate(const ChainConfig& c) {
    if (c.n_iter < 1) throw ConfigError("chain: n_iter must be positive");
    if (c.burn_in < 0 || c.burn_in >= c.n_iter) throw ConfigError("chain: need 0 <= burn_in < n_iter");
    if (c.thin < 1) throw ConfigError("chain: thin must be at least 1");
    for (double s : c.proposal_scales)
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("chain: proposal scales must be positive");
    if (c.adapt_window < 1) throw ConfigError("chain: adaptation window must be positive");
    if (!(c.target_acceptance > 0.0 && c.target_acceptance < 1.0))
        throw ConfigError("chain: target acceptance must lie in (0, 1)");
    if (c.checkpoint_every < 0) throw ConfigError("chain: checkpoint_every must be nonnegative");
    if (c.warm_start_sweeps < 0) throw ConfigError("chain: warm_start_sweeps must be nonnegative");
    if (!(c.alpha > 0.0 && c.alpha <= 1.0)) throw ConfigError("chain: alpha must lie in (0, 1]");
}

/// Retained draws. w1 and w2 are never stored; they are recoverable from the kept
/// parameters and w*.
struct SampleStore {
    std::vector<std::int64_t> iterations;
    std::vector<ModelParams> params;
    std::vector<Eigen::VectorXd> w_star;
    ThetaCounts accepted{};
    ThetaCounts proposed{};
    std::vector<double> iteration_seconds;
    ThetaArray final_scales{};
    std::int64_t rebuild_failures = 0;

    [[nodiscard]] std::size_t size() const { return params.size(); }

    [[nodiscard]] double acceptance_rate(Theta t) const {
        const auto i = static_cast<std::size_t>(t);
        return proposed[i] > 0 ? static_cast<double>(accepted[i]) / static_cast<double>(proposed[i]) : 0.0;
    }
};

/// Draws only; ignores wall times.
inline bool same_draws(const SampleStore& x, const SampleStore& y) {
    if (x.iterations != y.iterations || x.size() != y.size() || x.accepted != y.accepted) return false;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const auto &p = x.params[k], &q = y.params[k];
        if (p.b != q.b || p.tau2 != q.tau2 || p.sigma2_1 != q.sigma2_1 || p.sigma2_2 != q.sigma2_2 ||
            !detail::same(p.theta1, q.theta1) || !detail::same(p.theta2, q.theta2) || x.w_star[k] != y.w_star[k])
            return false;
    }
    return true;
}

/// Everything needed to continue a chain exactly.
struct ChainState {
    std::int64_t next_iteration = 0;
    ModelParams params;
    LatentState latent;
    std::string rng_state;
    ThetaArray scales{};
    ThetaCounts window_accepts{};
    std::int64_t window_index = 0;
    SampleStore store;
};

/// Raised when the chain hits a non-finite quantity; carries the last valid state.
class ChainAbort : public NumericalAbort {
public:
    ChainAbort(const std::string& what, ChainState last_valid)
        : NumericalAbort(what), last_valid_(std::move(last_valid)) {}

    [[nodiscard]] const ChainState& last_valid() const noexcept { return last_valid_; }

private:
    ChainState last_valid_;
};

namespace detail {
inline double logit(double q) { return std::log(q) - std::log1p(-q); }
inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

inline void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw NumericalAbort(std::string("non-finite ") + what);
}
}  // namespace detail

/// Metropolis-within-Gibbs sampler over the joint posterior of parameters, the knot
/// process w*, the MPP field w1, the separable field w2 and the missing responses.
/// Individual updates are public so they can be checked one at a time.
class GibbsSampler {
public:
    GibbsSampler(const ValidatedDataset& data, const Priors& priors, const KnotSet& knots, ChainConfig config)
        : data_(data), priors_(priors), config_(std::move(config)), builder_(data, knots), rng_(config_.seed) {
        validate(priors_);
        validate(config_);
        if (priors_.mu_b.size() != data_.p()) throw DimensionError("priors do not match the number of covariates");
        const auto vb = cholesky_spd(priors_.V_b, "prior covariance V_b");
        Vb_inv_ = vb.solve(Eigen::MatrixXd::Identity(data_.p(), data_.p()));
        Vb_inv_ = 0.5 * (Vb_inv_ + Vb_inv_.transpose()).eval();
        Vb_inv_mu_ = Vb_inv_ * priors_.mu_b;
        HtH_ = data_.H().transpose() * data_.H();
        scales_ = config_.proposal_scales;
    }

    // ---- state --------------------------------------------------------------

    /// Data-driven start: OLS for b on the observed cells, each variance one third of the
    /// residual variance, theta at the prior midpoints, Z_m = H_m b. Latents start at zero and
    /// then take warm_start_sweeps draws from their conditionals at the starting parameters.
    void initialize() {
        ModelParams p;
        if (config_.initial) {
            p = *config_.initial;
        } else {
            const auto& obs = data_.observed_cells();
            const Eigen::Index no = data_.n_obs(), np = data_.p();
            if (no < 1) throw ValidationError(ValidationError::Kind::other, "no observed cells");
            Eigen::MatrixXd ho(no, np);
            for (Eigen::Index k = 0; k < no; ++k) ho.row(k) = data_.H().row(obs[static_cast<std::size_t>(k)]);
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ho);
            if (qr.rank() < np)
                throw ValidationError(ValidationError::Kind::rank_deficient, "covariates are rank deficient on observed cells");
            p.b = qr.solve(data_.z_obs());
            const Eigen::VectorXd resid = data_.z_obs() - ho * p.b;
            const double dof = static_cast<double>(no > np ? no - np : no);
            const double s2 = std::max(resid.squaredNorm() / dof, 1e-8);
            p.tau2 = p.sigma2_1 = p.sigma2_2 = s2 / 3.0;
            p.theta1 = {priors_.a.midpoint(), priors_.c.midpoint(), priors_.beta.midpoint(), config_.alpha,
                        data_.spatial_dim()};
            p.theta2 = {priors_.phi_s.midpoint(), priors_.phi_u.midpoint(), config_.space_family, config_.time_family};
        }
        LatentState l;
        l.w_star = Eigen::VectorXd::Zero(builder_.knots().m());
        l.w1 = Eigen::VectorXd::Zero(data_.n());
        l.w2 = Eigen::VectorXd::Zero(data_.n());
        l.z_missing.resize(data_.n_missing());
        for (Eigen::Index k = 0; k < data_.n_missing(); ++k)
            l.z_missing(k) = data_.H().row(data_.missing_cells()[static_cast<std::size_t>(k)]).dot(p.b);
        set_state(p, l);
        for (int i = 0; i < config_.warm_start_sweeps; ++i) {
            update_latents();
            impute_missing();
        }
    }

    /// Replace the full state and rebuild every structure for its theta.
    void set_state(const ModelParams& p, const LatentState& l) {
        if (p.b.size() != data_.p()) throw DimensionError("set_state: b has the wrong length");
        if (l.w_star.size() != builder_.knots().m() || l.w1.size() != data_.n() || l.w2.size() != data_.n() ||
            l.z_missing.size() != data_.n_missing())
            throw DimensionError("set_state: latent lengths inconsistent with data/knots");
        mpp_ = builder_.build(p.theta1);
        chol_s_ = separable_chol(spatial_factor(data_, p.theta2), "spatial correlation");
        chol_u_ = separable_chol(temporal_factor(data_, p.theta2), "temporal correlation");
        params_ = p;
        latent_ = l;
        eig_s_stale_ = eig_u_stale_ = true;
    }

    [[nodiscard]] const ModelParams& params() const { return params_; }
    [[nodiscard]] const LatentState& latent() const { return latent_; }
    [[nodiscard]] const MppStructures& mpp() const { return mpp_; }
    [[nodiscard]] const CholeskyFactor& chol_s() const { return chol_s_; }
    [[nodiscard]] const CholeskyFactor& chol_u() const { return chol_u_; }
    [[nodiscard]] const ValidatedDataset& data() const { return data_; }
    [[nodiscard]] const KnotSet& knots() const { return builder_.knots(); }
    [[nodiscard]] const ChainConfig& config() const { return config_; }
    [[nodiscard]] const ThetaArray& scales() const { return scales_; }
    [[nodiscard]] Rng& rng() { return rng_; }

    /// Eigenpairs of the jittered separable factors for the current theta2.
    [[nodiscard]] const KroneckerEig& eig() const {
        if (eig_s_stale_) {
            auto e = sym_eig(spatial_factor(data_, params_.theta2), kSeparableJitter, "spatial correlation");
            eig_.Q_s = std::move(e.Q);
            eig_.lam_s = std::move(e.lam);
            eig_s_stale_ = false;
        }
        if (eig_u_stale_) {
            auto e = sym_eig(temporal_factor(data_, params_.theta2), kSeparableJitter, "temporal correlation");
            eig_.Q_u = std::move(e.Q);
            eig_.lam_u = std::move(e.lam);
            eig_u_stale_ = false;
        }
        return eig_;
    }

    [[nodiscard]] SeparableStructures separable() const { return {params_.theta2, kSeparableJitter, eig()}; }

    /// Complete response vector with the current imputations.
    [[nodiscard]] Eigen::VectorXd complete_z() const { return data_.complete_z(latent_.z_missing); }

    [[nodiscard]] double log_joint() const {
        return log_joint_density(params_, latent_, data_, priors_, mpp_, separable());
    }

    // ---- conjugate block ----------------------------------------------------

    void update_b() {
        if (config_.pinned.b) return;
        const Eigen::VectorXd r = complete_z() - latent_.w1 - latent_.w2;
        Eigen::MatrixXd prec = Vb_inv_ + HtH_ / params_.tau2;
        prec = 0.5 * (prec + prec.transpose()).eval();
        const auto chol = cholesky_spd(prec, "b posterior precision");
        const Eigen::VectorXd mean = chol.solve(Vb_inv_mu_ + data_.H().transpose() * r / params_.tau2);
        const Eigen::VectorXd xi = rng_.normal_vector(data_.p());
        params_.b = mean + chol.L.transpose().triangularView<Eigen::Upper>().solve(xi);
    }

    [[nodiscard]] std::pair<double, double> tau2_conditional() const {
        const Eigen::VectorXd r = complete_z() - data_.H() * params_.b - latent_.w1 - latent_.w2;
        return {priors_.tau2.shape + 0.5 * static_cast<double>(data_.n()), priors_.tau2.scale + 0.5 * r.squaredNorm()};
    }

    [[nodiscard]] std::pair<double, double> sigma2_1_conditional() const {
        const Eigen::VectorXd resid = latent_.w1 - mpp_.project(latent_.w_star);
        const double quad = mpp_.Rstar_chol.half_solve(latent_.w_star).squaredNorm() +
                            (resid.array().square() / mpp_.v_floored().array()).sum();
        const double shape = priors_.sigma2_1.shape + 0.5 * static_cast<double>(data_.n() + mpp_.m()) +
                             config_.sigma1_shape_shift;
        return {shape, priors_.sigma2_1.scale + 0.5 * quad};
    }

    [[nodiscard]] std::pair<double, double> sigma2_2_conditional() const {
        return {priors_.sigma2_2.shape + 0.5 * static_cast<double>(data_.n()),
                priors_.sigma2_2.scale + 0.5 * separable_quadform(latent_.w2, chol_s_, chol_u_)};
    }

    void update_tau2() {
        if (config_.pinned.tau2) return;
        params_.tau2 = draw_ig(tau2_conditional(), "tau2");
    }
    void update_sigma2_1() {
        if (config_.pinned.sigma2_1) return;
        params_.sigma2_1 = draw_ig(sigma2_1_conditional(), "sigma2_1");
    }
    void update_sigma2_2() {
        if (config_.pinned.sigma2_2) return;
        params_.sigma2_2 = draw_ig(sigma2_2_conditional(), "sigma2_2");
    }

    void update_conjugate_block() {
        update_b();
        update_tau2();
        update_sigma2_1();
        update_sigma2_2();
    }

    // ---- latents ------------------------------------------------------------

    /// w* in whitened coordinates v = L^{-1} w*: prior N(0, sigma2_1 I), w1 | v ~ N(B^T v, sigma2_1 V).
    void update_w_star() {
        const Eigen::VectorXd v_inv = mpp_.v_floored().cwiseInverse();
        Eigen::MatrixXd prec = mpp_.B * v_inv.asDiagonal() * mpp_.B.transpose();
        prec.diagonal().array() += 1.0;
        prec = 0.5 * (prec + prec.transpose()).eval();
        const auto chol = cholesky_spd(prec, "w* posterior precision");
        const Eigen::VectorXd y = mpp_.B * v_inv.cwiseProduct(latent_.w1);
        Eigen::VectorXd v = chol.half_solve(y) + std::sqrt(params_.sigma2_1) * rng_.normal_vector(mpp_.m());
        chol.L.transpose().triangularView<Eigen::Upper>().solveInPlace(v);
        latent_.w_star = mpp_.Rstar_chol.L * v;
    }

    void update_w1() {
        const Eigen::VectorXd mean_prior = mpp_.project(latent_.w_star);
        const Eigen::VectorXd r = complete_z() - data_.H() * params_.b - latent_.w2;
        const Eigen::VectorXd v = mpp_.v_floored();
        for (Eigen::Index i = 0; i < data_.n(); ++i) {
            const double prior_var = params_.sigma2_1 * v(i);
            const double var = 1.0 / (1.0 / prior_var + 1.0 / params_.tau2);
            const double mean = var * (mean_prior(i) / prior_var + r(i) / params_.tau2);
            latent_.w1(i) = mean + std::sqrt(var) * rng_.normal();
        }
    }

    void update_w2() {
        const KroneckerEig& e = eig();
        const Eigen::VectorXd r = complete_z() - data_.H() * params_.b - latent_.w1;
        const Eigen::ArrayXd d = 1.0 / (params_.sigma2_2 * kron_lambda(e).array()) + 1.0 / params_.tau2;
        const Eigen::ArrayXd xi = rng_.normal_vector(data_.n()).array();
        const Eigen::VectorXd x = (eig_rotate(e, r).array() / (params_.tau2 * d) + xi / d.sqrt()).matrix();
        latent_.w2 = eig_unrotate(e, x);
    }

    void update_latents() {
        update_w_star();
        update_w1();
        update_w2();
    }

    // ---- Metropolis-Hastings for theta ---------------------------------------

    [[nodiscard]] const UniformBounds& bounds(Theta t) const {
        switch (t) {
            case Theta::a: return priors_.a;
            case Theta::c: return priors_.c;
            case Theta::beta: return priors_.beta;
            case Theta::phi_s: return priors_.phi_s;
            default: return priors_.phi_u;
        }
    }

    [[nodiscard]] double theta_value(Theta t) const { return theta_value(params_, t); }

    static double theta_value(const ModelParams& p, Theta t) {
        switch (t) {
            case Theta::a: return p.theta1.a;
            case Theta::c: return p.theta1.c;
            case Theta::beta: return p.theta1.beta;
            case Theta::phi_s: return p.theta2.phi_s;
            default: return p.theta2.phi_u;
        }
    }

    static void set_theta_value(ModelParams& p, Theta t, double x) {
        switch (t) {
            case Theta::a: p.theta1.a = x; break;
            case Theta::c: p.theta1.c = x; break;
            case Theta::beta: p.theta1.beta = x; break;
            case Theta::phi_s: p.theta2.phi_s = x; break;
            default: p.theta2.phi_u = x; break;
        }
    }

    /// log N(w* | 0, sigma2_1 R_*) + log N(w1 | A w*, sigma2_1 V) under `mpp`.
    [[nodiscard]] double theta1_log_target(const MppStructures& mpp) const {
        return log_density_w_star(latent_.w_star, params_.sigma2_1, mpp) +
               log_density_w1(latent_.w1, latent_.w_star, params_.sigma2_1, mpp);
    }

    /// log N(w2 | 0, sigma2_2 (R_s kron R_u)) with the given factors.
    [[nodiscard]] double theta2_log_target(const CholeskyFactor& cs, const CholeskyFactor& cu) const {
        const double n = static_cast<double>(data_.n());
        const double logdet = static_cast<double>(data_.n_times()) * cs.logdet() +
                              static_cast<double>(data_.n_sites()) * cu.logdet();
        return -0.5 * (n * (kLog2Pi + std::log(params_.sigma2_2)) + logdet +
                       separable_quadform(latent_.w2, cs, cu) / params_.sigma2_2);
    }

    /// log(q (1 - q)) for the rescaled value q; the Jacobian of the logit map.
    [[nodiscard]] double log_jacobian(Theta t, double x) const {
        const auto& u = bounds(t);
        const double q = (x - u.lower) / (u.upper - u.lower);
        return std::log(q) + std::log1p(-q);
    }

    /// Log acceptance ratio for moving theta element `t` to `proposed`, all else fixed.
    /// Returns -inf when the proposed structures cannot be built.
    [[nodiscard]] double mh_log_ratio(Theta t, double proposed) const {
        const auto& u = bounds(t);
        if (!u.contains(proposed)) return -std::numeric_limits<double>::infinity();
        ModelParams p = params_;
        set_theta_value(p, t, proposed);
        const double jac = log_jacobian(t, proposed) - log_jacobian(t, theta_value(t));
        if (static_cast<int>(t) < 3) {
            const auto mpp = builder_.build(p.theta1);
            return theta1_log_target(mpp) - theta1_log_target(mpp_) + jac;
        }
        const auto cs = t == Theta::phi_s ? separable_chol(spatial_factor(data_, p.theta2), "spatial correlation") : chol_s_;
        const auto cu = t == Theta::phi_u ? separable_chol(temporal_factor(data_, p.theta2), "temporal correlation") : chol_u_;
        return theta2_log_target(cs, cu) - theta2_log_target(chol_s_, chol_u_) + jac;
    }

    /// One logit random-walk step for element `t`. Returns true on acceptance.
    bool mh_step(Theta t) {
        const auto i = static_cast<std::size_t>(t);
        if (config_.pinned.theta[i]) return false;
        const auto& u = bounds(t);
        const double q = (theta_value(t) - u.lower) / (u.upper - u.lower);
        const double eta = detail::logit(q) + scales_[i] * rng_.normal();
        const double proposed = u.lower + (u.upper - u.lower) * detail::sigmoid(eta);
        const double log_u = std::log(rng_.uniform());
        ++proposed_[i];

        if (!u.contains(proposed)) return false;
        ModelParams p = params_;
        set_theta_value(p, t, proposed);
        const double jac = log_jacobian(t, proposed) - log_jacobian(t, theta_value(t));
        try {
            if (static_cast<int>(t) < 3) {
                auto mpp = builder_.build(p.theta1);
                const double ratio = theta1_log_target(mpp) - theta1_log_target(mpp_) + jac;
                if (!(log_u < ratio)) return false;
                mpp_ = std::move(mpp);
            } else {
                const bool space = t == Theta::phi_s;
                auto chol = space ? separable_chol(spatial_factor(data_, p.theta2), "spatial correlation")
                                  : separable_chol(temporal_factor(data_, p.theta2), "temporal correlation");
                const double ratio = (space ? theta2_log_target(chol, chol_u_) : theta2_log_target(chol_s_, chol)) -
                                     theta2_log_target(chol_s_, chol_u_) + jac;
                if (!(log_u < ratio)) return false;
                (space ? chol_s_ : chol_u_) = std::move(chol);
                (space ? eig_s_stale_ : eig_u_stale_) = true;
            }
        } catch (const Error& e) {
            ++rebuild_failures_;
            warn(std::string("proposal for ") + kThetaNames[i] + " rejected: " + e.what());
            return false;
        }
        params_ = std::move(p);
        ++accepted_[i];
        ++window_accepts_[i];
        return true;
    }

    void update_ranges_mh() {
        for (int k = 0; k < kThetaCount; ++k) mh_step(static_cast<Theta>(k));
    }

    // ---- imputation ---------------------------------------------------------

    void impute_missing() {
        const double sd = std::sqrt(params_.tau2);
        for (Eigen::Index k = 0; k < data_.n_missing(); ++k) {
            const Eigen::Index cell = data_.missing_cells()[static_cast<std::size_t>(k)];
            const double mean = data_.H().row(cell).dot(params_.b) + latent_.w1(cell) + latent_.w2(cell);
            latent_.z_missing(k) = mean + sd * rng_.normal();
        }
    }

    /// One full iteration in the fixed order.
    void sweep() {
        update_conjugate_block();
        update_latents();
        update_ranges_mh();
        impute_missing();
        check_finite();
    }

    // ---- adaptation and bookkeeping -------------------------------------------

    /// Robbins-Monro step on log scale toward the target acceptance rate, using the
    /// acceptances since the previous call over `window` proposals.
    void adapt_scales(std::int64_t window) {
        ++window_index_;
        const double gain = 1.0 / std::sqrt(static_cast<double>(window_index_));
        for (int k = 0; k < kThetaCount; ++k) {
            const auto i = static_cast<std::size_t>(k);
            const double rate = static_cast<double>(window_accepts_[i]) / static_cast<double>(window);
            scales_[i] = std::exp(std::log(scales_[i]) + gain * (rate - config_.target_acceptance));
            window_accepts_[i] = 0;
        }
    }

    [[nodiscard]] const ThetaCounts& accepted() const { return accepted_; }
    [[nodiscard]] const ThetaCounts& proposed() const { return proposed_; }
    [[nodiscard]] std::int64_t rebuild_failures() const { return rebuild_failures_; }

    [[nodiscard]] ChainState snapshot(std::int64_t next_iteration) const {
        ChainState s;
        s.next_iteration = next_iteration;
        s.params = params_;
        s.latent = latent_;
        s.rng_state = rng_.state();
        s.scales = scales_;
        s.window_accepts = window_accepts_;
        s.window_index = window_index_;
        s.store.accepted = accepted_;
        s.store.proposed = proposed_;
        s.store.rebuild_failures = rebuild_failures_;
        return s;
    }

    void restore(const ChainState& s) {
        set_state(s.params, s.latent);
        rng_.restore(s.rng_state);
        scales_ = s.scales;
        window_accepts_ = s.window_accepts;
        window_index_ = s.window_index;
        accepted_ = s.store.accepted;
        proposed_ = s.store.proposed;
        rebuild_failures_ = s.store.rebuild_failures;
    }

    void set_warning_sink(std::function<void(const std::string&)> sink) { warn_ = std::move(sink); }

private:
    static CholeskyFactor separable_chol(const Eigen::MatrixXd& r, const std::string& what) {
        return cholesky_spd(r, std::vector<double>{kSeparableJitter}, what);
    }

    /// w^T (A kron B)^{-1} w as <W, B^{-1} W A^{-1}> with W the n2 x n1 reshape.
    static double separable_quadform(const Eigen::VectorXd& w, const CholeskyFactor& cs, const CholeskyFactor& cu) {
        Eigen::Map<const Eigen::MatrixXd> wm(w.data(), cu.size(), cs.size());
        const Eigen::MatrixXd x = cu.solve(wm);
        const Eigen::MatrixXd y = cs.solve(x.transpose());
        return (wm.array() * y.transpose().array()).sum();
    }

    double draw_ig(std::pair<double, double> shape_scale, const char* what) {
        detail::require_finite(shape_scale.second, what);
        const double x = rng_.inverse_gamma(shape_scale.first, shape_scale.second);
        if (!(x > 0.0) || !std::isfinite(x)) throw NumericalAbort(std::string("invalid draw for ") + what);
        return x;
    }

    void check_finite() const {
        if (!params_.b.allFinite() || !std::isfinite(params_.tau2) || !std::isfinite(params_.sigma2_1) ||
            !std::isfinite(params_.sigma2_2))
            throw NumericalAbort("non-finite parameter after sweep");
        if (!latent_.w_star.allFinite() || !latent_.w1.allFinite() || !latent_.w2.allFinite() ||
            !latent_.z_missing.allFinite())
            throw NumericalAbort("non-finite latent after sweep");
    }

    void warn(const std::string& msg) const {
        if (warn_) warn_(msg);
    }

    const ValidatedDataset& data_;
    Priors priors_;
    ChainConfig config_;
    GridMppBuilder builder_;
    Rng rng_;

    Eigen::MatrixXd Vb_inv_;
    Eigen::VectorXd Vb_inv_mu_;
    Eigen::MatrixXd HtH_;

    ModelParams params_;
    LatentState latent_;
    MppStructures mpp_;
    CholeskyFactor chol_s_;
    CholeskyFactor chol_u_;
    mutable KroneckerEig eig_;
    mutable bool eig_s_stale_ = true;
    mutable bool eig_u_stale_ = true;

    ThetaArray scales_{};
    ThetaCounts accepted_{};
    ThetaCounts proposed_{};
    ThetaCounts window_accepts_{};
    std::int64_t window_index_ = 0;
    std::int64_t rebuild_failures_ = 0;
    std::function<void(const std::string&)> warn_ = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
};

namespace detail {
/// `store` with the sampler-side counters taken from `counts`.
inline SampleStore with_counts(SampleStore store, const SampleStore& counts) {
    store.accepted = counts.accepted;
    store.proposed = counts.proposed;
    store.rebuild_failures = counts.rebuild_failures;
    return store;
}
}  // namespace detail

/// Optional hooks for run_chain.
struct ChainHooks {
    /// Called after each retained iteration with the sampler in its post-sweep state.
    std::function<void(GibbsSampler&, std::int64_t iteration)> on_keep;
    /// Called every checkpoint_every iterations with a resumable state.
    std::function<void(const ChainState&)> on_checkpoint;
    std::function<void(const std::string&)> on_warning;
    /// Called after every iteration (progress reporting).
    std::function<void(std::int64_t iteration)> on_iteration;
};

/// Runs one chain. Deterministic given config.seed; resuming from a checkpoint continues the
/// exact same stream.
inline SampleStore run_chain(const ValidatedDataset& data, const Priors& priors, const KnotSet& knots,
                             const ChainConfig& config, const ChainHooks& hooks = {},
                             const ChainState* resume = nullptr) {
    GibbsSampler sampler(data, priors, knots, config);
    if (hooks.on_warning) sampler.set_warning_sink(hooks.on_warning);
    SampleStore store;
    std::int64_t start = 0;
    if (resume) {
        sampler.restore(*resume);
        store = resume->store;
        start = resume->next_iteration;
    } else {
        sampler.initialize();
    }

    const std::int64_t keep_total = (config.n_iter - config.burn_in) / config.thin;
    store.params.reserve(static_cast<std::size_t>(keep_total));
    store.w_star.reserve(static_cast<std::size_t>(keep_total));

    for (std::int64_t it = start; it < config.n_iter; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        const ModelParams params_before = sampler.params();
        const LatentState latent_before = sampler.latent();
        const std::string rng_before = sampler.rng().state();
        try {
            sampler.sweep();
        } catch (const NumericalAbort& e) {
            ChainState s = sampler.snapshot(it);
            s.params = params_before;
            s.latent = latent_before;
            s.rng_state = rng_before;
            s.store = detail::with_counts(store, s.store);
            throw ChainAbort(std::string("chain aborted at iteration ") + std::to_string(it) + ": " + e.what(),
                             std::move(s));
        }
        if (config.adapt && it < config.burn_in && (it + 1) % config.adapt_window == 0)
            sampler.adapt_scales(config.adapt_window);

        const std::int64_t since = it - config.burn_in;
        const bool keep = since >= 0 && since % config.thin == config.thin - 1 &&
                          static_cast<std::int64_t>(store.size()) < keep_total;
        if (keep) {
            store.iterations.push_back(it);
            store.params.push_back(sampler.params());
            store.w_star.push_back(sampler.latent().w_star);
            if (hooks.on_keep) hooks.on_keep(sampler, it);
        }
        store.iteration_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (hooks.on_iteration) hooks.on_iteration(it);
        if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 && hooks.on_checkpoint) {
            ChainState s = sampler.snapshot(it + 1);
            s.store = detail::with_counts(store, s.store);
            s.store.final_scales = sampler.scales();
            hooks.on_checkpoint(s);
        }
    }
    store.accepted = sampler.accepted();
    store.proposed = sampler.proposed();
    store.final_scales = sampler.scales();
    store.rebuild_failures = sampler.rebuild_failures();
    return store;
}

/// Runs independent chains on up to `threads` worker threads. Chain k uses seed
/// derive_seed(config.seed, k).
inline std::vector<SampleStore> run_chains(const ValidatedDataset& data, const Priors& priors, const KnotSet& knots,
                                           const ChainConfig& config, int n_chains, int threads = 1) {
    if (n_chains < 1) throw ConfigError("need at least one chain");
    threads = std::max(1, std::min(threads, n_chains));
    std::vector<SampleStore> out(static_cast<std::size_t>(n_chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));
    auto work = [&](int first) {
        for (int k = first; k < n_chains; k += threads) {
            try {
                ChainConfig c = config;
                c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
                out[static_cast<std::size_t>(k)] = run_chain(data, priors, knots, c);
            } catch (...) {
                errors[static_cast<std::size_t>(k)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(work, t);
    work(0);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace aagp
