#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aagp/dataset.hpp"
#include "aagp/error.hpp"
#include "aagp/kernels.hpp"
#include "aagp/linalg.hpp"
#include "aagp/model.hpp"
#include "aagp/mpp.hpp"
#include "aagp/random.hpp"
#include "aagp/sampler.hpp"

namespace aagp {

/// A location to predict at, with its covariate vector.
struct PredictionTarget {
    SpaceTimeLocation x;
    Eigen::VectorXd h;
};

struct PredictionSummary {
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
    std::int64_t n_draws = 0;
};

/// Targets at grid cells, covariates taken from the dataset.
inline std::vector<PredictionTarget> grid_targets(const ValidatedDataset& data, const std::vector<Eigen::Index>& cells) {
    std::vector<PredictionTarget> out;
    out.reserve(cells.size());
    for (auto k : cells) {
        if (k < 0 || k >= data.n()) throw DimensionError("grid_targets: cell index out of range");
        out.push_back({data.location(k), data.H().row(k).transpose()});
    }
    return out;
}

/// Type-7 empirical quantile of an unsorted sample.
inline double quantile_type7(std::vector<double> x, double prob) {
    if (x.empty()) throw DomainError("quantile of an empty sample");
    std::sort(x.begin(), x.end());
    const double h = (static_cast<double>(x.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline PredictionSummary summarize_draws(const Eigen::Ref<const Eigen::RowVectorXd>& draws) {
    if (draws.size() == 0) throw DomainError("summarize_draws: no draws");
    PredictionSummary s;
    s.n_draws = draws.size();
    s.mean = draws.mean();
    s.sd = draws.size() > 1 ? std::sqrt((draws.array() - s.mean).square().sum() / static_cast<double>(draws.size() - 1))
                            : 0.0;
    std::vector<double> v(draws.data(), draws.data() + draws.size());
    s.q025 = quantile_type7(v, 0.025);
    s.q975 = quantile_type7(std::move(v), 0.975);
    return s;
}

/// One summary per row of a targets x draws matrix.
inline std::vector<PredictionSummary> summarize(const Eigen::MatrixXd& draws) {
    std::vector<PredictionSummary> out;
    out.reserve(static_cast<std::size_t>(draws.rows()));
    for (Eigen::Index t = 0; t < draws.rows(); ++t) {
        const Eigen::RowVectorXd row = draws.row(t);
        out.push_back(summarize_draws(row));
    }
    return out;
}

inline double mspe(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    if (pred.size() != truth.size()) throw DimensionError("mspe: length mismatch");
    if (pred.size() == 0) throw DomainError("mspe: empty input");
    return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

/// Average length of the central 95% intervals.
inline double alci(const std::vector<PredictionSummary>& results) {
    if (results.empty()) throw DomainError("alci: empty input");
    double total = 0.0;
    for (const auto& r : results) total += r.q975 - r.q025;
    return total / static_cast<double>(results.size());
}

/// Fraction of truths inside their central 95% interval.
inline double coverage(const std::vector<PredictionSummary>& results, const Eigen::VectorXd& truth) {
    if (static_cast<Eigen::Index>(results.size()) != truth.size()) throw DimensionError("coverage: length mismatch");
    if (results.empty()) throw DomainError("coverage: empty input");
    std::int64_t inside = 0;
    for (std::size_t k = 0; k < results.size(); ++k) {
        const double y = truth(static_cast<Eigen::Index>(k));
        inside += (y >= results[k].q025 && y <= results[k].q975) ? 1 : 0;
    }
    return static_cast<double>(inside) / static_cast<double>(results.size());
}

inline Eigen::VectorXd means(const std::vector<PredictionSummary>& results) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(results.size()));
    for (std::size_t k = 0; k < results.size(); ++k) out(static_cast<Eigen::Index>(k)) = results[k].mean;
    return out;
}

/// Composition sampler for Y(x0) given one joint posterior state. Target geometry relative
/// to the grid and knots is computed once.
///
/// On-grid targets read w1 and w2 at their cell. Off-grid targets draw
///   w1(x0) | w*      ~ N(r0^T R_*^{-1} w*, sigma2_1 (1 - r0^T R_*^{-1} r0)),
///   w2(x0) | w2      ~ N(r_u^T B^{-1} W A^{-1} r_s, sigma2_2 (1 - (r_s^T A^{-1} r_s)(r_u^T B^{-1} r_u))),
/// with A, B the jittered separable factors and W the n2 x n1 reshape of w2.
class CompositionPredictor {
public:
    CompositionPredictor(const ValidatedDataset& data, const KnotSet& knots, std::vector<PredictionTarget> targets,
                         bool add_noise = false)
        : targets_(std::move(targets)), noisy_(add_noise) {
        const Eigen::Index nt = static_cast<Eigen::Index>(targets_.size());
        cell_.assign(targets_.size(), -1);
        site_dist_.resize(data.n_sites(), nt);
        time_lag_.resize(data.n_times(), nt);
        knot_dist_.resize(knots.m(), nt);
        knot_lag_.resize(knots.m(), nt);
        std::vector<std::string> missing;
        for (Eigen::Index t = 0; t < nt; ++t) {
            const auto& tg = targets_[static_cast<std::size_t>(t)];
            if (tg.x.s.size() != data.spatial_dim()) throw DimensionError("prediction target has wrong spatial dimension");
            if (tg.h.size() != data.p() || !tg.h.allFinite()) missing.push_back(std::to_string(t));
            const Eigen::Index i = data.find_site(tg.x.s), j = data.find_time(tg.x.u);
            if (i >= 0 && j >= 0) cell_[static_cast<std::size_t>(t)] = data.flat_index(i, j);
            for (Eigen::Index r = 0; r < data.n_sites(); ++r)
                site_dist_(r, t) = spatial_distance(data.sites().row(r).transpose(), tg.x.s, data.metric());
            time_lag_.col(t) = (data.times().array() - tg.x.u).abs();
            for (Eigen::Index r = 0; r < knots.m(); ++r)
                knot_dist_(r, t) = spatial_distance(knots.sites.row(r).transpose(), tg.x.s, data.metric());
            knot_lag_.col(t) = (knots.times.array() - tg.x.u).abs();
        }
        if (!missing.empty()) {
            std::string list;
            for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
            throw ValidationError(ValidationError::Kind::length_mismatch,
                                  "prediction targets without a full covariate vector h(x0): " + list);
        }
    }

    [[nodiscard]] std::size_t size() const { return targets_.size(); }
    [[nodiscard]] const std::vector<PredictionTarget>& targets() const { return targets_; }
    [[nodiscard]] bool on_grid(std::size_t t) const { return cell_[t] >= 0; }

    /// One draw of Y(x0) (or Z(x0) in noisy mode) per target from the sampler's current state.
    [[nodiscard]] Eigen::VectorXd draw(const GibbsSampler& s, Rng& rng) const {
        const ModelParams& p = s.params();
        const LatentState& l = s.latent();
        const Eigen::Index nt = static_cast<Eigen::Index>(targets_.size());
        Eigen::VectorXd out(nt);

        bool any_off = false;
        for (auto c : cell_) any_off = any_off || c < 0;
        Eigen::VectorXd white_wstar;
        Eigen::MatrixXd core;  // B^{-1} W A^{-1}, n2 x n1
        if (any_off) {
            white_wstar = s.mpp().Rstar_chol.half_solve(l.w_star);
            Eigen::Map<const Eigen::MatrixXd> wm(l.w2.data(), s.data().n_times(), s.data().n_sites());
            const Eigen::MatrixXd x = s.chol_u().solve(wm);
            core = s.chol_s().solve(x.transpose()).transpose();
        }
        for (Eigen::Index t = 0; t < nt; ++t) {
            const auto& tg = targets_[static_cast<std::size_t>(t)];
            double y = tg.h.dot(p.b);
            const Eigen::Index cell = cell_[static_cast<std::size_t>(t)];
            if (cell >= 0) {
                y += l.w1(cell) + l.w2(cell);
            } else {
                Eigen::VectorXd r0(knot_dist_.rows());
                for (Eigen::Index r = 0; r < r0.size(); ++r) r0(r) = gneiting_corr(knot_dist_(r, t), knot_lag_(r, t), p.theta1);
                const Eigen::VectorXd g = s.mpp().Rstar_chol.half_solve(r0);
                const double var1 = std::max(0.0, p.sigma2_1 * (1.0 - g.squaredNorm()));
                y += g.dot(white_wstar) + std::sqrt(var1) * rng.normal();

                const Eigen::VectorXd rs = family_vec(site_dist_.col(t), p.theta2.phi_s, p.theta2.space_family);
                const Eigen::VectorXd ru = family_vec(time_lag_.col(t), p.theta2.phi_u, p.theta2.time_family);
                const double mean2 = ru.dot(core * rs);
                const double qs = rs.dot(s.chol_s().solve(rs).col(0));
                const double qu = ru.dot(s.chol_u().solve(ru).col(0));
                const double var2 = std::max(0.0, p.sigma2_2 * (1.0 - qs * qu));
                y += mean2 + std::sqrt(var2) * rng.normal();
            }
            if (noisy_) y += std::sqrt(p.tau2) * rng.normal();
            out(t) = y;
        }
        return out;
    }

private:
    static Eigen::VectorXd family_vec(const Eigen::VectorXd& lags, double range, CorrFamily f) {
        return lags.unaryExpr([&](double h) { return family_corr(h, range, f); });
    }

    std::vector<PredictionTarget> targets_;
    bool noisy_;
    std::vector<Eigen::Index> cell_;
    Eigen::MatrixXd site_dist_;  // n1 x targets
    Eigen::MatrixXd time_lag_;   // n2 x targets
    Eigen::MatrixXd knot_dist_;  // m x targets
    Eigen::MatrixXd knot_lag_;   // m x targets
};

/// Collects composition draws during a run; plug `hook()` into ChainHooks::on_keep.
/// Uses its own random stream so the chain is unaffected by whether predictions are recorded.
class OnlinePredictor {
public:
    OnlinePredictor(const ValidatedDataset& data, const KnotSet& knots, std::vector<PredictionTarget> targets,
                    std::uint64_t seed, bool add_noise = false)
        : predictor_(data, knots, std::move(targets), add_noise), rng_(seed) {}

    void record(const GibbsSampler& s) { columns_.push_back(predictor_.draw(s, rng_)); }

    [[nodiscard]] auto hook() {
        return [this](GibbsSampler& s, std::int64_t) { record(s); };
    }

    /// targets x retained-draws matrix.
    [[nodiscard]] Eigen::MatrixXd draws() const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(predictor_.size()), static_cast<Eigen::Index>(columns_.size()));
        for (std::size_t k = 0; k < columns_.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = columns_[k];
        return out;
    }

    [[nodiscard]] std::vector<PredictionSummary> results() const { return summarize(draws()); }

private:
    CompositionPredictor predictor_;
    Rng rng_;
    std::vector<Eigen::VectorXd> columns_;
};

struct PredictiveOptions {
    std::uint64_t seed = 0;
    /// Gibbs sweeps over (w1, w2, Z_m) per stored draw, started from the previous draw's fields.
    int refresh_sweeps = 3;
    /// Extra sweeps before the first stored draw.
    int warmup_sweeps = 50;
    bool add_noise = false;
};

/// Post-hoc composition sampling from a SampleStore. w1, w2 and Z_m are not stored, so for
/// each retained (parameters, w*) they are refreshed from their full conditionals with a
/// few Gibbs sweeps, warm-started from the previous draw.
inline Eigen::MatrixXd predictive_draws(const std::vector<PredictionTarget>& targets, const SampleStore& store,
                                        const ValidatedDataset& data, const KnotSet& knots, const Priors& priors,
                                        const PredictiveOptions& opts = {}) {
    if (store.size() == 0) throw DomainError("predictive_draws: empty sample store");
    if (opts.refresh_sweeps < 1 || opts.warmup_sweeps < 0) throw ConfigError("predictive_draws: invalid sweep counts");
    CompositionPredictor predictor(data, knots, targets, opts.add_noise);
    ChainConfig cfg;
    cfg.n_iter = 1;
    cfg.burn_in = 0;
    cfg.seed = opts.seed;
    cfg.initial = store.params.front();
    cfg.pinned = PinnedParams::all();
    cfg.warm_start_sweeps = 0;
    GibbsSampler sampler(data, priors, knots, cfg);
    sampler.initialize();
    Rng& rng = sampler.rng();

    Eigen::MatrixXd out(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(store.size()));
    for (std::size_t k = 0; k < store.size(); ++k) {
        LatentState l = sampler.latent();
        l.w_star = store.w_star[k];
        sampler.set_state(store.params[k], l);
        const int sweeps = opts.refresh_sweeps + (k == 0 ? opts.warmup_sweeps : 0);
        for (int i = 0; i < sweeps; ++i) {
            sampler.update_w1();
            sampler.update_w2();
            sampler.impute_missing();
        }
        out.col(static_cast<Eigen::Index>(k)) = predictor.draw(sampler, rng);
    }
    return out;
}

}  // namespace aagp
