#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
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

namespace aagp {

enum class Scenario { nonseparable = 1, separable = 2, additive = 3 };

inline Scenario parse_scenario(const std::string& s) {
    if (s == "1" || s == "nonseparable") return Scenario::nonseparable;
    if (s == "2" || s == "separable") return Scenario::separable;
    if (s == "3" || s == "additive") return Scenario::additive;
    throw ConfigError("unknown scenario '" + s + "' (expected nonseparable, separable or additive)");
}

inline std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::nonseparable: return "nonseparable";
        case Scenario::separable: return "separable";
        default: return "additive";
    }
}

struct ScenarioSpec {
    Scenario scenario = Scenario::additive;
    Eigen::Index n_sites = 225;
    Eigen::Index n_times = 20;
    ModelParams truth;
    DomainBox box;
    std::uint64_t seed = 0;
};

inline constexpr Eigen::Index kSimulationGuard = 10000;

/// Scenario defaults on [0,20]^2 x [0,20]: b = (1, 0.5), tau2 = 0.2; Gneiting part with
/// sigma2_1 = 1, a = 1, c = 5, beta = 0.8, alpha = 0.5; squared-exponential separable part
/// with sigma2_2 = 1, phi_s = 5, phi_u = 1. The unused component's variance is 0.
inline ScenarioSpec default_scenario_spec(Scenario s, std::uint64_t seed = 0) {
    ScenarioSpec spec;
    spec.scenario = s;
    spec.seed = seed;
    spec.truth.b = Eigen::Vector2d(1.0, 0.5);
    spec.truth.tau2 = 0.2;
    spec.truth.theta1 = {1.0, 5.0, 0.8, 0.5, 2};
    spec.truth.theta2 = {5.0, 1.0, CorrFamily::squared_exponential, CorrFamily::squared_exponential};
    spec.truth.sigma2_1 = s == Scenario::separable ? 0.0 : 1.0;
    spec.truth.sigma2_2 = s == Scenario::nonseparable ? 0.0 : 1.0;
    spec.box.lower = Eigen::Vector3d::Zero();
    spec.box.upper = Eigen::Vector3d::Constant(20.0);
    return spec;
}

inline void validate(const ScenarioSpec& spec) {
    if (spec.n_sites < 1 || spec.n_times < 1) throw ConfigError("scenario: need at least one site and time");
    if (spec.n_sites * spec.n_times > kSimulationGuard)
        throw ValidationError(ValidationError::Kind::size_guard, "scenario: n_sites * n_times exceeds 10000");
    if (spec.box.dim() < 2 || spec.box.lower.size() != spec.box.upper.size())
        throw DimensionError("scenario: box needs spatial coordinates and time");
    if (!(spec.box.upper.array() > spec.box.lower.array()).all()) throw ConfigError("scenario: empty domain box");
    if (spec.truth.b.size() != 2) throw ConfigError("scenario: b must have two entries (h1, h2)");
    if (!(spec.truth.tau2 >= 0.0) || !(spec.truth.sigma2_1 >= 0.0) || !(spec.truth.sigma2_2 >= 0.0))
        throw ConfigError("scenario: variances must be nonnegative");
    if (spec.scenario == Scenario::separable && spec.truth.sigma2_1 != 0.0)
        throw ConfigError("scenario: the separable scenario has no nonseparable component (sigma2_1 must be 0)");
    if (spec.scenario == Scenario::nonseparable && spec.truth.sigma2_2 != 0.0)
        throw ConfigError("scenario: the nonseparable scenario has no separable component (sigma2_2 must be 0)");
    if (spec.truth.sigma2_1 > 0.0) validate(spec.truth.theta1);
    if (spec.truth.sigma2_2 > 0.0) validate(spec.truth.theta2);
}

/// A generated dataset with its noise-free truth Y and the complete noisy response.
struct SimulatedData {
    Dataset data;
    Eigen::VectorXd y;  // latent truth over the grid
    Eigen::VectorXd z;  // Y + noise over the grid
};

/// Sites and times uniform in the box, h1 ~ N(0,1), h2(x) = cos(sum of coordinates),
/// Y = Hb + w1 + w2 with exact Gaussian draws, Z = Y + N(0, tau2). All cells observed.
inline SimulatedData generate_scenario(const ScenarioSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const Eigen::Index n1 = spec.n_sites, n2 = spec.n_times, n = n1 * n2, d = spec.box.dim() - 1;
    const auto& p = spec.truth;

    Dataset ds;
    ds.sites.resize(n1, d);
    for (Eigen::Index i = 0; i < n1; ++i)
        for (Eigen::Index c = 0; c < d; ++c) ds.sites(i, c) = rng.uniform(spec.box.lower(c), spec.box.upper(c));
    std::vector<double> t(static_cast<std::size_t>(n2));
    for (auto& x : t) x = rng.uniform(spec.box.lower(d), spec.box.upper(d));
    std::sort(t.begin(), t.end());
    ds.times = Eigen::Map<Eigen::VectorXd>(t.data(), n2);

    ds.covariates.resize(n, 2);
    for (Eigen::Index i = 0; i < n1; ++i)
        for (Eigen::Index j = 0; j < n2; ++j) {
            const Eigen::Index k = i * n2 + j;
            ds.covariates(k, 0) = rng.normal();
            ds.covariates(k, 1) = std::cos(ds.sites.row(i).sum() + ds.times(j));
        }
    ds.covariate_names = {"h1", "h2"};

    const Eigen::VectorXd xi1 = rng.normal_vector(n);
    const Eigen::VectorXd xi2 = rng.normal_vector(n);
    const Eigen::VectorXd eps = rng.normal_vector(n);

    Eigen::VectorXd y = ds.covariates * p.b;
    if (p.sigma2_1 > 0.0) {
        Eigen::MatrixXd r(n, n);
        for (Eigen::Index k = 0; k < n; ++k) {
            r(k, k) = 1.0;
            for (Eigen::Index l = k + 1; l < n; ++l) {
                const double h = (ds.sites.row(k / n2) - ds.sites.row(l / n2)).norm();
                r(k, l) = r(l, k) = gneiting_corr(h, std::abs(ds.times(k % n2) - ds.times(l % n2)), p.theta1);
            }
        }
        const auto chol = cholesky_spd(r, "nonseparable truth covariance");
        const Eigen::VectorXd w1 = chol.L.triangularView<Eigen::Lower>() * xi1;
        y += std::sqrt(p.sigma2_1) * w1;
    }
    if (p.sigma2_2 > 0.0) {
        const std::vector<double> schedule{1e-10, 1e-8, 1e-6};
        const Eigen::MatrixXd rs = family_matrix(distance_matrix(ds.sites, ds.sites, DistanceMetric::euclidean),
                                                 p.theta2.phi_s, p.theta2.space_family);
        Eigen::MatrixXd lags(n2, n2);
        for (Eigen::Index j = 0; j < n2; ++j)
            for (Eigen::Index i = 0; i < n2; ++i) lags(i, j) = std::abs(ds.times(i) - ds.times(j));
        const Eigen::MatrixXd ru = family_matrix(lags, p.theta2.phi_u, p.theta2.time_family);
        const auto ls = cholesky_spd(rs, schedule, "spatial truth factor");
        const auto lu = cholesky_spd(ru, schedule, "temporal truth factor");
        const Eigen::MatrixXd ls_low = ls.L.triangularView<Eigen::Lower>();
        const Eigen::MatrixXd lu_low = lu.L.triangularView<Eigen::Lower>();
        y += std::sqrt(p.sigma2_2) * kron_matvec(ls_low, lu_low, xi2);
    }

    SimulatedData out;
    out.y = y;
    out.z = y + std::sqrt(p.tau2) * eps;
    ds.mask.assign(static_cast<std::size_t>(n), true);
    ds.z_obs = out.z;
    ds.metric = DistanceMetric::euclidean;
    out.data = std::move(ds);
    return out;
}

struct HoldoutSplit {
    Dataset train;
    std::vector<Eigen::Index> test_cells;  // flat grid indices, ascending
    Eigen::VectorXd test_z;                // observed responses at test_cells
};

/// Random partition of the observed cells: round(fraction * n_obs) stay in training, the
/// rest become missing cells of the training dataset.
inline HoldoutSplit holdout_split(const ValidatedDataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError(ValidationError::Kind::invalid_parameter, "holdout: fraction must lie in (0, 1)");
    const Eigen::Index no = data.n_obs();
    const auto n_train = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(no)));
    if (n_train < 1 || n_train >= no)
        throw ValidationError(ValidationError::Kind::invalid_parameter, "holdout: split leaves no training or no test cells");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(no));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<Eigen::Index> test_pos(order.begin() + n_train, order.end());
    std::sort(test_pos.begin(), test_pos.end());

    HoldoutSplit out;
    out.train = data.raw();
    std::vector<bool> is_test(static_cast<std::size_t>(no), false);
    for (auto k : test_pos) is_test[static_cast<std::size_t>(k)] = true;
    Eigen::VectorXd z(n_train);
    Eigen::Index w = 0;
    out.test_z.resize(static_cast<Eigen::Index>(test_pos.size()));
    Eigen::Index tw = 0;
    for (Eigen::Index k = 0; k < no; ++k) {
        const Eigen::Index cell = data.observed_cells()[static_cast<std::size_t>(k)];
        if (is_test[static_cast<std::size_t>(k)]) {
            out.train.mask[static_cast<std::size_t>(cell)] = false;
            out.test_cells.push_back(cell);
            out.test_z(tw++) = data.z_obs()(k);
        } else {
            z(w++) = data.z_obs()(k);
        }
    }
    out.train.z_obs = z;
    return out;
}

struct Variogram {
    Eigen::VectorXd centers;
    Eigen::VectorXd gamma;  // NaN in empty bins
    std::vector<std::int64_t> pairs;
};

/// Binned semivariance gamma = sum (z_i - z_j)^2 / (2 N_bin) over site pairs. NaN values are
/// treated as missing; pairs at distance equal to an inner edge fall in the upper bin, and the
/// last bin is closed on the right.
inline Variogram empirical_variogram(const Eigen::MatrixXd& sites, const Eigen::VectorXd& values,
                                     const Eigen::VectorXd& edges, DistanceMetric metric = DistanceMetric::euclidean) {
    if (sites.rows() != values.size()) throw DimensionError("variogram: sites and values differ in length");
    if (sites.rows() < 2) throw DomainError("variogram: need at least two sites");
    if (edges.size() < 2) throw DomainError("variogram: need at least two bin edges");
    for (Eigen::Index b = 1; b < edges.size(); ++b)
        if (!(edges(b) > edges(b - 1))) throw DomainError("variogram: bin edges must be increasing");
    const Eigen::Index nb = edges.size() - 1;
    Variogram v;
    v.centers = 0.5 * (edges.head(nb) + edges.tail(nb));
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(nb);
    v.pairs.assign(static_cast<std::size_t>(nb), 0);
    for (Eigen::Index i = 0; i < sites.rows(); ++i) {
        if (std::isnan(values(i))) continue;
        for (Eigen::Index j = i + 1; j < sites.rows(); ++j) {
            if (std::isnan(values(j))) continue;
            const double h = spatial_distance(sites.row(i).transpose(), sites.row(j).transpose(), metric);
            if (h < edges(0) || h > edges(nb)) continue;
            auto it = std::upper_bound(edges.data(), edges.data() + edges.size(), h);
            Eigen::Index b = std::min<Eigen::Index>(static_cast<Eigen::Index>(it - edges.data()) - 1, nb - 1);
            const double diff = values(i) - values(j);
            sums(b) += diff * diff;
            ++v.pairs[static_cast<std::size_t>(b)];
        }
    }
    std::int64_t total = 0;
    v.gamma.resize(nb);
    for (Eigen::Index b = 0; b < nb; ++b) {
        const auto c = v.pairs[static_cast<std::size_t>(b)];
        total += c;
        v.gamma(b) = c > 0 ? sums(b) / (2.0 * static_cast<double>(c)) : std::numeric_limits<double>::quiet_NaN();
    }
    if (total == 0) throw DomainError("variogram: no site pairs fall inside the bins");
    return v;
}

/// Responses of one time slice over all sites, NaN where unobserved.
inline Eigen::VectorXd time_slice(const ValidatedDataset& data, Eigen::Index time_index) {
    if (time_index < 0 || time_index >= data.n_times()) throw DomainError("time index outside the grid");
    Eigen::VectorXd out = Eigen::VectorXd::Constant(data.n_sites(), std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index k = 0; k < data.n_obs(); ++k) {
        const Eigen::Index cell = data.observed_cells()[static_cast<std::size_t>(k)];
        if (cell % data.n_times() == time_index) out(cell / data.n_times()) = data.z_obs()(k);
    }
    return out;
}

}  // namespace aagp
