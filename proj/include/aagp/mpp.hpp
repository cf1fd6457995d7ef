#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aagp/dataset.hpp"
#include "aagp/error.hpp"
#include "aagp/kernels.hpp"
#include "aagp/linalg.hpp"
#include "aagp/random.hpp"

namespace aagp {

inline constexpr Eigen::Index kMaxKnots = 100000;

/// Axis-aligned box over (spatial coords..., time).
struct DomainBox {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    [[nodiscard]] Eigen::Index dim() const { return lower.size(); }
};

inline DomainBox grid_bounding_box(const ValidatedDataset& data) {
    const Eigen::Index d = data.sites().cols();
    DomainBox box{Eigen::VectorXd(d + 1), Eigen::VectorXd(d + 1)};
    box.lower.head(d) = data.sites().colwise().minCoeff().transpose();
    box.upper.head(d) = data.sites().colwise().maxCoeff().transpose();
    box.lower(d) = data.times().minCoeff();
    box.upper(d) = data.times().maxCoeff();
    return box;
}

enum class KnotDesign { uniform_random, latin_hypercube };

inline KnotDesign parse_knot_design(const std::string& name) {
    if (name == "uniform_random") return KnotDesign::uniform_random;
    if (name == "latin_hypercube") return KnotDesign::latin_hypercube;
    throw DomainError("unknown knot design '" + name + "'");
}

inline std::string to_string(KnotDesign d) {
    return d == KnotDesign::uniform_random ? "uniform_random" : "latin_hypercube";
}

/// Space-time knots; fixed for a whole MCMC run.
struct KnotSet {
    Eigen::MatrixXd sites;  // m x d
    Eigen::VectorXd times;  // m
    KnotDesign design = KnotDesign::uniform_random;
    std::uint64_t seed = 0;

    [[nodiscard]] Eigen::Index m() const { return times.size(); }
    [[nodiscard]] SpaceTimeLocation location(Eigen::Index j) const { return {sites.row(j).transpose(), times(j)}; }
};

inline void check_knots(const KnotSet& k) {
    if (k.m() < 1) throw ValidationError(ValidationError::Kind::other, "knots: need at least one knot");
    if (k.sites.rows() != k.m()) throw DimensionError("knots: sites/times length mismatch");
    std::set<std::vector<double>> seen;
    for (Eigen::Index j = 0; j < k.m(); ++j) {
        std::vector<double> key(static_cast<std::size_t>(k.sites.cols()) + 1);
        for (Eigen::Index c = 0; c < k.sites.cols(); ++c) key[static_cast<std::size_t>(c)] = k.sites(j, c);
        key.back() = k.times(j);
        if (!seen.insert(key).second) throw ValidationError(ValidationError::Kind::other, "knots: duplicate knot");
    }
}

/// Knots drawn i.i.d. uniform in the box, or one-per-bin Latin hypercube with independently
/// permuted bins per coordinate. Deterministic given the seed.
inline KnotSet select_knots(const DomainBox& box, Eigen::Index m, KnotDesign design, std::uint64_t seed) {
    if (m < 1) throw DomainError("select_knots: m must be positive");
    if (m > kMaxKnots) throw DomainError("select_knots: m exceeds the maximum of " + std::to_string(kMaxKnots));
    if (box.lower.size() != box.upper.size() || box.dim() < 2)
        throw DimensionError("select_knots: box needs at least one spatial and the time coordinate");
    if (!(box.upper.array() >= box.lower.array()).all()) throw DomainError("select_knots: invalid box");

    Rng rng(seed);
    const Eigen::Index dim = box.dim();
    Eigen::MatrixXd pts(m, dim);
    if (design == KnotDesign::uniform_random) {
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index c = 0; c < dim; ++c) pts(j, c) = rng.uniform(box.lower(c), box.upper(c));
    } else {
        std::vector<Eigen::Index> bins(static_cast<std::size_t>(m));
        for (Eigen::Index c = 0; c < dim; ++c) {
            std::iota(bins.begin(), bins.end(), Eigen::Index{0});
            std::shuffle(bins.begin(), bins.end(), rng.engine());
            const double width = (box.upper(c) - box.lower(c)) / static_cast<double>(m);
            for (Eigen::Index j = 0; j < m; ++j)
                pts(j, c) = box.lower(c) + (static_cast<double>(bins[static_cast<std::size_t>(j)]) + rng.uniform()) * width;
        }
    }
    KnotSet k{pts.leftCols(dim - 1), pts.col(dim - 1), design, seed};
    check_knots(k);
    return k;
}

/// Floor applied to V wherever it is divided by.
inline constexpr double kVFloor = 1e-10;

/// Modified-predictive-process structures for one value of the nonseparable parameters.
/// The cross-correlation is kept in whitened form B = L^{-1} R_nm^T with R_* = L L^T,
/// so that R_nm R_*^{-1} w* = B^T (L^{-1} w*) and V_i = 1 - ||B_i||^2.
struct MppStructures {
    NonsepParams params;
    Eigen::MatrixXd B;            // m x n
    CholeskyFactor Rstar_chol;    // of the m x m knot correlation
    Eigen::VectorXd V;            // clamped to [0, 1]

    [[nodiscard]] Eigen::Index n() const { return B.cols(); }
    [[nodiscard]] Eigen::Index m() const { return B.rows(); }

    /// n x m cross-correlation R(x_i, x*_j).
    [[nodiscard]] Eigen::MatrixXd R_nm() const { return (Rstar_chol.L * B).transpose(); }

    /// V with the division floor applied.
    [[nodiscard]] Eigen::VectorXd v_floored() const { return V.cwiseMax(kVFloor); }

    /// R_nm R_*^{-1} w*
    [[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& w_star) const {
        return B.transpose() * Rstar_chol.half_solve(w_star);
    }
};

namespace detail {

inline Eigen::MatrixXd knot_correlation(const KnotSet& knots, const NonsepParams& p, DistanceMetric metric) {
    const Eigen::Index m = knots.m();
    Eigen::MatrixXd r(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        r(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < m; ++i) {
            const double h = spatial_distance(knots.sites.row(i), knots.sites.row(j), metric);
            r(i, j) = r(j, i) = gneiting_corr(h, std::abs(knots.times(i) - knots.times(j)), p);
        }
    }
    return r;
}

inline MppStructures finish_mpp(const NonsepParams& p, Eigen::MatrixXd r_mn, const Eigen::MatrixXd& r_star) {
    MppStructures out;
    out.params = p;
    try {
        out.Rstar_chol = cholesky_spd(r_star, "knot correlation R_*");
    } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(std::string("degenerate knots: ") + e.what());
    }
    out.Rstar_chol.L.triangularView<Eigen::Lower>().solveInPlace(r_mn);
    out.B = std::move(r_mn);
    out.V = (1.0 - out.B.colwise().squaredNorm().transpose().array()).cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

}  // namespace detail

/// MPP structures for an arbitrary list of locations.
inline MppStructures build_mpp(const std::vector<SpaceTimeLocation>& locs, const KnotSet& knots, const NonsepParams& p,
                               DistanceMetric metric = DistanceMetric::euclidean) {
    validate(p);
    check_knots(knots);
    std::vector<SpaceTimeLocation> klocs;
    for (Eigen::Index j = 0; j < knots.m(); ++j) klocs.push_back(knots.location(j));
    for (const auto& x : locs)
        if (x.s.size() != knots.sites.cols()) throw DimensionError("build_mpp: location/knot dimension mismatch");
    auto kernel = [&](double h, double t) { return gneiting_corr(h, t, p); };
    Eigen::MatrixXd r_mn = corr_matrix(klocs, locs, kernel, metric);
    return detail::finish_mpp(p, std::move(r_mn), detail::knot_correlation(knots, p, metric));
}

/// Builds MPP structures over a full data grid, reusing site-knot distances and
/// time-knot lags across parameter values. Only n*m exponentials per rebuild.
class GridMppBuilder {
public:
    GridMppBuilder(const ValidatedDataset& data, const KnotSet& knots) : knots_(knots), metric_(data.metric()) {
        check_knots(knots);
        if (knots.sites.cols() != data.sites().cols())
            throw DimensionError("GridMppBuilder: knot and site dimensions differ");
        const Eigen::Index m = knots.m();
        site_knot_dist_ = distance_matrix(knots.sites, data.sites(), metric_);  // m x n1
        time_knot_lag_.resize(m, data.n_times());
        for (Eigen::Index j = 0; j < data.n_times(); ++j)
            time_knot_lag_.col(j) = (knots.times.array() - data.times()(j)).abs();
    }

    [[nodiscard]] MppStructures build(const NonsepParams& p) const {
        validate(p);
        const Eigen::Index m = knots_.m(), n1 = site_knot_dist_.cols(), n2 = time_knot_lag_.cols();
        Eigen::ArrayXXd psi = time_knot_lag_.array().pow(2.0 * p.alpha) / p.a + 1.0;
        Eigen::ArrayXXd temporal = psi.pow(-0.5 * p.d);
        Eigen::ArrayXXd inv_range = -1.0 / (p.c * psi.pow(0.5 * p.beta));
        Eigen::MatrixXd r_mn(m, n1 * n2);
        for (Eigen::Index i = 0; i < n1; ++i) {
            const auto dist = site_knot_dist_.col(i).array();
            for (Eigen::Index j = 0; j < n2; ++j)
                r_mn.col(i * n2 + j).array() = temporal.col(j) * (dist * inv_range.col(j)).exp();
        }
        return detail::finish_mpp(p, std::move(r_mn), detail::knot_correlation(knots_, p, metric_));
    }

    [[nodiscard]] const KnotSet& knots() const { return knots_; }
    [[nodiscard]] DistanceMetric metric() const { return metric_; }

private:
    KnotSet knots_;
    DistanceMetric metric_;
    Eigen::MatrixXd site_knot_dist_;
    Eigen::MatrixXd time_knot_lag_;
};

inline MppStructures build_mpp(const ValidatedDataset& data, const KnotSet& knots, const NonsepParams& p) {
    return GridMppBuilder(data, knots).build(p);
}

}  // namespace aagp
