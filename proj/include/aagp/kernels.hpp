#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "aagp/error.hpp"

namespace aagp {

/// Nonseparable space-time correlation parameters (Gneiting family).
/// `alpha` is a fixed configuration constant and is never sampled.
struct NonsepParams {
    double a = 1.0;      // temporal range, time-units^(2 alpha)
    double c = 1.0;      // spatial range
    double beta = 0.5;   // space-time interaction in [0, 1]
    double alpha = 0.5;  // temporal smoothness in (0, 1]
    int d = 2;           // spatial dimension
};

enum class CorrFamily { exponential, squared_exponential };

/// Separable correlation: spatial factor times temporal factor.
struct SepParams {
    double phi_s = 1.0;
    double phi_u = 1.0;
    CorrFamily space_family = CorrFamily::exponential;
    CorrFamily time_family = CorrFamily::exponential;
};

struct SpaceTimeLocation {
    Eigen::VectorXd s;
    double u = 0.0;
};

enum class DistanceMetric { euclidean, chordal };

inline constexpr double kEarthRadiusKm = 6371.0;

inline std::string_view to_string(CorrFamily f) {
    return f == CorrFamily::exponential ? "exponential" : "squared_exponential";
}

inline CorrFamily parse_corr_family(std::string_view name) {
    if (name == "exponential") return CorrFamily::exponential;
    if (name == "squared_exponential") return CorrFamily::squared_exponential;
    throw DomainError("unknown correlation family '" + std::string(name) + "'");
}

inline std::string_view to_string(DistanceMetric m) {
    return m == DistanceMetric::euclidean ? "euclidean" : "chordal";
}

inline DistanceMetric parse_distance_metric(std::string_view name) {
    if (name == "euclidean") return DistanceMetric::euclidean;
    if (name == "chordal") return DistanceMetric::chordal;
    throw DomainError("unknown distance metric '" + std::string(name) + "'");
}

inline void validate(const NonsepParams& p) {
    if (!(p.a > 0.0) || !std::isfinite(p.a)) throw DomainError("gneiting: a must be positive");
    if (!(p.c > 0.0) || !std::isfinite(p.c)) throw DomainError("gneiting: c must be positive");
    if (!(p.beta >= 0.0 && p.beta <= 1.0)) throw DomainError("gneiting: beta must lie in [0, 1]");
    if (!(p.alpha > 0.0 && p.alpha <= 1.0)) throw DomainError("gneiting: alpha must lie in (0, 1]");
    if (p.d < 1) throw DomainError("gneiting: spatial dimension must be positive");
}

inline void validate(const SepParams& p) {
    if (!(p.phi_s > 0.0) || !std::isfinite(p.phi_s)) throw DomainError("separable: phi_s must be positive");
    if (!(p.phi_u > 0.0) || !std::isfinite(p.phi_u)) throw DomainError("separable: phi_u must be positive");
}

namespace detail {
inline void check_lags(double h, double t) {
    if (!std::isfinite(h) || !std::isfinite(t)) throw DomainError("correlation: non-finite lag");
    if (h < 0.0 || t < 0.0) throw DomainError("correlation: lags must be nonnegative");
}
}  // namespace detail

/// Temporal scaling psi = t^(2 alpha) / a + 1 of the Gneiting family.
inline double gneiting_psi(double t, const NonsepParams& p) {
    return std::pow(t, 2.0 * p.alpha) / p.a + 1.0;
}

/// Gneiting correlation psi^(-d/2) exp(-h / (c psi^(beta/2))) with psi = t^(2 alpha)/a + 1.
inline double gneiting_corr(double h, double t, const NonsepParams& p) {
    detail::check_lags(h, t);
    const double psi = gneiting_psi(t, p);
    return std::pow(psi, -0.5 * p.d) * std::exp(-h / (p.c * std::pow(psi, 0.5 * p.beta)));
}

inline double family_corr(double lag, double range, CorrFamily family) {
    const double r = lag / range;
    return family == CorrFamily::exponential ? std::exp(-r) : std::exp(-r * r);
}

inline double separable_corr(double h, double t, const SepParams& p) {
    detail::check_lags(h, t);
    return family_corr(h, p.phi_s, p.space_family) * family_corr(t, p.phi_u, p.time_family);
}

/// Straight-line distance in km between two lon/lat points (degrees) on a sphere of radius 6371 km.
inline double chordal_distance(double lon1, double lat1, double lon2, double lat2) {
    auto check = [](double lon, double lat) {
        if (!std::isfinite(lon) || !std::isfinite(lat) || lat < -90.0 || lat > 90.0 || lon < -180.0 || lon > 180.0)
            throw DomainError("chordal_distance: coordinates out of range");
    };
    check(lon1, lat1);
    check(lon2, lat2);
    constexpr double deg = 3.14159265358979323846 / 180.0;
    const double p1 = lat1 * deg, p2 = lat2 * deg, l1 = lon1 * deg, l2 = lon2 * deg;
    const double dx = std::cos(p1) * std::cos(l1) - std::cos(p2) * std::cos(l2);
    const double dy = std::cos(p1) * std::sin(l1) - std::cos(p2) * std::sin(l2);
    const double dz = std::sin(p1) - std::sin(p2);
    return kEarthRadiusKm * std::sqrt(dx * dx + dy * dy + dz * dz);
}

template <typename A, typename B>
double spatial_distance(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y, DistanceMetric metric) {
    if (x.size() != y.size()) throw DimensionError("spatial_distance: dimension mismatch");
    if (metric == DistanceMetric::chordal) {
        if (x.size() != 2) throw DimensionError("chordal metric needs (lon, lat) coordinates");
        return chordal_distance(x(0), x(1), y(0), y(1));
    }
    return (x - y).norm();
}

/// Pairwise distances between rows of `a` and rows of `b`.
inline Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, DistanceMetric metric) {
    if (a.cols() != b.cols()) throw DimensionError("distance_matrix: dimension mismatch");
    Eigen::MatrixXd out(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out(i, j) = spatial_distance(a.row(i).transpose(), b.row(j).transpose(), metric);
    return out;
}

/// Correlation matrix between two location lists for a kernel callable k(h, t).
template <typename Kernel>
Eigen::MatrixXd corr_matrix(const std::vector<SpaceTimeLocation>& lhs, const std::vector<SpaceTimeLocation>& rhs,
                            Kernel&& kernel, DistanceMetric metric = DistanceMetric::euclidean) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(lhs.size()), static_cast<Eigen::Index>(rhs.size()));
    if (!lhs.empty() && !rhs.empty()) {
        const auto d = lhs.front().s.size();
        for (const auto& x : lhs)
            if (x.s.size() != d) throw DimensionError("corr_matrix: inconsistent spatial dimension");
        for (const auto& x : rhs)
            if (x.s.size() != d) throw DimensionError("corr_matrix: inconsistent spatial dimension");
    }
    for (std::size_t j = 0; j < rhs.size(); ++j) {
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            const double h = spatial_distance(lhs[i].s, rhs[j].s, metric);
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                kernel(h, std::abs(lhs[i].u - rhs[j].u));
        }
    }
    return out;
}

}  // namespace aagp
