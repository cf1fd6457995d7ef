#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "aagp/error.hpp"

namespace aagp {

/// Sample autocovariances at lags 0..max_lag (divisor n).
inline Eigen::VectorXd autocovariance(const Eigen::VectorXd& x, Eigen::Index max_lag) {
    const Eigen::Index n = x.size();
    const Eigen::VectorXd c = x.array() - x.mean();
    Eigen::VectorXd out(max_lag + 1);
    for (Eigen::Index k = 0; k <= max_lag; ++k)
        out(k) = c.head(n - k).dot(c.tail(n - k)) / static_cast<double>(n);
    return out;
}

/// Effective sample size with Geyer's initial positive sequence estimator.
inline double effective_sample_size(const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    if (n < 4) throw DomainError("ess: need at least 4 draws");
    const Eigen::VectorXd acov = autocovariance(x, n - 1);
    if (!(acov(0) > 0.0)) return static_cast<double>(n);
    double tau = -1.0;
    for (Eigen::Index k = 0; k + 1 < n; k += 2) {
        const double pair = (acov(k) + acov(k + 1)) / acov(0);
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    return static_cast<double>(n) / std::max(tau, 1.0 / static_cast<double>(n));
}

/// Variance of the sample mean, var / ESS.
inline double mean_variance(const Eigen::VectorXd& x) {
    const double n = static_cast<double>(x.size());
    const double var = (x.array() - x.mean()).square().sum() / (n - 1.0);
    return var / effective_sample_size(x);
}

/// Geweke convergence z-score comparing the first 10% and last 50% of a chain.
inline double geweke_z(const Eigen::VectorXd& x, double first = 0.1, double last = 0.5) {
    const Eigen::Index n = x.size();
    const auto na = static_cast<Eigen::Index>(std::floor(first * static_cast<double>(n)));
    const auto nb = static_cast<Eigen::Index>(std::floor(last * static_cast<double>(n)));
    if (na < 4 || nb < 4 || first + last > 1.0) throw DomainError("geweke_z: chain too short for the windows");
    const Eigen::VectorXd a = x.head(na), b = x.tail(nb);
    const double denom = std::sqrt(mean_variance(a) + mean_variance(b));
    return denom > 0.0 ? (a.mean() - b.mean()) / denom : 0.0;
}

}  // namespace aagp
