#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aagp/error.hpp"
#include "aagp/kernels.hpp"

namespace aagp {

/// Gridded space-time design. Cell (site i, time j) lives at flat index i * n_times + j
/// (time-fastest); mask, covariate rows and every latent vector share this ordering.
struct Dataset {
    Eigen::MatrixXd sites;        // n_sites x d
    Eigen::VectorXd times;        // n_times
    std::vector<bool> mask;       // n_sites * n_times, true = observed
    Eigen::VectorXd z_obs;        // observed responses in grid order
    Eigen::MatrixXd covariates;   // (n_sites * n_times) x p, required at every cell
    DistanceMetric metric = DistanceMetric::euclidean;
    std::vector<std::string> site_ids;
    std::vector<std::string> coord_names;
    std::vector<std::string> covariate_names;
};

/// A Dataset whose invariants have been checked, with cached site distances and time lags.
class ValidatedDataset {
public:
    [[nodiscard]] const Dataset& raw() const { return data_; }
    [[nodiscard]] Eigen::Index n_sites() const { return data_.sites.rows(); }
    [[nodiscard]] Eigen::Index n_times() const { return data_.times.size(); }
    [[nodiscard]] Eigen::Index n() const { return n_sites() * n_times(); }
    [[nodiscard]] Eigen::Index n_obs() const { return static_cast<Eigen::Index>(observed_.size()); }
    [[nodiscard]] Eigen::Index n_missing() const { return static_cast<Eigen::Index>(missing_.size()); }
    [[nodiscard]] Eigen::Index p() const { return data_.covariates.cols(); }
    [[nodiscard]] int spatial_dim() const { return static_cast<int>(data_.sites.cols()); }
    [[nodiscard]] DistanceMetric metric() const { return data_.metric; }

    [[nodiscard]] Eigen::Index flat_index(Eigen::Index site, Eigen::Index time) const { return site * n_times() + time; }

    [[nodiscard]] const Eigen::MatrixXd& sites() const { return data_.sites; }
    [[nodiscard]] const Eigen::VectorXd& times() const { return data_.times; }
    [[nodiscard]] const Eigen::MatrixXd& H() const { return data_.covariates; }
    [[nodiscard]] const Eigen::VectorXd& z_obs() const { return data_.z_obs; }
    [[nodiscard]] const std::vector<bool>& mask() const { return data_.mask; }
    [[nodiscard]] const std::vector<Eigen::Index>& observed_cells() const { return observed_; }
    [[nodiscard]] const std::vector<Eigen::Index>& missing_cells() const { return missing_; }
    [[nodiscard]] const Eigen::MatrixXd& site_distances() const { return site_dist_; }
    [[nodiscard]] const Eigen::MatrixXd& time_lags() const { return time_lag_; }

    [[nodiscard]] SpaceTimeLocation location(Eigen::Index k) const {
        return {data_.sites.row(k / n_times()).transpose(), data_.times(k % n_times())};
    }

    /// Full-grid response with `z_missing` scattered into the unobserved cells.
    [[nodiscard]] Eigen::VectorXd complete_z(const Eigen::VectorXd& z_missing) const {
        if (z_missing.size() != n_missing()) throw DimensionError("complete_z: wrong number of missing values");
        Eigen::VectorXd z(n());
        for (std::size_t k = 0; k < observed_.size(); ++k) z(observed_[k]) = data_.z_obs(static_cast<Eigen::Index>(k));
        for (std::size_t k = 0; k < missing_.size(); ++k) z(missing_[k]) = z_missing(static_cast<Eigen::Index>(k));
        return z;
    }

    /// Grid position of a site, or -1.
    [[nodiscard]] Eigen::Index find_site(const Eigen::VectorXd& s) const {
        for (Eigen::Index i = 0; i < n_sites(); ++i)
            if (s.size() == data_.sites.cols() && (data_.sites.row(i).transpose() - s).cwiseAbs().maxCoeff() == 0.0)
                return i;
        return -1;
    }

    [[nodiscard]] Eigen::Index find_time(double u) const {
        for (Eigen::Index j = 0; j < n_times(); ++j)
            if (data_.times(j) == u) return j;
        return -1;
    }

private:
    friend ValidatedDataset validate_dataset(Dataset d);

    Dataset data_;
    std::vector<Eigen::Index> observed_;
    std::vector<Eigen::Index> missing_;
    Eigen::MatrixXd site_dist_;
    Eigen::MatrixXd time_lag_;
};

/// Enforces the Dataset invariants and caches pairwise distances.
inline ValidatedDataset validate_dataset(Dataset d) {
    using Kind = ValidationError::Kind;
    const Eigen::Index n1 = d.sites.rows(), n2 = d.times.size();
    if (n1 == 0 || n2 == 0 || d.sites.cols() == 0)
        throw ValidationError(Kind::length_mismatch, "dataset: need at least one site, one time and one coordinate");
    const Eigen::Index n = n1 * n2;
    if (static_cast<Eigen::Index>(d.mask.size()) != n)
        throw ValidationError(Kind::length_mismatch, "dataset: mask length must equal n_sites * n_times");
    const auto n_true = std::count(d.mask.begin(), d.mask.end(), true);
    if (n_true != d.z_obs.size())
        throw ValidationError(Kind::length_mismatch, "dataset: " + std::to_string(n_true) + " observed cells but " +
                                                         std::to_string(d.z_obs.size()) + " responses");
    if (d.covariates.rows() != n)
        throw ValidationError(Kind::length_mismatch, "dataset: covariates needed for every grid cell");
    if (!d.sites.allFinite() || !d.times.allFinite())
        throw ValidationError(Kind::non_finite, "dataset: non-finite coordinates");
    if (!d.z_obs.allFinite()) throw ValidationError(Kind::non_finite, "dataset: non-finite responses");
    if (!d.covariates.allFinite()) throw ValidationError(Kind::non_finite, "dataset: non-finite covariates");
    if (d.metric == DistanceMetric::chordal && d.sites.cols() != 2)
        throw ValidationError(Kind::other, "dataset: chordal metric needs (lon, lat) sites");

    std::set<std::vector<double>> seen_sites;
    for (Eigen::Index i = 0; i < n1; ++i) {
        std::vector<double> key(static_cast<std::size_t>(d.sites.cols()));
        for (Eigen::Index c = 0; c < d.sites.cols(); ++c) key[static_cast<std::size_t>(c)] = d.sites(i, c);
        if (!seen_sites.insert(key).second)
            throw ValidationError(Kind::duplicate_site, "dataset: duplicate site at row " + std::to_string(i));
    }
    std::set<double> seen_times;
    for (Eigen::Index j = 0; j < n2; ++j)
        if (!seen_times.insert(d.times(j)).second)
            throw ValidationError(Kind::duplicate_time, "dataset: duplicate time point " + std::to_string(d.times(j)));

    if (d.site_ids.empty())
        for (Eigen::Index i = 0; i < n1; ++i) d.site_ids.push_back(std::to_string(i + 1));
    if (static_cast<Eigen::Index>(d.site_ids.size()) != n1)
        throw ValidationError(Kind::length_mismatch, "dataset: site_ids length mismatch");
    if (d.coord_names.empty()) {
        if (d.metric == DistanceMetric::chordal) {
            d.coord_names = {"lon", "lat"};
        } else {
            for (Eigen::Index c = 0; c < d.sites.cols(); ++c) d.coord_names.push_back("x" + std::to_string(c + 1));
        }
    }
    if (d.covariate_names.empty())
        for (Eigen::Index c = 0; c < d.covariates.cols(); ++c) d.covariate_names.push_back("h" + std::to_string(c + 1));

    ValidatedDataset v;
    for (Eigen::Index k = 0; k < n; ++k) (d.mask[static_cast<std::size_t>(k)] ? v.observed_ : v.missing_).push_back(k);
    v.site_dist_ = distance_matrix(d.sites, d.sites, d.metric);
    v.time_lag_.resize(n2, n2);
    for (Eigen::Index j = 0; j < n2; ++j)
        for (Eigen::Index i = 0; i < n2; ++i) v.time_lag_(i, j) = std::abs(d.times(i) - d.times(j));
    v.data_ = std::move(d);
    return v;
}

}  // namespace aagp
