#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aagp/dataset.hpp"
#include "aagp/error.hpp"
#include "aagp/kernels.hpp"

namespace aagp {

inline constexpr int kSeasonLength = 184;

struct PanelRow {
    std::string site_id;
    double lon = 0.0;
    double lat = 0.0;
    int day = 1;
    double value = 0.0;  // NaN when absent
};

/// Long-format site/day table.
struct RawPanel {
    std::vector<PanelRow> rows;
    int season_length = kSeasonLength;
};

inline void validate(const RawPanel& panel) {
    using Kind = ValidationError::Kind;
    if (panel.season_length < 1) throw ValidationError(Kind::invalid_parameter, "panel: season length must be positive");
    std::set<std::pair<std::string, int>> seen;
    std::map<std::string, std::pair<double, double>> coords;
    for (const auto& r : panel.rows) {
        if (r.site_id.empty()) throw ValidationError(Kind::other, "panel: empty site id");
        if (r.day < 1 || r.day > panel.season_length)
            throw ValidationError(Kind::invalid_parameter, "panel: day " + std::to_string(r.day) + " at site " + r.site_id +
                                                               " outside 1.." + std::to_string(panel.season_length));
        if (!std::isfinite(r.lon) || !std::isfinite(r.lat))
            throw ValidationError(Kind::non_finite, "panel: non-finite coordinates at site " + r.site_id);
        if (std::isinf(r.value)) throw ValidationError(Kind::non_finite, "panel: infinite value at site " + r.site_id);
        if (!seen.insert({r.site_id, r.day}).second)
            throw ValidationError(Kind::duplicate_time,
                                  "panel: duplicate (site, day) = (" + r.site_id + ", " + std::to_string(r.day) + ")");
        auto [it, fresh] = coords.emplace(r.site_id, std::make_pair(r.lon, r.lat));
        if (!fresh && (it->second.first != r.lon || it->second.second != r.lat))
            throw ValidationError(Kind::duplicate_site, "panel: site " + r.site_id + " has inconsistent coordinates");
    }
}

/// Site ids in order of first appearance.
inline std::vector<std::string> panel_sites(const RawPanel& panel) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : panel.rows)
        if (seen.insert(r.site_id).second) out.push_back(r.site_id);
    return out;
}

/// mu(s, u) = a(s) + sum_j b_j cos(2 pi j u / L) + c_j sin(2 pi j u / L).
struct SeasonalTrend {
    std::vector<std::string> sites;
    Eigen::VectorXd intercepts;  // a(s), aligned with `sites`
    Eigen::VectorXd cos_coef;    // b_j
    Eigen::VectorXd sin_coef;    // c_j
    int season_length = kSeasonLength;

    [[nodiscard]] int n_harmonics() const { return static_cast<int>(cos_coef.size()); }

    [[nodiscard]] double harmonic(int day) const {
        double out = 0.0;
        for (int j = 1; j <= n_harmonics(); ++j) {
            const double arg = 2.0 * std::numbers::pi * j * day / season_length;
            out += cos_coef(j - 1) * std::cos(arg) + sin_coef(j - 1) * std::sin(arg);
        }
        return out;
    }

    [[nodiscard]] double mu(const std::string& site, int day) const {
        auto it = std::find(sites.begin(), sites.end(), site);
        if (it == sites.end()) throw DomainError("trend: unknown site " + site);
        return intercepts(it - sites.begin()) + harmonic(day);
    }
};

namespace detail {
inline Eigen::RowVectorXd harmonic_row(int day, int n_harmonics, int season_length) {
    Eigen::RowVectorXd x(2 * n_harmonics);
    for (int j = 1; j <= n_harmonics; ++j) {
        const double arg = 2.0 * std::numbers::pi * j * day / season_length;
        x(2 * (j - 1)) = std::cos(arg);
        x(2 * (j - 1) + 1) = std::sin(arg);
    }
    return x;
}
}  // namespace detail

/// OLS of value on site indicators plus the harmonics, solved by within-site demeaning.
inline SeasonalTrend fit_seasonal_trend(const RawPanel& panel, int n_harmonics = 3) {
    validate(panel);
    if (n_harmonics < 1) throw ValidationError(ValidationError::Kind::invalid_parameter, "trend: need at least one harmonic");
    const auto sites = panel_sites(panel);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < sites.size(); ++i) index[sites[i]] = i;

    const int q = 2 * n_harmonics;
    std::vector<int> counts(sites.size(), 0);
    Eigen::MatrixXd xsum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sites.size()), q);
    Eigen::VectorXd ysum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sites.size()));
    std::vector<std::size_t> used;
    for (std::size_t r = 0; r < panel.rows.size(); ++r) {
        const auto& row = panel.rows[r];
        if (std::isnan(row.value)) continue;
        const auto i = static_cast<Eigen::Index>(index[row.site_id]);
        ++counts[static_cast<std::size_t>(i)];
        xsum.row(i) += detail::harmonic_row(row.day, n_harmonics, panel.season_length);
        ysum(i) += row.value;
        used.push_back(r);
    }
    std::string short_sites;
    for (std::size_t i = 0; i < sites.size(); ++i)
        if (counts[i] < q + 1) short_sites += (short_sites.empty() ? "" : ", ") + sites[i];
    if (!short_sites.empty())
        throw ValidationError(ValidationError::Kind::rank_deficient,
                              "trend: fewer than " + std::to_string(q + 1) + " observations at sites: " + short_sites);

    Eigen::MatrixXd x(static_cast<Eigen::Index>(used.size()), q);
    Eigen::VectorXd y(x.rows());
    for (std::size_t k = 0; k < used.size(); ++k) {
        const auto& row = panel.rows[used[k]];
        const auto i = static_cast<Eigen::Index>(index[row.site_id]);
        const double c = counts[static_cast<std::size_t>(i)];
        x.row(static_cast<Eigen::Index>(k)) = detail::harmonic_row(row.day, n_harmonics, panel.season_length) - xsum.row(i) / c;
        y(static_cast<Eigen::Index>(k)) = row.value - ysum(i) / c;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < q) {
        std::string all;
        for (std::size_t i = 0; i < sites.size(); ++i) all += (all.empty() ? "" : ", ") + sites[i];
        throw ValidationError(ValidationError::Kind::rank_deficient,
                              "trend: harmonic design is rank deficient after removing site means (sites: " + all + ")");
    }
    const Eigen::VectorXd coef = qr.solve(y);

    SeasonalTrend t;
    t.sites = sites;
    t.season_length = panel.season_length;
    t.cos_coef.resize(n_harmonics);
    t.sin_coef.resize(n_harmonics);
    for (int j = 0; j < n_harmonics; ++j) {
        t.cos_coef(j) = coef(2 * j);
        t.sin_coef(j) = coef(2 * j + 1);
    }
    t.intercepts.resize(static_cast<Eigen::Index>(sites.size()));
    for (std::size_t i = 0; i < sites.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double c = counts[i];
        t.intercepts(ii) = ysum(ii) / c - (xsum.row(ii) / c).dot(coef);
    }
    return t;
}

struct StandardizedPanel {
    RawPanel panel;           // values replaced by (value - mu) / k
    std::vector<std::string> sites;
    Eigen::VectorXd scale;    // k(s), sample sd with n - 1 denominator
};

inline StandardizedPanel standardize(const RawPanel& panel, const SeasonalTrend& trend) {
    validate(panel);
    StandardizedPanel out;
    out.panel = panel;
    out.sites = trend.sites;
    const auto ns = static_cast<Eigen::Index>(trend.sites.size());
    std::map<std::string, Eigen::Index> index;
    for (Eigen::Index i = 0; i < ns; ++i) index[trend.sites[static_cast<std::size_t>(i)]] = i;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(ns), sumsq = Eigen::VectorXd::Zero(ns);
    Eigen::VectorXi count = Eigen::VectorXi::Zero(ns);
    std::vector<double> resid(panel.rows.size());
    for (std::size_t r = 0; r < panel.rows.size(); ++r) {
        const auto& row = panel.rows[r];
        auto it = index.find(row.site_id);
        if (it == index.end()) throw DomainError("standardize: site " + row.site_id + " missing from the trend");
        if (std::isnan(row.value)) continue;
        resid[r] = row.value - trend.intercepts(it->second) - trend.harmonic(row.day);
        sum(it->second) += resid[r];
        ++count(it->second);
    }
    for (std::size_t r = 0; r < panel.rows.size(); ++r) {
        const auto& row = panel.rows[r];
        if (std::isnan(row.value)) continue;
        const Eigen::Index i = index[row.site_id];
        const double dev = resid[r] - sum(i) / count(i);
        sumsq(i) += dev * dev;
    }
    out.scale.resize(ns);
    for (Eigen::Index i = 0; i < ns; ++i) {
        if (count(i) < 2)
            throw ValidationError(ValidationError::Kind::other,
                                  "standardize: site " + trend.sites[static_cast<std::size_t>(i)] + " has fewer than 2 residuals");
        out.scale(i) = std::sqrt(sumsq(i) / (count(i) - 1));
        if (!(out.scale(i) > 0.0))
            throw ValidationError(ValidationError::Kind::other,
                                  "standardize: site " + trend.sites[static_cast<std::size_t>(i)] + " has zero residual spread");
    }
    for (std::size_t r = 0; r < panel.rows.size(); ++r) {
        auto& row = out.panel.rows[r];
        if (!std::isnan(row.value)) row.value = resid[r] / out.scale(index[row.site_id]);
    }
    return out;
}

/// Inverse of standardize.
inline RawPanel unstandardize(const StandardizedPanel& sp, const SeasonalTrend& trend) {
    RawPanel out = sp.panel;
    for (auto& row : out.rows) {
        if (std::isnan(row.value)) continue;
        auto it = std::find(sp.sites.begin(), sp.sites.end(), row.site_id);
        if (it == sp.sites.end()) throw DomainError("unstandardize: unknown site " + row.site_id);
        row.value = row.value * sp.scale(it - sp.sites.begin()) + trend.mu(row.site_id, row.day);
    }
    return out;
}

/// Grid dataset from a standardized panel: sites in order of first appearance, days ascending,
/// absent rows and missing values masked, intercept-only covariates, chordal metric.
inline Dataset to_dataset(const RawPanel& panel) {
    validate(panel);
    const auto sites = panel_sites(panel);
    std::map<std::string, Eigen::Index> site_index;
    for (std::size_t i = 0; i < sites.size(); ++i) site_index[sites[i]] = static_cast<Eigen::Index>(i);
    std::set<int> day_set;
    for (const auto& r : panel.rows) day_set.insert(r.day);
    std::vector<int> days(day_set.begin(), day_set.end());
    std::map<int, Eigen::Index> day_index;
    for (std::size_t j = 0; j < days.size(); ++j) day_index[days[j]] = static_cast<Eigen::Index>(j);

    const auto n1 = static_cast<Eigen::Index>(sites.size()), n2 = static_cast<Eigen::Index>(days.size());
    Dataset d;
    d.metric = DistanceMetric::chordal;
    d.site_ids = sites;
    d.coord_names = {"lon", "lat"};
    d.sites.resize(n1, 2);
    d.times.resize(n2);
    for (Eigen::Index j = 0; j < n2; ++j) d.times(j) = days[static_cast<std::size_t>(j)];
    Eigen::VectorXd grid = Eigen::VectorXd::Constant(n1 * n2, std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : panel.rows) {
        const Eigen::Index i = site_index[r.site_id];
        d.sites(i, 0) = r.lon;
        d.sites(i, 1) = r.lat;
        grid(i * n2 + day_index[r.day]) = r.value;
    }
    d.mask.resize(static_cast<std::size_t>(n1 * n2));
    std::vector<double> z;
    for (Eigen::Index k = 0; k < n1 * n2; ++k) {
        const bool obs = !std::isnan(grid(k));
        d.mask[static_cast<std::size_t>(k)] = obs;
        if (obs) z.push_back(grid(k));
    }
    d.z_obs = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    d.covariates = Eigen::MatrixXd::Ones(n1 * n2, 1);
    d.covariate_names = {"intercept"};
    return d;
}

}  // namespace aagp
