#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "aagp/dataset.hpp"
#include "aagp/error.hpp"
#include "aagp/kernels.hpp"
#include "aagp/mpp.hpp"
#include "aagp/predict.hpp"
#include "aagp/sampler.hpp"
#include "aagp/simulate.hpp"

namespace aagp {

inline constexpr const char* kOrderingVersion = "time_fastest_v1";

/// Shortest representation that round-trips; "NA" for NaN.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "NA";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, res.ptr};
}

inline double parse_double(std::string_view s, const std::string& where = "") {
    if (s == "NA" || s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double x = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ValidationError(ValidationError::Kind::other, "cannot parse number '" + std::string(s) + "'" +
                                                                (where.empty() ? "" : " in " + where));
    return x;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] int column(const std::string& name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        return -1;
    }

    [[nodiscard]] int require(const std::string& name, const std::string& file) const {
        const int c = column(name);
        if (c < 0) throw ValidationError(ValidationError::Kind::other, file + ": missing column '" + name + "'");
        return c;
    }
};

namespace detail {
inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}
}  // namespace detail

/// Plain comma-separated file with a header row; no quoting.
inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(ValidationError::Kind::other, "cannot open " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(ValidationError::Kind::other, path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = detail::split_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_line(line);
        if (cells.size() != t.header.size())
            throw ValidationError(ValidationError::Kind::length_mismatch,
                                  path + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                      " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path), path_(path) {
        if (!out_) throw ValidationError(ValidationError::Kind::other, "cannot write " + path);
        row(header);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c].find(',') != std::string::npos)
                throw ValidationError(ValidationError::Kind::other, path_ + ": field contains a comma: " + cells[c]);
            out_ << (c ? "," : "") << cells[c];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
    std::string path_;
};

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ValidationError(ValidationError::Kind::other, "cannot write " + path);
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(ValidationError::Kind::other, "cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Kind::other, path + ": invalid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset: site_id, coords..., time, observed, z, h1..hp, plus a JSON sidecar.

inline std::string sidecar_path(const std::string& csv_path) { return csv_path + ".json"; }

inline void write_dataset(const std::string& path, const ValidatedDataset& data) {
    const Dataset& d = data.raw();
    std::vector<std::string> header{"site_id"};
    header.insert(header.end(), d.coord_names.begin(), d.coord_names.end());
    header.insert(header.end(), {"time", "observed", "z"});
    header.insert(header.end(), d.covariate_names.begin(), d.covariate_names.end());
    CsvWriter w(path, header);
    Eigen::Index obs = 0;
    for (Eigen::Index i = 0; i < data.n_sites(); ++i)
        for (Eigen::Index j = 0; j < data.n_times(); ++j) {
            const Eigen::Index k = data.flat_index(i, j);
            std::vector<std::string> cells{d.site_ids[static_cast<std::size_t>(i)]};
            for (Eigen::Index c = 0; c < d.sites.cols(); ++c) cells.push_back(format_double(d.sites(i, c)));
            cells.push_back(format_double(d.times(j)));
            const bool o = d.mask[static_cast<std::size_t>(k)];
            cells.emplace_back(o ? "1" : "0");
            cells.push_back(o ? format_double(d.z_obs(obs++)) : "NA");
            for (Eigen::Index c = 0; c < d.covariates.cols(); ++c) cells.push_back(format_double(d.covariates(k, c)));
            w.row(cells);
        }
    nlohmann::json meta{{"metric", std::string(to_string(d.metric))},
                        {"ordering", kOrderingVersion},
                        {"n_sites", data.n_sites()},
                        {"n_times", data.n_times()},
                        {"coords", d.coord_names},
                        {"covariates", d.covariate_names}};
    write_json(sidecar_path(path), meta);
}

/// Reads a dataset CSV and its sidecar. Rows may come in any order; sites are indexed by
/// first appearance and times ascending.
inline ValidatedDataset read_dataset(const std::string& path) {
    const auto meta = read_json(sidecar_path(path));
    Dataset d;
    try {
        d.metric = parse_distance_metric(meta.at("metric").get<std::string>());
        if (meta.at("ordering").get<std::string>() != kOrderingVersion)
            throw ValidationError(ValidationError::Kind::other, path + ": unsupported ordering version");
        d.coord_names = meta.at("coords").get<std::vector<std::string>>();
        d.covariate_names = meta.at("covariates").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(ValidationError::Kind::other, sidecar_path(path) + ": " + e.what());
    }
    const CsvTable t = read_csv(path);
    const int c_site = t.require("site_id", path), c_time = t.require("time", path);
    const int c_obs = t.require("observed", path), c_z = t.require("z", path);
    std::vector<int> c_coord, c_cov;
    for (const auto& n : d.coord_names) c_coord.push_back(t.require(n, path));
    for (const auto& n : d.covariate_names) c_cov.push_back(t.require(n, path));

    std::map<std::string, Eigen::Index> site_index;
    std::vector<std::vector<double>> site_coords;
    std::map<double, Eigen::Index> time_index;
    for (const auto& r : t.rows) {
        if (site_index.emplace(r[static_cast<std::size_t>(c_site)], static_cast<Eigen::Index>(site_index.size())).second) {
            d.site_ids.push_back(r[static_cast<std::size_t>(c_site)]);
            std::vector<double> xs;
            for (int c : c_coord) xs.push_back(parse_double(r[static_cast<std::size_t>(c)], path));
            site_coords.push_back(xs);
        }
        time_index.emplace(parse_double(r[static_cast<std::size_t>(c_time)], path), 0);
    }
    Eigen::Index j = 0;
    d.times.resize(static_cast<Eigen::Index>(time_index.size()));
    for (auto& [u, idx] : time_index) {
        idx = j;
        d.times(j++) = u;
    }
    const auto n1 = static_cast<Eigen::Index>(d.site_ids.size()), n2 = d.times.size(), n = n1 * n2;
    if (static_cast<Eigen::Index>(t.rows.size()) != n)
        throw ValidationError(ValidationError::Kind::length_mismatch,
                              path + ": expected one row per grid cell (" + std::to_string(n) + "), found " +
                                  std::to_string(t.rows.size()));
    d.sites.resize(n1, static_cast<Eigen::Index>(c_coord.size()));
    for (Eigen::Index i = 0; i < n1; ++i)
        for (std::size_t c = 0; c < c_coord.size(); ++c)
            d.sites(i, static_cast<Eigen::Index>(c)) = site_coords[static_cast<std::size_t>(i)][c];
    d.covariates.resize(n, static_cast<Eigen::Index>(c_cov.size()));
    d.mask.assign(static_cast<std::size_t>(n), false);
    Eigen::VectorXd zgrid = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (const auto& r : t.rows) {
        const Eigen::Index k = site_index[r[static_cast<std::size_t>(c_site)]] * n2 +
                               time_index[parse_double(r[static_cast<std::size_t>(c_time)], path)];
        if (seen[static_cast<std::size_t>(k)])
            throw ValidationError(ValidationError::Kind::duplicate_time, path + ": duplicate (site, time) row");
        seen[static_cast<std::size_t>(k)] = true;
        const auto& flag = r[static_cast<std::size_t>(c_obs)];
        if (flag != "0" && flag != "1") throw ValidationError(ValidationError::Kind::other, path + ": observed must be 0 or 1");
        d.mask[static_cast<std::size_t>(k)] = flag == "1";
        if (flag == "1") zgrid(k) = parse_double(r[static_cast<std::size_t>(c_z)], path);
        for (std::size_t c = 0; c < c_cov.size(); ++c)
            d.covariates(k, static_cast<Eigen::Index>(c)) = parse_double(r[static_cast<std::size_t>(c_cov[c])], path);
    }
    std::vector<double> z;
    for (Eigen::Index k = 0; k < n; ++k)
        if (d.mask[static_cast<std::size_t>(k)]) z.push_back(zgrid(k));
    d.z_obs = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    return validate_dataset(std::move(d));
}

/// Truth file for simulated data: site_id, coords..., time, y, z in grid order.
inline void write_truth(const std::string& path, const ValidatedDataset& data, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& z) {
    if (y.size() != data.n() || z.size() != data.n()) throw DimensionError("write_truth: length mismatch");
    const Dataset& d = data.raw();
    std::vector<std::string> header{"site_id"};
    header.insert(header.end(), d.coord_names.begin(), d.coord_names.end());
    header.insert(header.end(), {"time", "y", "z"});
    CsvWriter w(path, header);
    for (Eigen::Index k = 0; k < data.n(); ++k) {
        const Eigen::Index i = k / data.n_times();
        std::vector<std::string> cells{d.site_ids[static_cast<std::size_t>(i)]};
        for (Eigen::Index c = 0; c < d.sites.cols(); ++c) cells.push_back(format_double(d.sites(i, c)));
        cells.push_back(format_double(d.times(k % data.n_times())));
        cells.push_back(format_double(y(k)));
        cells.push_back(format_double(z(k)));
        w.row(cells);
    }
}

struct Truth {
    Eigen::VectorXd y;
    Eigen::VectorXd z;
};

/// Truth values aligned with the dataset's grid order.
inline Truth read_truth(const std::string& path, const ValidatedDataset& data) {
    const CsvTable t = read_csv(path);
    const int c_site = t.require("site_id", path), c_time = t.require("time", path);
    const int c_y = t.require("y", path), c_z = t.require("z", path);
    std::map<std::string, Eigen::Index> site_index;
    for (Eigen::Index i = 0; i < data.n_sites(); ++i) site_index[data.raw().site_ids[static_cast<std::size_t>(i)]] = i;
    Truth out{Eigen::VectorXd::Constant(data.n(), std::numeric_limits<double>::quiet_NaN()),
              Eigen::VectorXd::Constant(data.n(), std::numeric_limits<double>::quiet_NaN())};
    for (const auto& r : t.rows) {
        auto it = site_index.find(r[static_cast<std::size_t>(c_site)]);
        const Eigen::Index j = data.find_time(parse_double(r[static_cast<std::size_t>(c_time)], path));
        if (it == site_index.end() || j < 0) throw ValidationError(ValidationError::Kind::other, path + ": cell not in dataset");
        const Eigen::Index k = data.flat_index(it->second, j);
        out.y(k) = parse_double(r[static_cast<std::size_t>(c_y)], path);
        out.z(k) = parse_double(r[static_cast<std::size_t>(c_z)], path);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Knots: coords..., time

inline void write_knots(const std::string& path, const KnotSet& k, const std::vector<std::string>& coord_names) {
    std::vector<std::string> header = coord_names;
    header.emplace_back("time");
    CsvWriter w(path, header);
    for (Eigen::Index j = 0; j < k.m(); ++j) {
        std::vector<std::string> cells;
        for (Eigen::Index c = 0; c < k.sites.cols(); ++c) cells.push_back(format_double(k.sites(j, c)));
        cells.push_back(format_double(k.times(j)));
        w.row(cells);
    }
}

inline KnotSet read_knots(const std::string& path) {
    const CsvTable t = read_csv(path);
    const int c_time = t.require("time", path);
    const auto m = static_cast<Eigen::Index>(t.rows.size());
    KnotSet k;
    k.sites.resize(m, static_cast<Eigen::Index>(t.header.size()) - 1);
    k.times.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        Eigen::Index col = 0;
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            const double x = parse_double(t.rows[static_cast<std::size_t>(j)][c], path);
            if (static_cast<int>(c) == c_time) k.times(j) = x;
            else k.sites(j, col++) = x;
        }
    }
    check_knots(k);
    return k;
}

// ---------------------------------------------------------------------------
// Retained draws: iteration, b1..bp, tau2, sigma2_1, sigma2_2, a, c, beta, phi_s, phi_u, wstar1..wstarm

inline std::vector<std::string> draws_header(Eigen::Index p, Eigen::Index m) {
    std::vector<std::string> h{"iteration"};
    for (Eigen::Index k = 1; k <= p; ++k) h.push_back("b" + std::to_string(k));
    h.insert(h.end(), {"tau2", "sigma2_1", "sigma2_2", "a", "c", "beta", "phi_s", "phi_u"});
    for (Eigen::Index k = 1; k <= m; ++k) h.push_back("wstar" + std::to_string(k));
    return h;
}

inline void write_draws(const std::string& path, const SampleStore& store) {
    if (store.size() == 0) throw DomainError("write_draws: empty store");
    const Eigen::Index p = store.params.front().b.size(), m = store.w_star.front().size();
    CsvWriter w(path, draws_header(p, m));
    for (std::size_t k = 0; k < store.size(); ++k) {
        const auto& q = store.params[k];
        std::vector<std::string> cells{std::to_string(store.iterations[k])};
        for (Eigen::Index i = 0; i < p; ++i) cells.push_back(format_double(q.b(i)));
        for (double x : {q.tau2, q.sigma2_1, q.sigma2_2, q.theta1.a, q.theta1.c, q.theta1.beta, q.theta2.phi_s,
                         q.theta2.phi_u})
            cells.push_back(format_double(x));
        for (Eigen::Index i = 0; i < m; ++i) cells.push_back(format_double(store.w_star[k](i)));
        w.row(cells);
    }
}

/// Reads retained draws back; `theta1` and `theta2` supply the fixed fields (alpha, d, families).
inline SampleStore read_draws(const std::string& path, const NonsepParams& theta1, const SepParams& theta2) {
    const CsvTable t = read_csv(path);
    Eigen::Index p = 0, m = 0;
    for (const auto& h : t.header) {
        if (h.size() > 1 && h[0] == 'b' && std::isdigit(static_cast<unsigned char>(h[1]))) ++p;
        if (h.rfind("wstar", 0) == 0) ++m;
    }
    if (t.header != draws_header(p, m)) throw ValidationError(ValidationError::Kind::other, path + ": unexpected draws header");
    SampleStore s;
    for (const auto& r : t.rows) {
        std::size_t c = 0;
        s.iterations.push_back(std::stoll(r[c++]));
        ModelParams q;
        q.theta1 = theta1;
        q.theta2 = theta2;
        q.b.resize(p);
        for (Eigen::Index i = 0; i < p; ++i) q.b(i) = parse_double(r[c++], path);
        for (double* x : {&q.tau2, &q.sigma2_1, &q.sigma2_2, &q.theta1.a, &q.theta1.c, &q.theta1.beta, &q.theta2.phi_s,
                          &q.theta2.phi_u})
            *x = parse_double(r[c++], path);
        Eigen::VectorXd ws(m);
        for (Eigen::Index i = 0; i < m; ++i) ws(i) = parse_double(r[c++], path);
        s.params.push_back(std::move(q));
        s.w_star.push_back(std::move(ws));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Predictions and variograms

inline void write_predictions(const std::string& path, const std::vector<PredictionTarget>& targets,
                              const std::vector<PredictionSummary>& results, const std::vector<std::string>& coord_names) {
    if (targets.size() != results.size()) throw DimensionError("write_predictions: length mismatch");
    std::vector<std::string> header = coord_names;
    header.insert(header.end(), {"time", "mean", "sd", "q025", "q975"});
    CsvWriter w(path, header);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        std::vector<std::string> cells;
        for (Eigen::Index c = 0; c < targets[k].x.s.size(); ++c) cells.push_back(format_double(targets[k].x.s(c)));
        for (double x : {targets[k].x.u, results[k].mean, results[k].sd, results[k].q025, results[k].q975})
            cells.push_back(format_double(x));
        w.row(cells);
    }
}

/// Targets file: coords..., time, h1..hp.
inline std::vector<PredictionTarget> read_targets(const std::string& path, Eigen::Index spatial_dim, Eigen::Index p) {
    const CsvTable t = read_csv(path);
    const int c_time = t.require("time", path);
    if (c_time != spatial_dim) throw ValidationError(ValidationError::Kind::other, path + ": expected coords then time");
    if (static_cast<Eigen::Index>(t.header.size()) != spatial_dim + 1 + p)
        throw ValidationError(ValidationError::Kind::length_mismatch,
                              path + ": expected " + std::to_string(p) + " covariate columns after time (h(x0) is required)");
    std::vector<PredictionTarget> out;
    for (const auto& r : t.rows) {
        PredictionTarget tg;
        tg.x.s.resize(spatial_dim);
        for (Eigen::Index c = 0; c < spatial_dim; ++c) tg.x.s(c) = parse_double(r[static_cast<std::size_t>(c)], path);
        tg.x.u = parse_double(r[static_cast<std::size_t>(spatial_dim)], path);
        tg.h.resize(p);
        for (Eigen::Index c = 0; c < p; ++c) tg.h(c) = parse_double(r[static_cast<std::size_t>(spatial_dim + 1 + c)], path);
        out.push_back(std::move(tg));
    }
    return out;
}

inline void write_variogram(const std::string& path, const Variogram& v, DistanceMetric metric) {
    CsvWriter w(path, {metric == DistanceMetric::chordal ? "bin_center_km" : "bin_center", "gamma", "pairs"});
    for (Eigen::Index b = 0; b < v.centers.size(); ++b)
        w.row({format_double(v.centers(b)), format_double(v.gamma(b)), std::to_string(v.pairs[static_cast<std::size_t>(b)])});
}

}  // namespace aagp
