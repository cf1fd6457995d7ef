#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "aagp/aagp.hpp"

namespace aagp::cli {

using nlohmann::json;

/// A JSON object whose keys must all be consumed; `finish()` rejects the leftovers.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(label() + "must be an object");
    }

    [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    T required(const std::string& key) {
        if (!j_.contains(key)) throw ConfigError("missing required key '" + name(key) + "'");
        return get<T>(key);
    }

    template <typename T>
    T optional(const std::string& key, T fallback) {
        return j_.contains(key) ? get<T>(key) : fallback;
    }

    Section section(const std::string& key) {
        if (!j_.contains(key)) throw ConfigError("missing required section '" + name(key) + "'");
        used_.insert(key);
        return {j_.at(key), name(key)};
    }

    std::optional<Section> optional_section(const std::string& key) {
        if (!j_.contains(key)) return std::nullopt;
        return section(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown key '" + name(k) + "'");
    }

    [[nodiscard]] std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    template <typename T>
    T get(const std::string& key) {
        used_.insert(key);
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("key '" + name(key) + "' has the wrong type");
        }
    }

    [[nodiscard]] std::string label() const { return path_.empty() ? "config " : "'" + path_ + "' "; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

struct DataPaths {
    std::string dataset, truth, panel, knots, draws, targets;
};

struct SimulateSection {
    Scenario scenario = Scenario::additive;
    Eigen::Index n_sites = 225;
    Eigen::Index n_times = 20;
    std::uint64_t seed = 0;
};

struct KnotSection {
    Eigen::Index m = 0;
    KnotDesign design = KnotDesign::latin_hypercube;
    std::uint64_t seed = 0;
};

struct HoldoutSection {
    double fraction = 0.9;
    std::uint64_t seed = 0;
};

struct PredictSection {
    std::uint64_t seed = 0;
    int refresh_sweeps = 3;
    int warmup_sweeps = 50;
    bool noisy = false;
};

struct DetrendSection {
    int harmonics = 3;
    int season_length = kSeasonLength;
};

struct VariogramSection {
    std::vector<double> days;  // grid time values
    Eigen::VectorXd edges;
};

/// Parsed run configuration. Sections a command does not need may be absent; commands fetch
/// the ones they need through `need`.
struct RunConfig {
    std::string output_dir;
    std::optional<int> threads;
    DataPaths data;
    std::optional<SimulateSection> simulate;
    std::optional<KnotSection> knots;
    std::optional<ChainConfig> chain;
    int n_chains = 1;
    std::optional<HoldoutSection> holdout;
    std::optional<PredictSection> predict;
    std::optional<DetrendSection> detrend;
    std::optional<VariogramSection> variogram;

    template <typename T>
    static const T& need(const std::optional<T>& x, const char* section) {
        if (!x) throw ConfigError(std::string("missing required section '") + section + "'");
        return *x;
    }
};

namespace detail {

inline InverseGamma parse_ig(Section s, InverseGamma fallback) {
    InverseGamma out{s.optional("shape", fallback.shape), s.optional("scale", fallback.scale)};
    s.finish();
    return out;
}

inline UniformBounds parse_uniform(Section s, UniformBounds fallback) {
    UniformBounds out{s.optional("lower", fallback.lower), s.optional("upper", fallback.upper)};
    s.finish();
    return out;
}

/// Priors for p covariates; every entry defaults to the customary vague choice.
inline Priors parse_priors(Section s, Eigen::Index p) {
    Priors pr = default_priors(p);
    if (s.has("b_mean")) {
        const auto v = s.required<std::vector<double>>("b_mean");
        if (static_cast<Eigen::Index>(v.size()) != p) throw ConfigError("priors.b_mean must have one entry per covariate");
        pr.mu_b = Eigen::Map<const Eigen::VectorXd>(v.data(), p);
    }
    pr.V_b = Eigen::MatrixXd::Identity(p, p) * s.optional("b_variance", 1000.0);
    if (auto x = s.optional_section("tau2")) pr.tau2 = parse_ig(*x, pr.tau2);
    if (auto x = s.optional_section("sigma2_1")) pr.sigma2_1 = parse_ig(*x, pr.sigma2_1);
    if (auto x = s.optional_section("sigma2_2")) pr.sigma2_2 = parse_ig(*x, pr.sigma2_2);
    if (auto x = s.optional_section("a")) pr.a = parse_uniform(*x, pr.a);
    if (auto x = s.optional_section("c")) pr.c = parse_uniform(*x, pr.c);
    if (auto x = s.optional_section("beta")) pr.beta = parse_uniform(*x, pr.beta);
    if (auto x = s.optional_section("phi_s")) pr.phi_s = parse_uniform(*x, pr.phi_s);
    if (auto x = s.optional_section("phi_u")) pr.phi_u = parse_uniform(*x, pr.phi_u);
    s.finish();
    try {
        validate(pr);
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("priors: ") + e.what());
    }
    return pr;
}

inline ChainConfig parse_chain(Section s, int& n_chains) {
    ChainConfig c;
    c.seed = s.required<std::uint64_t>("seed");
    c.n_iter = s.optional<std::int64_t>("n_iter", c.n_iter);
    c.burn_in = s.optional<std::int64_t>("burn_in", c.burn_in);
    c.thin = s.optional<std::int64_t>("thin", c.thin);
    c.adapt = s.optional("adapt", c.adapt);
    c.adapt_window = s.optional<std::int64_t>("adapt_window", c.adapt_window);
    c.target_acceptance = s.optional("target_acceptance", c.target_acceptance);
    c.proposal_scales.fill(s.optional("proposal_scale", 0.2));
    c.space_family = parse_corr_family(s.optional<std::string>("space_family", "exponential"));
    c.time_family = parse_corr_family(s.optional<std::string>("time_family", "exponential"));
    c.alpha = s.optional("alpha", c.alpha);
    c.checkpoint_every = s.optional<std::int64_t>("checkpoint_every", c.checkpoint_every);
    c.warm_start_sweeps = s.optional("warm_start_sweeps", c.warm_start_sweeps);
    n_chains = s.optional("chains", 1);
    s.finish();
    if (n_chains < 1) throw ConfigError("chain.chains must be at least 1");
    validate(c);
    return c;
}

}  // namespace detail

/// Parses a config document. Relative paths are taken relative to `base_dir`. The priors
/// section is checked later by resolve_priors, once the number of covariates is known.
class ConfigParser {
public:
    explicit ConfigParser(json doc, std::filesystem::path base_dir = ".")
        : doc_(std::move(doc)), base_(std::move(base_dir)) {}

    RunConfig parse() {
        try {
            return parse_root();
        } catch (const DomainError& e) {
            throw ConfigError(e.what());
        }
    }

    /// Priors sized for `p` covariates; throws when the config has no priors section.
    [[nodiscard]] Priors resolve_priors(Eigen::Index p) const {
        if (!priors_doc_) throw ConfigError("missing required section 'priors'");
        return detail::parse_priors(Section(*priors_doc_, "priors"), p);
    }

private:
    RunConfig parse_root() {
        Section root(doc_, "");
        RunConfig rc;
        rc.output_dir = resolve(root.required<std::string>("output_dir"));
        if (root.has("threads")) rc.threads = root.required<int>("threads");
        if (auto d = root.optional_section("data")) {
            rc.data.dataset = resolve(d->optional<std::string>("dataset", ""));
            rc.data.truth = resolve(d->optional<std::string>("truth", ""));
            rc.data.panel = resolve(d->optional<std::string>("panel", ""));
            rc.data.knots = resolve(d->optional<std::string>("knots", ""));
            rc.data.draws = resolve(d->optional<std::string>("draws", ""));
            rc.data.targets = resolve(d->optional<std::string>("targets", ""));
            d->finish();
            for (const auto* path : {&rc.data.dataset, &rc.data.truth, &rc.data.panel, &rc.data.knots, &rc.data.draws,
                                     &rc.data.targets})
                if (!path->empty() && !std::filesystem::exists(*path))
                    throw ConfigError("referenced file does not exist: " + *path);
        }
        if (auto s = root.optional_section("simulate")) {
            SimulateSection x;
            x.scenario = parse_scenario(s->required<std::string>("scenario"));
            x.n_sites = s->optional<Eigen::Index>("n_sites", x.n_sites);
            x.n_times = s->optional<Eigen::Index>("n_times", x.n_times);
            x.seed = s->required<std::uint64_t>("seed");
            s->finish();
            rc.simulate = x;
        }
        if (root.has("priors")) {
            priors_doc_ = doc_.at("priors");
            root.section("priors");  // marks the key used; contents checked in resolve_priors
        }
        if (auto s = root.optional_section("knots")) {
            KnotSection k;
            k.m = s->required<Eigen::Index>("m");
            k.design = parse_knot_design(s->optional<std::string>("design", "latin_hypercube"));
            k.seed = s->required<std::uint64_t>("seed");
            s->finish();
            rc.knots = k;
        }
        if (auto s = root.optional_section("chain")) rc.chain = detail::parse_chain(*s, rc.n_chains);
        if (auto s = root.optional_section("holdout")) {
            HoldoutSection h;
            h.fraction = s->optional("fraction", h.fraction);
            h.seed = s->required<std::uint64_t>("seed");
            s->finish();
            rc.holdout = h;
        }
        if (auto s = root.optional_section("predict")) {
            PredictSection p;
            p.seed = s->required<std::uint64_t>("seed");
            p.refresh_sweeps = s->optional("refresh_sweeps", p.refresh_sweeps);
            p.warmup_sweeps = s->optional("warmup_sweeps", p.warmup_sweeps);
            p.noisy = s->optional("noisy", p.noisy);
            s->finish();
            rc.predict = p;
        }
        if (auto s = root.optional_section("detrend")) {
            DetrendSection d;
            d.harmonics = s->optional("harmonics", d.harmonics);
            d.season_length = s->optional("season_length", d.season_length);
            s->finish();
            rc.detrend = d;
        }
        if (auto s = root.optional_section("variogram")) {
            VariogramSection v;
            v.days = s->required<std::vector<double>>("days");
            if (v.days.empty()) throw ConfigError("variogram.days must not be empty");
            const auto e = s->required<std::vector<double>>("edges");
            v.edges = Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
            s->finish();
            rc.variogram = v;
        }
        root.finish();
        return rc;
    }

    [[nodiscard]] std::string resolve(const std::string& path) const {
        if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
        return (base_ / path).lexically_normal().string();
    }

    json doc_;
    std::filesystem::path base_;
    std::optional<json> priors_doc_;
};

/// FNV-1a 64-bit hash, hex encoded.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << h;
    return s.str();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline json parse_config_text(const std::string& text, const std::string& where) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(where + ": invalid JSON: " + e.what());
    }
}

/// Worker threads: the --threads flag, then the config, then AAGP_THREADS, then 1.
inline int resolve_threads(std::optional<int> flag, std::optional<int> config) {
    if (flag) return std::max(1, *flag);
    if (config) return std::max(1, *config);
    if (const char* env = std::getenv("AAGP_THREADS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw ConfigError("AAGP_THREADS must be an integer");
        }
    }
    return 1;
}

}  // namespace aagp::cli
