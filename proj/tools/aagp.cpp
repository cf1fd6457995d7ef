// aagp: simulate, detrend, fit, predict, cv and variogram driven by one JSON config per run.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "aagp/aagp.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aagp::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAbort = 3;

struct Invocation {
    std::string command;
    std::string config_path;
    std::optional<int> threads;
    std::string resume;
    bool quiet = false;
};

/// Everything a command needs: the parsed config plus the raw document for the manifest.
struct Run {
    Invocation inv;
    std::string config_text;
    json config_doc;
    ConfigParser parser;
    RunConfig rc;
    int threads = 1;
    std::vector<std::string> outputs;

    [[nodiscard]] std::string out(const std::string& name) {
        outputs.push_back(name);
        return (fs::path(rc.output_dir) / name).string();
    }

    void log(const std::string& msg) const {
        if (!inv.quiet) std::cerr << inv.command << ": " << msg << '\n';
    }
};

void write_manifest(Run& run, json extra = json::object()) {
    json m{{"command", run.inv.command},
           {"version", kVersion},
           {"ordering", kOrderingVersion},
           {"config_hash_fnv1a64", fnv1a_hex(run.config_text)},
           {"config", run.config_doc},
           {"threads", run.threads},
           {"outputs", run.outputs}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_json((fs::path(run.rc.output_dir) / "manifest.json").string(), m);
}

std::string need_path(const std::string& path, const char* key) {
    if (path.empty()) throw ConfigError(std::string("missing required key 'data.") + key + "'");
    return path;
}

// ---------------------------------------------------------------------------
// Panels: site_id, lon, lat, day, value

RawPanel read_panel(const std::string& path, int season_length) {
    const CsvTable t = read_csv(path);
    const int c_site = t.require("site_id", path), c_lon = t.require("lon", path), c_lat = t.require("lat", path);
    const int c_day = t.require("day", path), c_val = t.require("value", path);
    RawPanel p;
    p.season_length = season_length;
    for (const auto& r : t.rows) {
        const double day = parse_double(r[static_cast<std::size_t>(c_day)], path);
        if (day != std::floor(day)) throw ValidationError(ValidationError::Kind::other, path + ": day must be an integer");
        p.rows.push_back({r[static_cast<std::size_t>(c_site)], parse_double(r[static_cast<std::size_t>(c_lon)], path),
                          parse_double(r[static_cast<std::size_t>(c_lat)], path), static_cast<int>(day),
                          parse_double(r[static_cast<std::size_t>(c_val)], path)});
    }
    validate(p);
    return p;
}

void write_panel(const std::string& path, const RawPanel& p) {
    CsvWriter w(path, {"site_id", "lon", "lat", "day", "value"});
    for (const auto& r : p.rows)
        w.row({r.site_id, format_double(r.lon), format_double(r.lat), std::to_string(r.day), format_double(r.value)});
}

json trend_to_json(const SeasonalTrend& t, const StandardizedPanel& sp) {
    json sites = json::array();
    for (std::size_t i = 0; i < t.sites.size(); ++i)
        sites.push_back({{"site_id", t.sites[i]},
                         {"intercept", t.intercepts(static_cast<Eigen::Index>(i))},
                         {"scale", sp.scale(static_cast<Eigen::Index>(i))}});
    return {{"season_length", t.season_length},
            {"harmonics", t.n_harmonics()},
            {"cos_coef", std::vector<double>(t.cos_coef.data(), t.cos_coef.data() + t.cos_coef.size())},
            {"sin_coef", std::vector<double>(t.sin_coef.data(), t.sin_coef.data() + t.sin_coef.size())},
            {"sites", sites}};
}

// ---------------------------------------------------------------------------
// Shared fitting pieces

KnotSet resolve_knots(Run& run, const ValidatedDataset& data) {
    if (!run.rc.data.knots.empty()) return read_knots(run.rc.data.knots);
    const auto& k = RunConfig::need(run.rc.knots, "knots");
    return select_knots(grid_bounding_box(data), k.m, k.design, k.seed);
}

ChainHooks progress_hooks(const Run& run, std::int64_t n_iter) {
    ChainHooks h;
    h.on_warning = [&run](const std::string& w) { std::cerr << run.inv.command << ": warning: " << w << '\n'; };
    if (!run.inv.quiet) {
        const std::int64_t every = std::max<std::int64_t>(1, n_iter / 10);
        h.on_iteration = [&run, every, n_iter](std::int64_t it) {
            if ((it + 1) % every == 0 || it + 1 == n_iter) run.log("iteration " + std::to_string(it + 1) + "/" + std::to_string(n_iter));
        };
    }
    return h;
}

double finite_or_nan(const std::function<double()>& f) {
    try {
        const double x = f();
        return std::isfinite(x) ? x : std::numeric_limits<double>::quiet_NaN();
    } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

json chain_diagnostics(const SampleStore& store) {
    const auto n = static_cast<Eigen::Index>(store.size());
    const Eigen::Index p = n > 0 ? store.params.front().b.size() : 0;
    std::vector<std::pair<std::string, std::function<double(const ModelParams&)>>> cols;
    for (Eigen::Index k = 0; k < p; ++k) cols.emplace_back("b" + std::to_string(k + 1), [k](const ModelParams& q) { return q.b(k); });
    cols.emplace_back("tau2", [](const ModelParams& q) { return q.tau2; });
    cols.emplace_back("sigma2_1", [](const ModelParams& q) { return q.sigma2_1; });
    cols.emplace_back("sigma2_2", [](const ModelParams& q) { return q.sigma2_2; });
    cols.emplace_back("a", [](const ModelParams& q) { return q.theta1.a; });
    cols.emplace_back("c", [](const ModelParams& q) { return q.theta1.c; });
    cols.emplace_back("beta", [](const ModelParams& q) { return q.theta1.beta; });
    cols.emplace_back("phi_s", [](const ModelParams& q) { return q.theta2.phi_s; });
    cols.emplace_back("phi_u", [](const ModelParams& q) { return q.theta2.phi_u; });

    json params = json::object();
    for (const auto& [name, get] : cols) {
        Eigen::VectorXd x(n);
        for (Eigen::Index k = 0; k < n; ++k) x(k) = get(store.params[static_cast<std::size_t>(k)]);
        const double mean = n > 0 ? x.mean() : std::numeric_limits<double>::quiet_NaN();
        const double sd = n > 1 ? std::sqrt((x.array() - mean).square().sum() / static_cast<double>(n - 1))
                                : std::numeric_limits<double>::quiet_NaN();
        params[name] = {{"mean", mean},
                        {"sd", sd},
                        {"ess", finite_or_nan([&] { return effective_sample_size(x); })},
                        {"geweke_z", finite_or_nan([&] { return geweke_z(x); })}};
    }
    json acceptance = json::object(), scales = json::object();
    for (int t = 0; t < kThetaCount; ++t) {
        acceptance[kThetaNames[static_cast<std::size_t>(t)]] = store.acceptance_rate(static_cast<Theta>(t));
        scales[kThetaNames[static_cast<std::size_t>(t)]] = store.final_scales[static_cast<std::size_t>(t)];
    }
    double total = 0.0;
    for (double s : store.iteration_seconds) total += s;
    const auto iters = static_cast<double>(store.iteration_seconds.size());
    return {{"retained_draws", store.size()},
            {"parameters", params},
            {"acceptance", acceptance},
            {"final_proposal_scales", scales},
            {"rebuild_failures", store.rebuild_failures},
            {"timing", {{"seconds_total", total}, {"seconds_per_iteration", iters > 0 ? total / iters : 0.0}}}};
}

std::vector<std::string> cell_header(const ValidatedDataset& data) {
    std::vector<std::string> h{"site_id"};
    h.insert(h.end(), data.raw().coord_names.begin(), data.raw().coord_names.end());
    h.emplace_back("time");
    return h;
}

std::vector<std::string> cell_cells(const ValidatedDataset& data, Eigen::Index cell) {
    const Eigen::Index i = cell / data.n_times();
    std::vector<std::string> c{data.raw().site_ids[static_cast<std::size_t>(i)]};
    for (Eigen::Index k = 0; k < data.sites().cols(); ++k) c.push_back(format_double(data.sites()(i, k)));
    c.push_back(format_double(data.times()(cell % data.n_times())));
    return c;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_simulate(Run& run) {
    const auto& sim = RunConfig::need(run.rc.simulate, "simulate");
    ScenarioSpec spec = default_scenario_spec(sim.scenario, sim.seed);
    spec.n_sites = sim.n_sites;
    spec.n_times = sim.n_times;
    const SimulatedData s = generate_scenario(spec);
    const ValidatedDataset data = validate_dataset(s.data);
    run.log("scenario " + to_string(sim.scenario) + ", " + std::to_string(data.n()) + " cells");
    const std::string data_path = run.out("data.csv");
    write_dataset(data_path, data);
    run.outputs.push_back("data.csv.json");
    write_truth(run.out("truth.csv"), data, s.y, s.z);
    write_manifest(run, {{"scenario", to_string(sim.scenario)},
                         {"seed", sim.seed},
                         {"n_sites", sim.n_sites},
                         {"n_times", sim.n_times}});
    return kExitOk;
}

int cmd_detrend(Run& run) {
    const DetrendSection d = run.rc.detrend.value_or(DetrendSection{});
    const RawPanel panel = read_panel(need_path(run.rc.data.panel, "panel"), d.season_length);
    const SeasonalTrend trend = fit_seasonal_trend(panel, d.harmonics);
    const StandardizedPanel sp = standardize(panel, trend);
    const ValidatedDataset data = validate_dataset(to_dataset(sp.panel));
    run.log(std::to_string(data.n_sites()) + " sites, " + std::to_string(data.n_times()) + " days, " +
            std::to_string(data.n_missing()) + " missing cells");
    write_json(run.out("trend.json"), trend_to_json(trend, sp));
    write_panel(run.out("standardized.csv"), sp.panel);
    write_dataset(run.out("data.csv"), data);
    run.outputs.push_back("data.csv.json");
    write_manifest(run);
    return kExitOk;
}

int cmd_fit(Run& run) {
    const ValidatedDataset data = read_dataset(need_path(run.rc.data.dataset, "dataset"));
    const Priors priors = run.parser.resolve_priors(data.p());
    const ChainConfig& chain = RunConfig::need(run.rc.chain, "chain");
    const KnotSet knots = resolve_knots(run, data);
    write_knots(run.out("knots.csv"), knots, data.raw().coord_names);
    run.log(std::to_string(data.n()) + " cells, " + std::to_string(knots.m()) + " knots, " +
            std::to_string(run.rc.n_chains) + " chain(s)");

    if (run.rc.n_chains > 1) {
        if (!run.inv.resume.empty()) throw ConfigError("--resume needs chain.chains = 1");
        const auto stores = run_chains(data, priors, knots, chain, run.rc.n_chains, run.threads);
        json diag = json::array();
        for (std::size_t k = 0; k < stores.size(); ++k) {
            write_draws(run.out("draws_chain" + std::to_string(k + 1) + ".csv"), stores[k]);
            json d = chain_diagnostics(stores[k]);
            d["seed"] = derive_seed(chain.seed, k);
            diag.push_back(d);
        }
        write_json(run.out("diagnostics.json"), {{"chains", diag}});
        write_manifest(run);
        return kExitOk;
    }

    std::optional<ChainState> resume;
    if (!run.inv.resume.empty()) {
        resume = read_checkpoint(run.inv.resume);
        if (resume->next_iteration > chain.n_iter)
            throw ConfigError("checkpoint is past chain.n_iter (" + std::to_string(resume->next_iteration) + ")");
        run.log("resuming at iteration " + std::to_string(resume->next_iteration));
    }
    ChainHooks hooks = progress_hooks(run, chain.n_iter);
    const std::string ckpt = (fs::path(run.rc.output_dir) / "checkpoint.json").string();
    if (chain.checkpoint_every > 0) {
        run.outputs.push_back("checkpoint.json");
        hooks.on_checkpoint = [&ckpt](const ChainState& s) { write_checkpoint(ckpt, s); };
    }
    SampleStore store;
    try {
        store = run_chain(data, priors, knots, chain, hooks, resume ? &*resume : nullptr);
    } catch (const ChainAbort& e) {
        write_checkpoint((fs::path(run.rc.output_dir) / "abort_checkpoint.json").string(), e.last_valid());
        run.outputs.push_back("abort_checkpoint.json");
        write_manifest(run, {{"aborted", e.what()}});
        throw;
    }
    write_draws(run.out("draws.csv"), store);
    write_json(run.out("diagnostics.json"), chain_diagnostics(store));
    write_manifest(run, {{"resumed_from", run.inv.resume}});
    return kExitOk;
}

/// Theta fields that draws files do not carry come from the chain section.
std::pair<NonsepParams, SepParams> fixed_theta_fields(const Run& run, const ValidatedDataset& data) {
    const ChainConfig chain = run.rc.chain.value_or(ChainConfig{});
    NonsepParams t1{1.0, 1.0, 0.5, chain.alpha, data.spatial_dim()};
    SepParams t2{1.0, 1.0, chain.space_family, chain.time_family};
    return {t1, t2};
}

int cmd_predict(Run& run) {
    const ValidatedDataset data = read_dataset(need_path(run.rc.data.dataset, "dataset"));
    const KnotSet knots = read_knots(need_path(run.rc.data.knots, "knots"));
    const auto& pred = RunConfig::need(run.rc.predict, "predict");
    const auto [t1, t2] = fixed_theta_fields(run, data);
    const SampleStore store = read_draws(need_path(run.rc.data.draws, "draws"), t1, t2);
    if (store.size() == 0) throw ValidationError(ValidationError::Kind::other, "draws file has no rows");
    if (store.params.front().b.size() != data.p() || store.w_star.front().size() != knots.m())
        throw ValidationError(ValidationError::Kind::length_mismatch, "draws do not match the dataset covariates or the knots");

    std::vector<PredictionTarget> targets;
    if (!run.rc.data.targets.empty()) {
        targets = read_targets(run.rc.data.targets, data.spatial_dim(), data.p());
    } else {
        targets = grid_targets(data, data.missing_cells());
        if (targets.empty()) throw ConfigError("no data.targets given and the dataset has no missing cells");
    }
    // The priors only size the pinned refresh sampler; defaults serve when the section is absent.
    const Priors priors = run.config_doc.contains("priors") ? run.parser.resolve_priors(data.p()) : default_priors(data.p());
    PredictiveOptions opts;
    opts.seed = pred.seed;
    opts.refresh_sweeps = pred.refresh_sweeps;
    opts.warmup_sweeps = pred.warmup_sweeps;
    opts.add_noise = pred.noisy;
    run.log(std::to_string(targets.size()) + " targets from " + std::to_string(store.size()) + " draws");
    const auto results = summarize(predictive_draws(targets, store, data, knots, priors, opts));
    write_predictions(run.out("predictions.csv"), targets, results, data.raw().coord_names);
    write_manifest(run);
    return kExitOk;
}

int cmd_cv(Run& run) {
    const ValidatedDataset data = read_dataset(need_path(run.rc.data.dataset, "dataset"));
    const Priors priors = run.parser.resolve_priors(data.p());
    const ChainConfig& chain = RunConfig::need(run.rc.chain, "chain");
    const auto& hold = RunConfig::need(run.rc.holdout, "holdout");
    const auto& pred = RunConfig::need(run.rc.predict, "predict");
    std::optional<Truth> truth;
    if (!run.rc.data.truth.empty()) truth = read_truth(run.rc.data.truth, data);

    const HoldoutSplit split = holdout_split(data, hold.fraction, hold.seed);
    const ValidatedDataset train = validate_dataset(split.train);
    const KnotSet knots = resolve_knots(run, train);
    write_knots(run.out("knots.csv"), knots, data.raw().coord_names);
    run.log(std::to_string(train.n_obs()) + " training cells, " + std::to_string(split.test_cells.size()) + " held out");

    OnlinePredictor predictor(train, knots, grid_targets(train, split.test_cells), pred.seed, pred.noisy);
    ChainHooks hooks = progress_hooks(run, chain.n_iter);
    hooks.on_keep = predictor.hook();
    const SampleStore store = run_chain(train, priors, knots, chain, hooks);
    const auto results = predictor.results();
    const Eigen::VectorXd mean = means(results);

    std::vector<std::string> header = cell_header(data);
    header.insert(header.end(), {"z", "mean", "sd", "q025", "q975"});
    if (truth) header.emplace_back("y");
    Eigen::VectorXd y_test(static_cast<Eigen::Index>(split.test_cells.size()));
    {
        CsvWriter w(run.out("cv_points.csv"), header);
        for (std::size_t k = 0; k < split.test_cells.size(); ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            auto cells = cell_cells(data, split.test_cells[k]);
            for (double x : {split.test_z(kk), results[k].mean, results[k].sd, results[k].q025, results[k].q975})
                cells.push_back(format_double(x));
            if (truth) {
                y_test(kk) = truth->y(split.test_cells[k]);
                cells.push_back(format_double(y_test(kk)));
            }
            w.row(cells);
        }
    }
    json metrics{{"n_train", train.n_obs()},
                 {"n_test", split.test_cells.size()},
                 {"mspe", mspe(mean, split.test_z)},
                 {"alci", alci(results)},
                 {"coverage", coverage(results, split.test_z)},
                 {"predicts", pred.noisy ? "Z" : "Y"}};
    if (truth) {
        metrics["mspe_y"] = mspe(mean, y_test);
        metrics["coverage_y"] = coverage(results, y_test);
    }
    write_json(run.out("metrics.json"), metrics);
    write_draws(run.out("draws.csv"), store);
    write_json(run.out("diagnostics.json"), chain_diagnostics(store));
    run.log("mspe " + format_double(metrics["mspe"].get<double>()) + ", alci " + format_double(metrics["alci"].get<double>()));
    write_manifest(run);
    return kExitOk;
}

int cmd_variogram(Run& run) {
    const ValidatedDataset data = read_dataset(need_path(run.rc.data.dataset, "dataset"));
    const auto& v = RunConfig::need(run.rc.variogram, "variogram");
    std::vector<Eigen::Index> idx;
    for (double day : v.days) {
        const Eigen::Index j = data.find_time(day);
        if (j < 0) throw ConfigError("variogram.days: " + format_double(day) + " is not a time in the dataset grid");
        idx.push_back(j);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Variogram g = empirical_variogram(data.sites(), time_slice(data, idx[k]), v.edges, data.metric());
        write_variogram(run.out("variogram_day" + format_double(v.days[k]) + ".csv"), g, data.metric());
    }
    write_manifest(run);
    return kExitOk;
}

int dispatch(Run& run) {
    const std::string& c = run.inv.command;
    if (c == "simulate") return cmd_simulate(run);
    if (c == "detrend") return cmd_detrend(run);
    if (c == "fit") return cmd_fit(run);
    if (c == "predict") return cmd_predict(run);
    if (c == "cv") return cmd_cv(run);
    return cmd_variogram(run);
}

int execute(const Invocation& inv) {
    const std::string text = read_file(inv.config_path);
    json doc = parse_config_text(text, inv.config_path);
    ConfigParser parser(doc, fs::absolute(inv.config_path).parent_path());
    RunConfig rc = parser.parse();
    Run run{inv, text, std::move(doc), std::move(parser), std::move(rc), 1, {}};
    if (!inv.resume.empty() && !fs::exists(inv.resume)) throw ConfigError("checkpoint not found: " + inv.resume);
    run.threads = resolve_threads(inv.threads, run.rc.threads);
    Eigen::setNbThreads(run.threads);
    fs::create_directories(run.rc.output_dir);
    return dispatch(run);
}

}  // namespace
}  // namespace aagp::cli

int main(int argc, char** argv) {
    using namespace aagp::cli;
    CLI::App app{"Spatio-temporal Gaussian process modelling with additive low-rank and separable components"};
    app.set_version_flag("--version", std::string(aagp::kVersion));
    app.require_subcommand(1, 1);
    Invocation inv;
    const std::vector<std::pair<const char*, const char*>> commands{
        {"simulate", "generate a simulation scenario and its truth"},
        {"detrend", "remove a seasonal trend from a site/day panel and standardize it"},
        {"fit", "run the sampler and write retained draws and diagnostics"},
        {"predict", "posterior predictive summaries from retained draws"},
        {"cv", "holdout cross-validation: fit, predict the held-out cells, report metrics"},
        {"variogram", "empirical spatial variograms for selected days"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", inv.config_path, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("-t,--threads", inv.threads, "worker threads (overrides config and AAGP_THREADS)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("-q,--quiet", inv.quiet, "no progress output");
        if (std::string(name) == "fit") sub->add_option("--resume", inv.resume, "continue from a checkpoint file");
        sub->callback([&inv, name = std::string(name)] { inv.command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        return execute(inv);
    } catch (const aagp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const aagp::ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitUsage;
    } catch (const aagp::NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return kExitAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
