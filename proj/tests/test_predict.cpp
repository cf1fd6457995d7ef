#include <cmath>

#include <gtest/gtest.h>

#include "aagp/diagnostics.hpp"
#include "aagp/predict.hpp"
#include "oracle/reference_oracle.hpp"

using namespace aagp;

namespace {

struct ToyPosterior {
    oracle::Toy toy = oracle::make_toy();
    oracle::JointDraw draw;
    ValidatedDataset data;
    std::vector<PredictionTarget> targets;

    ToyPosterior() : data(toy.data) {
        Rng rng(41);
        draw = oracle::forward_draw(toy, CorrFamily::exponential, CorrFamily::squared_exponential, rng);
        data = oracle::with_responses(toy.data, draw.z);
        targets = grid_targets(data, {5, 0});
        targets.push_back({{Eigen::Vector2d(1.0, 1.0), 0.4}, Eigen::Vector2d(1.0, 0.3)});
        targets.push_back({{Eigen::Vector2d(0.2, 1.7), 1.1}, Eigen::Vector2d(1.0, -1.2)});
    }

    [[nodiscard]] ChainConfig pinned_config(std::int64_t n_iter) const {
        ChainConfig c;
        c.n_iter = n_iter;
        c.burn_in = 500;
        c.seed = 4;
        c.space_family = CorrFamily::exponential;
        c.time_family = CorrFamily::squared_exponential;
        c.initial = draw.params;
        c.pinned = PinnedParams::all();
        return c;
    }
};

}  // namespace

TEST(Summaries, QuantileType7) {
    EXPECT_EQ(quantile_type7({4, 1, 3, 2}, 0.5), 2.5);
    EXPECT_EQ(quantile_type7({4, 1, 3, 2}, 0.0), 1.0);
    EXPECT_EQ(quantile_type7({4, 1, 3, 2}, 1.0), 4.0);
    EXPECT_NEAR(quantile_type7({1, 2, 3, 4, 5}, 0.1), 1.4, 1e-15);
    EXPECT_THROW(quantile_type7({}, 0.5), DomainError);
}

TEST(Summaries, MspeAlciCoverage) {
    EXPECT_NEAR(mspe(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 5)), 4.0 / 3.0, 1e-15);
    EXPECT_THROW(mspe(Eigen::Vector2d(1, 2), Eigen::Vector3d(1, 2, 3)), DimensionError);
    std::vector<PredictionSummary> r(2);
    r[0].q025 = -1.0;
    r[0].q975 = 1.0;
    r[1].q025 = 0.0;
    r[1].q975 = 4.0;
    EXPECT_EQ(alci(r), 3.0);
    EXPECT_EQ(coverage(r, Eigen::Vector2d(0.5, 5.0)), 0.5);
    EXPECT_EQ(coverage(r, Eigen::Vector2d(1.0, 0.0)), 1.0);
    EXPECT_THROW(alci({}), DomainError);
}

TEST(Summaries, SummarizeDraws) {
    Eigen::RowVectorXd d(5);
    d << 1, 2, 3, 4, 5;
    const auto s = summarize_draws(d);
    EXPECT_EQ(s.mean, 3.0);
    EXPECT_NEAR(s.sd, std::sqrt(2.5), 1e-15);
    EXPECT_NEAR(s.q025, 1.1, 1e-15);
    EXPECT_NEAR(s.q975, 4.9, 1e-15);
    EXPECT_EQ(s.n_draws, 5);
}

TEST(Composition, OnGridReadsTheCell) {
    ToyPosterior s;
    GibbsSampler g(s.data, s.toy.priors, s.toy.knots, s.pinned_config(600));
    g.set_state(s.draw.params, s.draw.latent);
    const CompositionPredictor pred(s.data, s.toy.knots, grid_targets(s.data, {0, 5, 11}));
    Rng rng(1);
    const Eigen::VectorXd y = pred.draw(g, rng);
    for (Eigen::Index t = 0; t < 3; ++t) {
        const Eigen::Index cell = std::array<Eigen::Index, 3>{0, 5, 11}[static_cast<std::size_t>(t)];
        EXPECT_NEAR(y(t), s.data.H().row(cell).dot(s.draw.params.b) + s.draw.latent.w1(cell) + s.draw.latent.w2(cell),
                    1e-12);
    }
}

TEST(Composition, OffGridMatchesDenseConditional) {
    // Y(x0) given (w*, w2) against dense Gaussian conditioning
    ToyPosterior s;
    GibbsSampler g(s.data, s.toy.priors, s.toy.knots, s.pinned_config(600));
    g.set_state(s.draw.params, s.draw.latent);
    const auto& p = s.draw.params;
    std::vector<PredictionTarget> off(s.targets.begin() + 2, s.targets.end());
    const CompositionPredictor pred(s.data, s.toy.knots, off);
    EXPECT_FALSE(pred.on_grid(0));

    const auto locs = oracle::grid_locations(s.data);
    const auto kl = oracle::knot_locations(s.toy.knots);
    const auto md = oracle::mpp_dense(locs, s.toy.knots, p.theta1, s.data.metric());
    const Eigen::MatrixXd K = oracle::separable(locs, locs, p.theta2, s.data.metric(), kSeparableJitter);
    const Eigen::LDLT<Eigen::MatrixXd> kl_ldlt(K), rs_ldlt(md.rstar);
    for (std::size_t t = 0; t < off.size(); ++t) {
        const std::vector<SpaceTimeLocation> x0{off[t].x};
        const Eigen::RowVectorXd r0 = oracle::gneiting(x0, kl, p.theta1, s.data.metric());
        const Eigen::RowVectorXd k0 = oracle::separable(x0, locs, p.theta2, s.data.metric(), 0.0);
        const double mean = off[t].h.dot(p.b) + r0 * rs_ldlt.solve(s.draw.latent.w_star) + k0 * kl_ldlt.solve(s.draw.latent.w2);
        const double var = p.sigma2_1 * (1.0 - (r0 * rs_ldlt.solve(r0.transpose()))(0)) +
                           p.sigma2_2 * (1.0 - (k0 * kl_ldlt.solve(k0.transpose()))(0));
        Rng rng(7 + t);
        const int n = 20000;
        std::vector<double> xs;
        for (int k = 0; k < n; ++k) xs.push_back(pred.draw(g, rng)(static_cast<Eigen::Index>(t)));
        EXPECT_GT(oracle::ks_pvalue(xs, [&](double x) { return oracle::normal_cdf(x, mean, std::sqrt(var)); }), 0.001);
    }
}

TEST(Composition, TargetAtKnotHasNoW1Spread) {
    ToyPosterior s;
    auto p = s.draw.params;
    GibbsSampler g(s.data, s.toy.priors, s.toy.knots, s.pinned_config(600));
    g.set_state(p, s.draw.latent);
    const SpaceTimeLocation at_knot{s.toy.knots.sites.row(1).transpose(), s.toy.knots.times(1)};
    const CompositionPredictor pred(s.data, s.toy.knots, {{at_knot, Eigen::Vector2d(1.0, 0.0)}});
    const auto kl = oracle::knot_locations(s.toy.knots);
    const auto locs = oracle::grid_locations(s.data);
    const Eigen::RowVectorXd k0 = oracle::separable({at_knot}, locs, p.theta2, s.data.metric(), 0.0);
    const Eigen::MatrixXd K = oracle::separable(locs, locs, p.theta2, s.data.metric(), kSeparableJitter);
    const double var2 = p.sigma2_2 * (1.0 - (k0 * K.ldlt().solve(k0.transpose()))(0));
    Rng rng(3);
    const int n = 20000;
    Eigen::VectorXd y(n);
    for (int k = 0; k < n; ++k) y(k) = pred.draw(g, rng)(0);
    const double expect_mean = p.b(0) + s.draw.latent.w_star(1) + k0 * K.ldlt().solve(s.draw.latent.w2);
    EXPECT_NEAR(y.mean(), expect_mean, 4.0 * std::sqrt(var2 / n));
    const double sample_var = (y.array() - y.mean()).square().sum() / (n - 1);
    EXPECT_NEAR(sample_var / var2, 1.0, 0.05);
}

TEST(Composition, MissingCovariatesAreListed) {
    ToyPosterior s;
    auto targets = s.targets;
    targets[1].h = Eigen::VectorXd(1);
    targets[3].h(0) = std::nan("");
    try {
        CompositionPredictor pred(s.data, s.toy.knots, targets);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("1, 3"), std::string::npos);
    }
}

TEST(Predictive, PinnedChainMatchesKriging) {
    ToyPosterior s;
    OnlinePredictor online(s.data, s.toy.knots, s.targets, 77);
    ChainHooks hooks;
    hooks.on_keep = online.hook();
    const auto store = run_chain(s.data, s.toy.priors, s.toy.knots, s.pinned_config(20500), hooks);
    const Eigen::MatrixXd draws = online.draws();
    ASSERT_EQ(draws.cols(), 20000);
    const auto ref = oracle::dense_conditional(s.draw.params, s.data, s.toy.knots, s.targets);
    for (Eigen::Index t = 0; t < draws.rows(); ++t) {
        const Eigen::VectorXd row = draws.row(t).transpose();
        const double se = std::sqrt(mean_variance(row));
        EXPECT_NEAR(row.mean(), ref.mean(t), 3.0 * se) << "target " << t;
        const double var = (row.array() - row.mean()).square().sum() / static_cast<double>(row.size() - 1);
        EXPECT_NEAR(var / ref.cov(t, t), 1.0, 0.1) << "target " << t;
    }

    // post-hoc route from the stored (params, w*) pairs
    PredictiveOptions opts;
    opts.seed = 5;
    const Eigen::MatrixXd post = predictive_draws(s.targets, store, s.data, s.toy.knots, s.toy.priors, opts);
    for (Eigen::Index t = 0; t < post.rows(); ++t) {
        const Eigen::VectorXd row = post.row(t).transpose();
        EXPECT_NEAR(row.mean(), ref.mean(t), 4.0 * std::sqrt(mean_variance(row))) << "target " << t;
    }
}

TEST(Predictive, RecordingDoesNotPerturbTheChain) {
    ToyPosterior s;
    auto c = s.pinned_config(700);
    c.pinned = PinnedParams{};
    OnlinePredictor online(s.data, s.toy.knots, s.targets, 1);
    ChainHooks hooks;
    hooks.on_keep = online.hook();
    const auto with = run_chain(s.data, s.toy.priors, s.toy.knots, c, hooks);
    const auto without = run_chain(s.data, s.toy.priors, s.toy.knots, c);
    EXPECT_TRUE(same_draws(with, without));
}

TEST(Predictive, ConstantTrendWithoutSpatialSignal) {
    // tiny variances: predictions collapse onto h^T b
    ToyPosterior s;
    auto p = s.draw.params;
    p.sigma2_1 = p.sigma2_2 = 1e-10;
    auto c = s.pinned_config(600);
    c.initial = p;
    OnlinePredictor online(s.data, s.toy.knots, s.targets, 2);
    ChainHooks hooks;
    hooks.on_keep = online.hook();
    run_chain(s.data, s.toy.priors, s.toy.knots, c, hooks);
    const auto res = online.results();
    for (std::size_t t = 0; t < res.size(); ++t) EXPECT_NEAR(res[t].mean, s.targets[t].h.dot(p.b), 1e-3);
}
