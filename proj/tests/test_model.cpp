#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "aagp/model.hpp"
#include "aagp/random.hpp"
#include "oracle/reference_oracle.hpp"

using namespace aagp;

namespace {

Dataset grid(Eigen::Index n1, Eigen::Index n2, Rng& rng, double missing_rate = 0.0, Eigen::Index p = 2) {
    Dataset d;
    d.sites.resize(n1, 2);
    for (Eigen::Index i = 0; i < n1; ++i) d.sites.row(i) << rng.uniform(0, 5), rng.uniform(0, 5);
    std::vector<double> t;
    for (Eigen::Index j = 0; j < n2; ++j) t.push_back(j + rng.uniform(0.0, 0.9));
    d.times = Eigen::Map<Eigen::VectorXd>(t.data(), n2);
    const Eigen::Index n = n1 * n2;
    d.covariates.resize(n, p);
    d.covariates.col(0).setOnes();
    for (Eigen::Index c = 1; c < p; ++c) d.covariates.col(c) = rng.normal_vector(n);
    d.mask.assign(static_cast<std::size_t>(n), true);
    std::vector<double> z;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (k > 0 && rng.uniform() < missing_rate) {
            d.mask[static_cast<std::size_t>(k)] = false;
        } else {
            z.push_back(rng.normal());
        }
    }
    d.z_obs = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    return d;
}

ModelParams random_params(Rng& rng, Eigen::Index p) {
    ModelParams mp;
    mp.b = rng.normal_vector(p);
    mp.tau2 = rng.uniform(0.1, 1.0);
    mp.sigma2_1 = rng.uniform(0.2, 2.0);
    mp.sigma2_2 = rng.uniform(0.2, 2.0);
    mp.theta1 = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 5.0), rng.uniform(0.0, 1.0), 0.5, 2};
    mp.theta2 = {rng.uniform(0.5, 5.0), rng.uniform(0.5, 3.0), CorrFamily::exponential, CorrFamily::squared_exponential};
    return mp;
}

Priors toy_priors(Eigen::Index p) {
    Priors pr = default_priors(p);
    pr.V_b = Eigen::MatrixXd::Identity(p, p) * 4.0;
    pr.tau2 = {2.5, 1.0};
    pr.sigma2_1 = {3.0, 2.0};
    pr.sigma2_2 = {2.0, 0.5};
    return pr;
}

KnotSet random_knots(Eigen::Index m, Rng& rng) {
    KnotSet k;
    k.sites.resize(m, 2);
    k.times.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        k.sites.row(j) << rng.uniform(0, 5), rng.uniform(0, 5);
        k.times(j) = rng.uniform(0, 4);
    }
    return k;
}

double log_mvn_dense(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const Eigen::VectorXd r = x - mean;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + ldlt.vectorD().array().log().sum() +
                   r.dot(ldlt.solve(r)));
}

double log_ig_dense(double x, double a, double b) { return a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(x) - b / x; }

/// Every term of the joint density evaluated with dense matrices.
double dense_log_joint(const ModelParams& p, const LatentState& l, const ValidatedDataset& data, const Priors& pr,
                       const KnotSet& knots) {
    const auto locs = oracle::grid_locations(data);
    const auto md = oracle::mpp_dense(locs, knots, p.theta1, data.metric());
    const Eigen::MatrixXd K = oracle::separable(locs, locs, p.theta2, data.metric(), kSeparableJitter);
    const Eigen::VectorXd z = data.complete_z(l.z_missing);
    const Eigen::Index n = data.n();
    double lp = log_mvn_dense(p.b, pr.mu_b, pr.V_b) + log_ig_dense(p.tau2, pr.tau2.shape, pr.tau2.scale) +
                log_ig_dense(p.sigma2_1, pr.sigma2_1.shape, pr.sigma2_1.scale) +
                log_ig_dense(p.sigma2_2, pr.sigma2_2.shape, pr.sigma2_2.scale);
    lp -= std::log(pr.a.upper - pr.a.lower) + std::log(pr.c.upper - pr.c.lower) +
          std::log(pr.beta.upper - pr.beta.lower) + std::log(pr.phi_s.upper - pr.phi_s.lower) +
          std::log(pr.phi_u.upper - pr.phi_u.lower);
    const Eigen::MatrixXd dv = (p.sigma2_1 * md.V.cwiseMax(kVFloor)).asDiagonal();
    return lp + log_mvn_dense(l.w_star, Eigen::VectorXd::Zero(knots.m()), p.sigma2_1 * md.rstar) +
           log_mvn_dense(l.w1, md.A * l.w_star, dv) + log_mvn_dense(l.w2, Eigen::VectorXd::Zero(n), p.sigma2_2 * K) +
           log_mvn_dense(z, data.H() * p.b + l.w1 + l.w2, p.tau2 * Eigen::MatrixXd::Identity(n, n));
}

LatentState random_latent(const ValidatedDataset& data, Eigen::Index m, Rng& rng) {
    return {rng.normal_vector(m), rng.normal_vector(data.n()), rng.normal_vector(data.n()),
            rng.normal_vector(data.n_missing())};
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(Dataset, SmallGridPasses) {
    Dataset d;
    d.sites.resize(2, 2);
    d.sites << 0, 0, 1, 1;
    d.times = Eigen::Vector2d(0.0, 1.0);
    d.mask.assign(4, true);
    d.z_obs = Eigen::Vector4d(1, 2, 3, 4);
    d.covariates = Eigen::MatrixXd::Ones(4, 1);
    const auto v = validate_dataset(d);
    EXPECT_EQ(v.n(), 4);
    EXPECT_EQ(v.n_obs(), 4);
    EXPECT_EQ(v.n_missing(), 0);
    EXPECT_EQ(v.flat_index(1, 0), 2);
    EXPECT_NEAR(v.site_distances()(0, 1), std::sqrt(2.0), 1e-15);
    EXPECT_EQ(v.time_lags()(1, 0), 1.0);
}

TEST(Dataset, ErrorsAreDistinct) {
    Dataset d;
    d.sites.resize(2, 2);
    d.sites << 0, 0, 1, 1;
    d.times = Eigen::Vector2d(0.0, 1.0);
    d.mask = {true, true, true, false};
    d.z_obs = Eigen::Vector4d(1, 2, 3, 4);
    d.covariates = Eigen::MatrixXd::Ones(4, 1);
    auto kind_of = [](Dataset x) {
        try {
            validate_dataset(std::move(x));
        } catch (const ValidationError& e) {
            return e.kind();
        }
        return ValidationError::Kind::other;
    };
    EXPECT_EQ(kind_of(d), ValidationError::Kind::length_mismatch);
    d.z_obs = Eigen::Vector3d(1, 2, 3);
    d.times = Eigen::Vector2d(1.0, 1.0);
    EXPECT_EQ(kind_of(d), ValidationError::Kind::duplicate_time);
    d.times = Eigen::Vector2d(0.0, 1.0);
    d.sites.row(1) = d.sites.row(0);
    EXPECT_EQ(kind_of(d), ValidationError::Kind::duplicate_site);
    d.sites(1, 0) = 3.0;
    d.z_obs(1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(kind_of(d), ValidationError::Kind::non_finite);
    d.z_obs(1) = 0.0;
    d.covariates = Eigen::MatrixXd::Ones(3, 1);
    EXPECT_EQ(kind_of(d), ValidationError::Kind::length_mismatch);
}

TEST(Dataset, CompleteZFollowsMask) {
    Rng rng(1);
    auto d = grid(3, 4, rng, 0.3);
    const auto v = validate_dataset(d);
    const Eigen::VectorXd zm = Eigen::VectorXd::Constant(v.n_missing(), 99.0);
    const Eigen::VectorXd z = v.complete_z(zm);
    Eigen::Index o = 0;
    for (Eigen::Index k = 0; k < v.n(); ++k) {
        if (v.mask()[static_cast<std::size_t>(k)]) {
            EXPECT_EQ(z(k), v.z_obs()(o++));
        } else {
            EXPECT_EQ(z(k), 99.0);
        }
    }
}

TEST(Separable, KroneckerEntryFollowsOrdering) {
    Rng rng(2);
    const auto data = validate_dataset(grid(3, 3, rng));
    const SepParams sp{2.0, 1.5, CorrFamily::exponential, CorrFamily::squared_exponential};
    const auto rs = spatial_factor(data, sp), ru = temporal_factor(data, sp);
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = 0; j < 3; ++j)
            for (Eigen::Index k = 0; k < 3; ++k)
                for (Eigen::Index l = 0; l < 3; ++l) {
                    Eigen::VectorXd e = Eigen::VectorXd::Unit(9, k * 3 + l);
                    const double entry = kron_matvec(rs, ru, e)(i * 3 + j);
                    const double h = (data.sites().row(i) - data.sites().row(k)).norm();
                    const double t = std::abs(data.times()(j) - data.times()(l));
                    EXPECT_NEAR(entry, separable_corr(h, t, sp), 1e-15);
                }
}

TEST(LogJoint, TwoByTwoOneKnotAgainstDense) {
    Rng rng(3);
    const auto data = validate_dataset(grid(2, 2, rng));
    const auto knots = random_knots(1, rng);
    const auto pr = toy_priors(2);
    const auto p = random_params(rng, 2);
    const auto l = random_latent(data, 1, rng);
    const double got = log_joint_density(p, l, data, pr, build_mpp(data, knots, p.theta1), build_separable(data, p.theta2));
    EXPECT_LT(rel(got, dense_log_joint(p, l, data, pr, knots)), 1e-8);
}

TEST(LogJoint, ToyCasesAgainstDense) {
    Rng rng(4);
    for (int rep = 0; rep < 30; ++rep) {
        const Eigen::Index n1 = 2 + static_cast<Eigen::Index>(rng.index(5)), n2 = 2 + static_cast<Eigen::Index>(rng.index(5));
        const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.index(4));
        const auto data = validate_dataset(grid(n1, n2, rng, 0.2));
        const auto knots = random_knots(m, rng);
        const auto pr = toy_priors(2);
        const auto p = random_params(rng, 2);
        const auto l = random_latent(data, m, rng);
        const double got =
            log_joint_density(p, l, data, pr, build_mpp(data, knots, p.theta1), build_separable(data, p.theta2));
        EXPECT_LT(rel(got, dense_log_joint(p, l, data, pr, knots)), 1e-8) << "rep " << rep;
    }
}

TEST(LogJoint, ZeroLatentsLeavePriorsAndConstants) {
    Rng rng(5);
    auto d = grid(3, 2, rng);
    const auto pr = toy_priors(2);
    auto p = random_params(rng, 2);
    d.z_obs = d.covariates * p.b;
    const auto data = validate_dataset(d);
    const auto knots = random_knots(2, rng);
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    LatentState l{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(6), Eigen::VectorXd()};
    const double n = 6, m = 2;
    const double constants =
        -0.5 * (m * (kLog2Pi + std::log(p.sigma2_1)) + mpp.Rstar_chol.logdet()) -
        0.5 * (n * (kLog2Pi + std::log(p.sigma2_1)) + mpp.v_floored().array().log().sum()) -
        0.5 * (n * (kLog2Pi + std::log(p.sigma2_2)) + kron_logdet(sep.eig)) - 0.5 * n * (kLog2Pi + std::log(p.tau2));
    EXPECT_NEAR(log_joint_density(p, l, data, pr, mpp, sep), log_prior(p, pr) + constants, 1e-9);
}

TEST(LogJoint, PerturbingW1LowersDensity) {
    Rng rng(6);
    const auto data = validate_dataset(grid(3, 3, rng));
    const auto knots = random_knots(2, rng);
    const auto pr = toy_priors(2);
    const auto p = random_params(rng, 2);
    auto l = random_latent(data, 2, rng);
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    // w1 conditional mean, elementwise
    const Eigen::VectorXd prior_mean = mpp.project(l.w_star);
    const Eigen::VectorXd r = data.complete_z(l.z_missing) - data.H() * p.b - l.w2;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double pv = p.sigma2_1 * mpp.v_floored()(i);
        l.w1(i) = (prior_mean(i) / pv + r(i) / p.tau2) / (1.0 / pv + 1.0 / p.tau2);
    }
    const double at_mode = log_joint_density(p, l, data, pr, mpp, sep);
    for (int k = 0; k < 10; ++k) {
        auto moved = l;
        moved.w1 += 0.1 * rng.normal_vector(data.n());
        EXPECT_LT(log_joint_density(p, moved, data, pr, mpp, sep), at_mode);
    }
}

TEST(LogJoint, Errors) {
    Rng rng(7);
    const auto data = validate_dataset(grid(2, 2, rng));
    const auto knots = random_knots(1, rng);
    const auto pr = toy_priors(2);
    auto p = random_params(rng, 2);
    const auto l = random_latent(data, 1, rng);
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    auto q = p;
    q.tau2 = 0.0;
    EXPECT_THROW(log_joint_density(q, l, data, pr, mpp, sep), ValidationError);
    q = p;
    q.theta1.c += 0.1;
    EXPECT_THROW(log_joint_density(q, l, data, pr, mpp, sep), ValidationError);
    q = p;
    q.theta2.phi_u += 0.1;
    EXPECT_THROW(log_joint_density(q, l, data, pr, mpp, sep), ValidationError);
}

TEST(Priors, Validation) {
    auto pr = default_priors(2);
    EXPECT_NO_THROW(validate(pr));
    EXPECT_EQ(pr.V_b(0, 0), 1000.0);
    EXPECT_EQ(pr.tau2.shape, 2.0);
    EXPECT_EQ(pr.tau2.scale, 0.01);
    EXPECT_EQ(pr.a.upper, 20.0);
    EXPECT_EQ(pr.beta.upper, 1.0);
    auto bad = pr;
    bad.V_b(0, 0) = -1.0;
    EXPECT_THROW(validate(bad), ValidationError);
    bad = pr;
    bad.sigma2_1.shape = 0.0;
    EXPECT_THROW(validate(bad), ValidationError);
    bad = pr;
    bad.c = {3.0, 3.0};
    EXPECT_THROW(validate(bad), ValidationError);
    EXPECT_EQ(log_uniform(20.0, pr.a), -std::numeric_limits<double>::infinity());
    EXPECT_NEAR(log_uniform(3.0, pr.a), -std::log(20.0), 1e-15);
}

TEST(Marginal, IidCase) {
    Rng rng(8);
    const auto data = validate_dataset(grid(3, 4, rng, 0.2));
    const auto knots = random_knots(2, rng);
    auto p = random_params(rng, 2);
    p.sigma2_1 = p.sigma2_2 = 0.0;
    double expect = 0.0;
    for (Eigen::Index k = 0; k < data.n_obs(); ++k) {
        const double r = data.z_obs()(k) - data.H().row(data.observed_cells()[static_cast<std::size_t>(k)]).dot(p.b);
        expect += -0.5 * (std::log(2 * M_PI * p.tau2) + r * r / p.tau2);
    }
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    EXPECT_NEAR(marginal_loglik_dense(p, data, mpp, sep), expect, 1e-10);
    EXPECT_NEAR(marginal_loglik_structured(p, data, mpp, sep), expect, 1e-10);
    EXPECT_NEAR(oracle::dense_loglik(p, data, knots), expect, 1e-10);
}

TEST(Marginal, FullRankKnotsGiveExactGneiting) {
    Rng rng(9);
    const auto data = validate_dataset(grid(3, 3, rng));
    KnotSet knots;
    knots.sites.resize(9, 2);
    knots.times.resize(9);
    for (Eigen::Index k = 0; k < 9; ++k) {
        const auto x = data.location(k);
        knots.sites.row(k) = x.s.transpose();
        knots.times(k) = x.u;
    }
    auto p = random_params(rng, 2);
    p.sigma2_2 = 0.0;
    const auto locs = oracle::grid_locations(data);
    Eigen::MatrixXd sigma = p.sigma2_1 * oracle::gneiting(locs, locs, p.theta1, DistanceMetric::euclidean);
    sigma.diagonal().array() += p.tau2;
    const Eigen::VectorXd r = data.z_obs() - data.H() * p.b;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma);
    const double expect = -0.5 * (9 * std::log(2 * M_PI) + ldlt.vectorD().array().log().sum() + r.dot(ldlt.solve(r)));
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    ASSERT_EQ(mpp.Rstar_chol.jitter_used, 0.0);
    EXPECT_LT(rel(marginal_loglik_dense(p, data, mpp, sep), expect), 1e-8);
}

TEST(Marginal, StructuredDenseAndOracleAgree) {
    Rng rng(10);
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::Index n1 = 2 + static_cast<Eigen::Index>(rng.index(15)), n2 = 2 + static_cast<Eigen::Index>(rng.index(8));
        const auto data = validate_dataset(grid(n1, n2, rng, rep % 2 ? 0.15 : 0.0));
        const auto knots = random_knots(1 + static_cast<Eigen::Index>(rng.index(10)), rng);
        auto p = random_params(rng, 2);
        if (rep % 5 == 0) p.sigma2_1 = 0.0;
        const auto mpp = build_mpp(data, knots, p.theta1);
        const auto sep = build_separable(data, p.theta2);
        const double ref = oracle::dense_loglik(p, data, knots, mpp.Rstar_chol.jitter_used);
        EXPECT_LT(rel(marginal_loglik_structured(p, data, mpp, sep), ref), 1e-8) << "rep " << rep;
        EXPECT_LT(rel(marginal_loglik_dense(p, data, mpp, sep), ref), 1e-8) << "rep " << rep;
    }
}

TEST(Marginal, MonteCarloOverLatents) {
    // p(Z) = E_prior[ N(Z | Hb + w1 + w2, tau2 I) ] at n = 4
    Rng rng(11);
    const auto data = validate_dataset(grid(2, 2, rng));
    const auto knots = random_knots(1, rng);
    auto p = random_params(rng, 2);
    p.tau2 = 0.6;
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    const auto locs = oracle::grid_locations(data);
    const auto md = oracle::mpp_dense(locs, knots, p.theta1, data.metric());
    const Eigen::LLT<Eigen::MatrixXd> ks(p.sigma2_2 * oracle::separable(locs, locs, p.theta2, data.metric(), kSeparableJitter));
    const Eigen::MatrixXd lk = ks.matrixL();
    const Eigen::VectorXd mean = data.H() * p.b;
    const int draws = 200000;
    Eigen::VectorXd logs(draws);
    for (int s = 0; s < draws; ++s) {
        const double ws = std::sqrt(p.sigma2_1 * md.rstar(0, 0)) * rng.normal();
        Eigen::VectorXd w1 = md.A.col(0) * ws;
        for (int i = 0; i < 4; ++i) w1(i) += std::sqrt(p.sigma2_1 * md.V(i)) * rng.normal();
        const Eigen::VectorXd w2 = lk * rng.normal_vector(4);
        logs(s) = log_density_data(data.z_obs(), mean + w1 + w2, p.tau2);
    }
    const double mx = logs.maxCoeff();
    const Eigen::ArrayXd w = (logs.array() - mx).exp();
    const double est = mx + std::log(w.mean());
    const double se = std::sqrt((w - w.mean()).square().mean() / draws) / w.mean();
    EXPECT_NEAR(est, marginal_loglik_dense(p, data, mpp, sep), 5.0 * se + 1e-3);
}

TEST(Marginal, SizeGuard) {
    Rng rng(12);
    const auto data = validate_dataset(grid(60, 45, rng, 0.0, 1));
    const auto knots = random_knots(2, rng);
    auto p = random_params(rng, 1);
    const auto mpp = build_mpp(data, knots, p.theta1);
    const auto sep = build_separable(data, p.theta2);
    try {
        marginal_loglik_dense(p, data, mpp, sep);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.kind(), ValidationError::Kind::size_guard);
    }
}
