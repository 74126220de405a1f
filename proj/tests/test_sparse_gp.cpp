#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "gbpmap/sparse_gp.hpp"

using namespace gbpmap;

namespace {

// Exact GP regression oracle: posterior and log marginal from the full
// training set, independent of the FITC path it checks.
struct ExactGpOracle {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    Kernel kernel;
    NoiseModel noise;

    MomentGaussian predict(const Eigen::VectorXd& xstar) const {
        Eigen::MatrixXd ky = kernel.gram(x, x);
        ky.diagonal().array() += noise.variance();
        Eigen::MatrixXd xs(1, xstar.size());
        xs.row(0) = xstar.transpose();
        const Eigen::VectorXd kx = kernel.gram(x, xs).col(0);
        const Eigen::VectorXd w = ky.ldlt().solve(kx);
        MomentGaussian out;
        out.mu = Eigen::VectorXd::Constant(1, w.dot(y));
        out.sigma = Eigen::MatrixXd::Constant(1, 1, kernel.eval(xstar, xstar) - kx.dot(w));
        return out;
    }

    double log_marginal() const {
        const int n = static_cast<int>(x.rows());
        Eigen::MatrixXd ky = kernel.gram(x, x);
        ky.diagonal().array() += noise.variance();
        const Eigen::LLT<Eigen::MatrixXd> llt(ky);
        const Eigen::VectorXd alpha = llt.solve(y);
        double logdet = 0.0;
        for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
        return -0.5 * (y.dot(alpha) + logdet + n * std::log(2.0 * M_PI));
    }
};

Eigen::MatrixXd random_points(int n, int d, std::mt19937_64& rng, double span = 1.0) {
    std::uniform_real_distribution<double> unif(-span, span);
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = unif(rng);
    return x;
}

Eigen::VectorXd point(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

Eigen::MatrixXd single_point(double a, double b) {
    Eigen::MatrixXd m(1, 2);
    m << a, b;
    return m;
}

}  // namespace

TEST_CASE("gp_prior_factor single point unit variance") {
    const InfoGaussian f = gp_prior_factor(single_point(0, 0), Kernel::matern12(1.0, 1.0));
    CHECK(f.eta(0) == doctest::Approx(0.0));
    CHECK(f.lambda(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("gp_prior_factor decorrelation limit") {
    Eigen::MatrixXd z(2, 2);
    z << 0, 0, 100, 0;
    const InfoGaussian f = gp_prior_factor(z, Kernel::matern12(1.0, 1.0));
    CHECK(f.lambda.isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-10));
}

TEST_CASE("gp_prior_factor round trip to gram") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd z = random_points(6, 2, rng);
    const Kernel k = Kernel::matern12(1.4, 0.5);
    const MomentGaussian m = to_moments(gp_prior_factor(z, k));
    CHECK((m.sigma - k.gram(z, z)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("gp_conditional_factor closed form") {
    // Child at distance d with e^-d = 0.5 from the parent, unit matern12.
    const double d = std::log(2.0);
    const InfoGaussian f = gp_conditional_factor(single_point(d, 0), single_point(0, 0),
                                                 Kernel::matern12(1.0, 1.0));
    CHECK(f.lambda(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-9));
    CHECK(f.lambda(0, 1) == doctest::Approx(-2.0 / 3.0).epsilon(1e-9));
    CHECK(f.lambda(1, 0) == doctest::Approx(-2.0 / 3.0).epsilon(1e-9));
    CHECK(f.lambda(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(f.eta.isZero());
}

TEST_CASE("gp_conditional_factor independence limit") {
    const InfoGaussian f = gp_conditional_factor(single_point(1000, 0), single_point(0, 0),
                                                 Kernel::matern12(1.0, 1.0));
    const InfoGaussian prior =
        gp_prior_factor(single_point(1000, 0), Kernel::matern12(1.0, 1.0));
    CHECK(f.lambda(0, 0) == doctest::Approx(prior.lambda(0, 0)).epsilon(1e-9));
    CHECK(std::abs(f.lambda(0, 1)) < 1e-9);
}

TEST_CASE("sequential prior factorization reproduces the dense joint") {
    // prior(B1) x cond(B2|B1) x cond(B3|B1,B2) ... equals N(0, K_all)
    // for up to 5 blocks.
    std::mt19937_64 rng(2);
    const Kernel k = Kernel::matern12(1.0, 0.7);
    for (int blocks = 2; blocks <= 5; ++blocks) {
        std::vector<Eigen::MatrixXd> z;
        int total = 0;
        std::vector<int> offset;
        for (int b = 0; b < blocks; ++b) {
            const int nb = 1 + static_cast<int>(rng() % 3);
            Eigen::MatrixXd zb = random_points(nb, 2, rng);
            zb.col(0).array() += b;  // spread the blocks out
            offset.push_back(total);
            z.push_back(zb);
            total += nb;
        }

        InfoGaussian joint = InfoGaussian::zero(total);
        auto add_at = [&](const InfoGaussian& f, int row_offset, int col_offset, int fo_r,
                          int fo_c, int dr, int dc) {
            joint.lambda.block(row_offset, col_offset, dr, dc) +=
                f.lambda.block(fo_r, fo_c, dr, dc);
        };

        joint.lambda.block(0, 0, static_cast<int>(z[0].rows()), static_cast<int>(z[0].rows())) +=
            gp_prior_factor(z[0], k).lambda;
        for (int b = 1; b < blocks; ++b) {
            int parent_rows = 0;
            for (int p = 0; p < b; ++p) parent_rows += static_cast<int>(z[static_cast<size_t>(p)].rows());
            Eigen::MatrixXd zp(parent_rows, 2);
            int r = 0;
            for (int p = 0; p < b; ++p) {
                zp.middleRows(r, z[static_cast<size_t>(p)].rows()) = z[static_cast<size_t>(p)];
                r += static_cast<int>(z[static_cast<size_t>(p)].rows());
            }
            const InfoGaussian f = gp_conditional_factor(z[static_cast<size_t>(b)], zp, k);
            // Scope order (child, parents...): parents are contiguous from 0.
            const int dc = static_cast<int>(z[static_cast<size_t>(b)].rows());
            add_at(f, offset[static_cast<size_t>(b)], offset[static_cast<size_t>(b)], 0, 0, dc, dc);
            add_at(f, offset[static_cast<size_t>(b)], 0, 0, dc, dc, parent_rows);
            add_at(f, 0, offset[static_cast<size_t>(b)], dc, 0, parent_rows, dc);
            add_at(f, 0, 0, dc, dc, parent_rows, parent_rows);
        }

        Eigen::MatrixXd z_all(total, 2);
        int r = 0;
        for (const auto& zb : z) {
            z_all.middleRows(r, zb.rows()) = zb;
            r += static_cast<int>(zb.rows());
        }
        const MomentGaussian m = to_moments(joint);
        CHECK((m.sigma - k.gram(z_all, z_all)).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(m.mu.cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("fitc_observation_factor co-located with single inducing point") {
    Observation obs{point(0, 0), 0.5, 0};
    const InfoGaussian f =
        fitc_observation_factor(obs, single_point(0, 0), Kernel::matern12(1.0, 1.0),
                                NoiseModel::from_sigma(std::sqrt(0.1)));
    CHECK(f.eta(0) == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(f.lambda(0, 0) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("fitc_observation_factor far away is zero information") {
    Observation obs{point(500, 0), 1.0, 0};
    const InfoGaussian f = fitc_observation_factor(
        obs, single_point(0, 0), Kernel::matern12(1.0, 1.0), NoiseModel::from_sigma(0.1));
    CHECK(f.lambda.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(f.eta.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("FITC with Z == X matches the exact GP posterior over u") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss;
    const Kernel k = Kernel::matern12(1.0, 0.6);
    const NoiseModel noise = NoiseModel::from_sigma(0.2);
    const Eigen::MatrixXd x = random_points(5, 2, rng);
    Eigen::VectorXd y(5);
    for (int i = 0; i < 5; ++i) y(i) = gauss(rng);

    SparseGpModel model(x, k, noise,
                        {.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100});
    for (int i = 0; i < 5; ++i) {
        model.add_observation({x.row(i).transpose(), y(i), i});
    }
    const MomentGaussian got = model.belief_moments();

    const ExactGpOracle oracle{x, y, k, noise};
    for (int i = 0; i < 5; ++i) {
        const MomentGaussian e = oracle.predict(x.row(i).transpose());
        CHECK(got.mu(i) == doctest::Approx(e.mu(0)).epsilon(1e-8));
        CHECK(got.sigma(i, i) == doctest::Approx(e.sigma(0, 0)).epsilon(1e-8));
    }
}

TEST_CASE("fuse zero-information factor leaves accumulator unchanged") {
    SparseGpModel model(single_point(0, 0), Kernel::matern12(1.0, 1.0),
                        NoiseModel::from_sigma(0.1), {});
    const InfoGaussian before = model.block().accumulator;
    model.fuse_factor(InfoGaussian::zero(1));
    CHECK(model.block().accumulator.eta == before.eta);
    CHECK(model.block().accumulator.lambda == before.lambda);
}

TEST_CASE("fusing equals keeping factors live") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd z = random_points(3, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.5);
    const NoiseModel noise = NoiseModel::from_sigma(0.15);

    SparseGpConfig cfg{.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100};
    SparseGpModel live(z, k, noise, cfg);
    SparseGpModel fused(z, k, noise, cfg);
    for (int i = 0; i < 2; ++i) {
        const Observation obs{random_points(1, 2, rng).row(0).transpose(), gauss(rng), i};
        live.add_observation(obs);
        fused.add_observation(obs);
    }
    fused.fuse_all();
    const InfoGaussian a = live.belief();
    const InfoGaussian b = fused.belief();
    CHECK(a.eta.isApprox(b.eta, 1e-12));
    CHECK(a.lambda.isApprox(b.lambda, 1e-12));
}

TEST_CASE("streaming fusion of 100 observations equals batch FITC fit") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd z = random_points(4, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.5);
    const NoiseModel noise = NoiseModel::from_sigma(0.2);

    SparseGpModel streaming(
        z, k, noise, {.jitter = kDefaultJitter, .buffer_capacity = 1, .max_inducing = 100});
    InfoGaussian batch_sum = InfoGaussian::zero(4);
    for (int i = 0; i < 100; ++i) {
        const Observation obs{random_points(1, 2, rng).row(0).transpose(), gauss(rng), i};
        streaming.add_observation(obs);
        batch_sum += fitc_observation_factor(obs, z, k, noise);
    }
    streaming.fuse_all();
    const InfoGaussian batch = product(gp_prior_factor(z, k), batch_sum);
    const InfoGaussian got = streaming.belief();
    CHECK((got.eta - batch.eta).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((got.lambda - batch.lambda).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fusion order does not change the belief") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd z = random_points(3, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.5);
    const NoiseModel noise = NoiseModel::from_sigma(0.2);

    std::vector<Observation> obs;
    for (int i = 0; i < 50; ++i) {
        obs.push_back({random_points(1, 2, rng).row(0).transpose(), gauss(rng), i});
    }
    auto fit = [&](const std::vector<Observation>& seq) {
        SparseGpModel m(z, k, noise,
                        {.jitter = kDefaultJitter, .buffer_capacity = 1, .max_inducing = 100});
        for (const auto& o : seq) m.add_observation(o);
        m.fuse_all();
        return m.belief();
    };
    const InfoGaussian base = fit(obs);
    std::vector<Observation> shuffled = obs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const InfoGaussian perm = fit(shuffled);
    CHECK((base.eta - perm.eta).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((base.lambda - perm.lambda).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("predict at an inducing input returns the belief moments") {
    SparseGpModel model(single_point(0.3, -0.1), Kernel::matern12(1.0, 0.8),
                        NoiseModel::from_sigma(0.1), {});
    model.add_observation({point(0.3, -0.1), 0.7, 0});
    const MomentGaussian belief = model.belief_moments();
    const MomentGaussian pred = model.predict(point(0.3, -0.1));
    CHECK(pred.mu(0) == doctest::Approx(belief.mu(0)).epsilon(1e-10));
    CHECK(pred.sigma(0, 0) == doctest::Approx(belief.sigma(0, 0)).epsilon(1e-10));
}

TEST_CASE("predict far away reverts to the prior") {
    SparseGpModel model(single_point(0, 0), Kernel::matern12(1.3, 0.5),
                        NoiseModel::from_sigma(0.1), {});
    model.add_observation({point(0, 0), 2.0, 0});
    const MomentGaussian pred = model.predict(point(300, 0));
    CHECK(pred.mu(0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pred.sigma(0, 0) == doctest::Approx(1.3).epsilon(1e-9));
}

TEST_CASE("predict with prior belief equals the prior GP") {
    std::mt19937_64 rng(7);
    const Eigen::MatrixXd z = random_points(4, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.6);
    SparseGpModel model(z, k, NoiseModel::from_sigma(0.1), {});
    const Eigen::VectorXd xstar = point(0.2, 0.4);
    const MomentGaussian pred = model.predict(xstar);
    CHECK(pred.mu(0) == doctest::Approx(0.0));
    CHECK(pred.sigma(0, 0) == doctest::Approx(k.eval(xstar, xstar)).epsilon(1e-8));
}

TEST_CASE("predict variance stays within the sanity bound") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd z = random_points(5, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.5);
    SparseGpModel model(
        z, k, NoiseModel::from_sigma(0.1),
        {.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100});
    for (int i = 0; i < 30; ++i) {
        model.add_observation({random_points(1, 2, rng).row(0).transpose(), gauss(rng), i});
    }
    for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd xs = random_points(1, 2, rng, 2.0).row(0).transpose();
        const MomentGaussian pred = model.predict(xs);
        CHECK(pred.sigma(0, 0) >= 0.0);
        CHECK(pred.sigma(0, 0) <= k.eval(xs, xs) + 1e-8);
    }
}

TEST_CASE("greedy selection: sole candidate at an existing z is still chosen") {
    const auto picks = greedy_variance_select(single_point(0, 0), single_point(0, 0),
                                              Kernel::matern12(1.0, 1.0), 1);
    REQUIRE(picks.size() == 1);
    CHECK(picks[0] == 0);
}

TEST_CASE("greedy selection prefers the far candidate") {
    Eigen::MatrixXd candidates(2, 2);
    candidates << 0.05, 0.0,  // near the existing point
        3.0, 0.0;             // far
    const auto picks = greedy_variance_select(candidates, single_point(0, 0),
                                              Kernel::matern12(1.0, 1.0), 2);
    REQUIRE(picks.size() == 2);
    CHECK(picks[0] == 1);
    CHECK(picks[1] == 0);
}

TEST_CASE("greedy selection equals the direct re-scoring oracle") {
    std::mt19937_64 rng(9);
    const Eigen::MatrixXd candidates = random_points(20, 2, rng);
    const Eigen::MatrixXd z = random_points(3, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.4);

    const auto picks = greedy_variance_select(candidates, z, k, 5);

    // Oracle: recompute the greedy argmax by definition at every round.
    Eigen::MatrixXd z_ext = z;
    std::vector<bool> used(20, false);
    for (int round = 0; round < 5; ++round) {
        int best = -1;
        double best_score = -1e300;
        const Eigen::MatrixXd kuu = k.gram(z_ext, z_ext);
        for (int i = 0; i < 20; ++i) {
            if (used[static_cast<size_t>(i)]) continue;
            Eigen::MatrixXd xs(1, 2);
            xs.row(0) = candidates.row(i);
            const Eigen::VectorXd kx = k.gram(z_ext, xs).col(0);
            const Eigen::VectorXd a = spd_solve(kuu, kx);
            const double score = k.eval(xs.row(0), xs.row(0)) - kx.dot(a);
            if (score > best_score) {
                best_score = score;
                best = i;
            }
        }
        CHECK(picks[static_cast<size_t>(round)] == best);
        used[static_cast<size_t>(best)] = true;
        z_ext.conservativeResize(z_ext.rows() + 1, 2);
        z_ext.row(z_ext.rows() - 1) = candidates.row(best);
    }
}

TEST_CASE("add_inducing_point then co-located observation is interpolated") {
    SparseGpModel model(single_point(-0.5, 0), Kernel::matern12(1.0, 0.5),
                        NoiseModel::from_sigma(0.05), {});
    model.add_inducing_point(point(0.4, 0.4), 1);
    model.add_observation({point(0.4, 0.4), 1.5, 1});
    const MomentGaussian pred = model.predict(point(0.4, 0.4));
    // One-point posterior at the data: mean ~= y k / (k + sigma^2); the far
    // second point barely perturbs it.
    CHECK(pred.mu(0) == doctest::Approx(1.5 / (1.0 + 0.0025)).epsilon(1e-3));
}

TEST_CASE("duplicate inducing location stays finite under jitter") {
    SparseGpModel model(single_point(0.1, 0.1), Kernel::matern12(1.0, 0.5),
                        NoiseModel::from_sigma(0.1), {});
    model.add_inducing_point(point(0.1, 0.1), 1);
    model.add_observation({point(0.1, 0.1), 1.0, 1});
    const MomentGaussian belief = model.belief_moments();
    CHECK(belief.mu.allFinite());
    CHECK(belief.sigma.allFinite());
}

TEST_CASE("incremental growth equals batch construction when data is retained") {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> gauss;
    const Kernel k = Kernel::matern12(1.0, 0.5);
    const NoiseModel noise = NoiseModel::from_sigma(0.2);
    const Eigen::MatrixXd z10 = random_points(10, 2, rng);

    std::vector<Observation> obs;
    for (int i = 0; i < 8; ++i) {
        obs.push_back({random_points(1, 2, rng).row(0).transpose(), gauss(rng), i});
    }

    SparseGpConfig cfg{.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100};
    SparseGpModel grown(z10.topRows(1), k, noise, cfg);
    for (const auto& o : obs) grown.add_observation(o);
    for (int i = 1; i < 10; ++i) grown.add_inducing_point(z10.row(i).transpose(), i);

    SparseGpModel upfront(z10, k, noise, cfg);
    for (const auto& o : obs) upfront.add_observation(o);

    const InfoGaussian a = grown.belief();
    const InfoGaussian b = upfront.belief();
    CHECK((a.eta - b.eta).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((a.lambda - b.lambda).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("retire: under the limit is a no-op") {
    SparseGpModel model(single_point(0, 0), Kernel::matern12(1.0, 1.0),
                        NoiseModel::from_sigma(0.1), {});
    const Eigen::MatrixXd z_before = model.block().z;
    model.retire_inducing_points(5);
    CHECK(model.block().z == z_before);
}

TEST_CASE("retire a zero-correlation point leaves the rest unchanged") {
    Eigen::MatrixXd z(3, 2);
    z << 500, 0,  // oldest, effectively uncorrelated with the others
        0, 0, 0.2, 0;
    const Kernel k = Kernel::matern12(1.0, 0.3);
    SparseGpModel model(
        z, k, NoiseModel::from_sigma(0.1),
        {.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100});
    model.add_observation({point(0.1, 0), 0.5, 0});
    model.fuse_all();
    const MomentGaussian before = model.belief_moments();
    model.retire_inducing_points(2);
    const MomentGaussian after = model.belief_moments();
    CHECK(std::abs(after.mu(0) - before.mu(1)) < 1e-7);
    CHECK(std::abs(after.mu(1) - before.mu(2)) < 1e-7);
    CHECK(std::abs(after.sigma(0, 0) - before.sigma(1, 1)) < 1e-7);
}

TEST_CASE("retire 1 of 5 matches the dense marginalization oracle") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd z = random_points(5, 2, rng);
    const Kernel k = Kernel::matern12(1.0, 0.6);
    SparseGpModel model(z, k, NoiseModel::from_sigma(0.2),
                        {.jitter = kDefaultJitter, .buffer_capacity = 2, .max_inducing = 100});
    for (int i = 0; i < 12; ++i) {
        model.add_observation({random_points(1, 2, rng).row(0).transpose(), gauss(rng), i});
    }
    model.fuse_all();
    const MomentGaussian joint_before = model.belief_moments();
    model.retire_inducing_points(4);
    const MomentGaussian after = model.belief_moments();
    for (int i = 0; i < 4; ++i) {
        CHECK(after.mu(i) == doctest::Approx(joint_before.mu(i + 1)).epsilon(1e-8));
        for (int j = 0; j < 4; ++j) {
            CHECK(after.sigma(i, j) ==
                  doctest::Approx(joint_before.sigma(i + 1, j + 1)).epsilon(1e-8));
        }
    }
}

TEST_CASE("fitc_log_marginal with Z == X equals the exact GP") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd x = random_points(7, 2, rng);
    Eigen::VectorXd y(7);
    for (int i = 0; i < 7; ++i) y(i) = gauss(rng);
    const Kernel k = Kernel::matern12(1.2, 0.5);
    const NoiseModel noise = NoiseModel::from_sigma(0.3);

    const FitcObjective got = fitc_log_marginal(x, y, x, k, noise);
    const ExactGpOracle oracle{x, y, k, noise};
    CHECK(got.value == doctest::Approx(oracle.log_marginal()).epsilon(1e-8));
}

TEST_CASE("fitc_log_marginal N=1 closed form") {
    Eigen::MatrixXd x(1, 2);
    x << 0.0, 0.0;
    Eigen::VectorXd y(1);
    y << 0.7;
    const Kernel k = Kernel::matern12(1.5, 1.0);
    const NoiseModel noise = NoiseModel::from_sigma(0.2);
    const double var = 1.5 + 0.04;
    const double expected = -0.5 * (std::log(2.0 * M_PI * var) + 0.49 / var);
    CHECK(fitc_log_marginal(x, y, x, k, noise).value ==
          doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("fitc_log_marginal gradients match central finite differences") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unif(0.4, 1.6);
    const double step = 1e-6;

    for (int trial = 0; trial < 20; ++trial) {
        KernelPart space{KernelFamily::kMatern12, std::log(unif(rng)), std::log(unif(rng)),
                         {0, 1}};
        KernelPart time{KernelFamily::kMatern12, std::log(unif(rng)), std::log(unif(rng)), {2}};
        Kernel k({space, time});
        NoiseModel noise = NoiseModel::from_sigma(unif(rng) * 0.3);

        const Eigen::MatrixXd x = random_points(8, 3, rng);
        const Eigen::MatrixXd z = random_points(4, 3, rng);
        Eigen::VectorXd y(8);
        for (int i = 0; i < 8; ++i) y(i) = gauss(rng);

        const FitcObjective obj = fitc_log_marginal(x, y, z, k, noise);
        const int np = k.n_params();
        for (int p = 0; p <= np; ++p) {
            auto value_at = [&](double delta) {
                Kernel kk = k;
                NoiseModel nn = noise;
                if (p < np) {
                    Eigen::VectorXd theta = kk.params();
                    theta(p) += delta;
                    kk.set_params(theta);
                } else {
                    nn.log_sigma += delta;
                }
                return fitc_log_marginal(x, y, z, kk, nn).value;
            };
            const double fd = (value_at(step) - value_at(-step)) / (2.0 * step);
            const double scale = std::max(1e-8, std::abs(fd));
            CHECK(std::abs(obj.gradient(p) - fd) / scale < 1e-4);
        }
    }
}

TEST_CASE("hyper_step increases the objective or is rejected") {
    std::mt19937_64 rng(14);
    std::normal_distribution<double> gauss;
    const Eigen::MatrixXd z = random_points(4, 2, rng);
    SparseGpModel model(
        z, Kernel::matern12(0.5, 0.9), NoiseModel::from_sigma(0.4),
        {.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100});
    for (int i = 0; i < 15; ++i) {
        const Eigen::VectorXd x = random_points(1, 2, rng).row(0).transpose();
        model.add_observation({x, std::sin(2.0 * x(0)) + 0.05 * gauss(rng), i});
    }
    Eigen::MatrixXd xs(15, 2);
    Eigen::VectorXd ys(15);
    for (int i = 0; i < 15; ++i) {
        xs.row(i) = model.retained()[static_cast<size_t>(i)].x.transpose();
        ys(i) = model.retained()[static_cast<size_t>(i)].y;
    }
    double prev =
        fitc_log_marginal(xs, ys, model.block().z, model.kernel(), model.noise()).value;
    for (int step = 0; step < 10; ++step) {
        const bool accepted = model.hyper_step(0.05, 0.5);
        const double now =
            fitc_log_marginal(xs, ys, model.block().z, model.kernel(), model.noise()).value;
        if (accepted) {
            CHECK(now >= prev);
        } else {
            CHECK(now == doctest::Approx(prev));
        }
        prev = now;
    }
}

TEST_CASE("bce_linearize at f0=0, y=1") {
    const auto [eta, lambda] = bce_linearize(0.0, 1.0);
    CHECK(eta == doctest::Approx(0.5));
    CHECK(lambda == doctest::Approx(0.25));
}

TEST_CASE("bce linearization follows the hand formula as the mean shifts") {
    for (double f0 : {-1.3, -0.2, 0.9, 2.4}) {
        const auto [eta, lambda] = bce_linearize(f0, 0.0);
        const double s = 1.0 / (1.0 + std::exp(-f0));
        CHECK(lambda == doctest::Approx(s * (1.0 - s)).epsilon(1e-12));
        CHECK(eta == doctest::Approx((0.0 - s) + s * (1.0 - s) * f0).epsilon(1e-12));
    }
}

TEST_CASE("bce observation factor pushes the belief toward the labels") {
    SparseGpModel model(
        single_point(0, 0), Kernel::matern12(1.0, 0.5), NoiseModel::from_sigma(0.1),
        {.jitter = kDefaultJitter, .buffer_capacity = 3, .max_inducing = 50});
    for (int i = 0; i < 20; ++i) {
        model.add_binary_observation({point(0, 0), 1.0, i});
        model.update_local();
    }
    model.fuse_all();
    CHECK(model.belief_moments().mu(0) > 1.0);
}

TEST_CASE("fuse_binary_batch separates occupied from free space") {
    std::mt19937_64 rng(15);
    Eigen::MatrixXd z(2, 2);
    z << 0.8, 0.0, -0.8, 0.0;
    const Kernel k = Kernel::matern12(1.0, 0.6);
    std::vector<Observation> batch;
    for (int i = 0; i < 40; ++i) {
        Eigen::VectorXd x = random_points(1, 2, rng).row(0).transpose();
        batch.push_back({x, (x(0) > 0) ? 1.0 : 0.0, i});
    }
    SparseGpModel model(
        z, k, NoiseModel::from_sigma(0.1),
        {.jitter = kDefaultJitter, .buffer_capacity = 100, .max_inducing = 100});
    model.fuse_binary_batch(batch);
    CHECK(model.predict(point(0.8, 0.0)).mu(0) > 0.0);
    CHECK(model.predict(point(-0.8, 0.0)).mu(0) < 0.0);
}
