#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cbald/dataset.hpp"
#include "cbald/errors.hpp"
#include "cbald/propensity.hpp"
#include "cbald/rng.hpp"
#include "util.hpp"

using namespace cbald;

namespace {

ObservationalDataset logistic_pool(int n, double w, double b, std::uint64_t seed) {
    Rng rng(seed);
    ObservationalDataset pool;
    pool.covariates.resize(n, 1);
    pool.treatments.resize(n);
    pool.outcomes = Eigen::VectorXd::Zero(n);
    pool.source = DataSource::synthetic;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        double p = 1.0 / (1.0 + std::exp(-(w * x + b)));
        pool.covariates(i, 0) = x;
        pool.treatments[i] = rng.bernoulli(p) ? 1 : 0;
    }
    return pool;
}

}  // namespace

TEST_CASE("logistic fit recovers the generating coefficients") {
    ObservationalDataset pool = logistic_pool(4000, 1.5, -0.3, 11);
    PropensityModel model = fit_propensity(pool);
    CHECK(model.fitted());
    CHECK(model.weights[0] == doctest::Approx(1.5).epsilon(0.1));
    CHECK(model.bias == doctest::Approx(-0.3).epsilon(0.5));

    // Penalized objective never increases across iterations.
    REQUIRE(model.nll_history.size() >= 2);
    for (std::size_t i = 1; i < model.nll_history.size(); ++i) {
        CHECK(model.nll_history[i] <= model.nll_history[i - 1] + 1e-12);
    }
}

TEST_CASE("fit is deterministic for fixed data") {
    ObservationalDataset pool = logistic_pool(500, 0.7, 0.2, 3);
    PropensityModel a = fit_propensity(pool);
    PropensityModel b = fit_propensity(pool);
    CHECK(exact_equal(a.weights, b.weights));
    CHECK(a.bias == b.bias);
}

TEST_CASE("predictions respect the clamp and the complement rule") {
    ObservationalDataset pool = logistic_pool(2000, 2.0, 0.0, 5);
    PropensityModel model = fit_propensity(pool);

    Eigen::VectorXd far_pos(1), far_neg(1), mid(1);
    far_pos << 50.0;
    far_neg << -50.0;
    mid << 0.1;

    double hi = predict_pi(model, far_pos, 1);
    double lo = predict_pi(model, far_neg, 1);
    CHECK(hi == 1.0 - model.clamp_eps);
    CHECK(lo == model.clamp_eps);

    double p1 = predict_pi(model, mid, 1);
    double p0 = predict_pi(model, mid, 0);
    CHECK(p1 + p0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p1 > 0.0);
    CHECK(p1 < 1.0);
}

TEST_CASE("batch predictions match scalar predictions") {
    ObservationalDataset pool = logistic_pool(800, 1.0, 0.1, 7);
    PropensityModel model = fit_propensity(pool);

    Eigen::MatrixXd xs(4, 1);
    xs << -2.0, -0.1, 0.4, 3.0;
    Eigen::VectorXi ts(4);
    ts << 0, 1, 1, 0;
    Eigen::VectorXd batch = predict_pi(model, xs, ts);
    for (int i = 0; i < 4; ++i) {
        CHECK(batch[i] == predict_pi(model, xs.row(i).transpose(), ts[i]));
    }
}

TEST_CASE("ridge keeps separable data finite") {
    ObservationalDataset pool;
    pool.covariates.resize(20, 1);
    pool.treatments.resize(20);
    pool.outcomes = Eigen::VectorXd::Zero(20);
    pool.source = DataSource::synthetic;
    for (int i = 0; i < 20; ++i) {
        double x = i < 10 ? -1.0 - 0.1 * i : 1.0 + 0.1 * (i - 10);
        pool.covariates(i, 0) = x;
        pool.treatments[i] = x > 0.0 ? 1 : 0;
    }
    PropensityModel model = fit_propensity(pool);
    CHECK(std::isfinite(model.weights[0]));
    CHECK(std::isfinite(model.bias));
    Eigen::VectorXd x(1);
    x << 0.0;
    double p = predict_pi(model, x, 1);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
}

TEST_CASE("invalid inputs are rejected") {
    ObservationalDataset empty;
    empty.covariates.resize(0, 1);
    empty.treatments.resize(0);
    empty.outcomes.resize(0);
    empty.source = DataSource::synthetic;
    CHECK_THROWS_AS(fit_propensity(empty), precondition_error);

    ObservationalDataset pool = logistic_pool(50, 1.0, 0.0, 1);
    CHECK_THROWS_AS(fit_propensity(pool, -1.0), precondition_error);
    CHECK_THROWS_AS(fit_propensity(pool, 1e-4, 0.0), precondition_error);
    CHECK_THROWS_AS(fit_propensity(pool, 1e-4, 0.6), precondition_error);

    ObservationalDataset bad_t = pool;
    bad_t.treatments[3] = 2;
    CHECK_THROWS_AS(fit_propensity(bad_t), precondition_error);

    PropensityModel unfitted;
    Eigen::VectorXd x(1);
    x << 0.0;
    CHECK_THROWS_AS(predict_pi(unfitted, x, 1), state_error);

    PropensityModel model = fit_propensity(pool);
    Eigen::VectorXd wrong(2);
    wrong << 0.0, 0.0;
    CHECK_THROWS_AS(predict_pi(model, wrong, 1), precondition_error);
    CHECK_THROWS_AS(predict_pi(model, x, 2), precondition_error);
}
