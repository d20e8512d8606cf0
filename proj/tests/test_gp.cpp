#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cbald/dataset.hpp"
#include "cbald/errors.hpp"
#include "cbald/posterior.hpp"
#include "util.hpp"

using namespace cbald;

namespace {

// Plain quadratic-form GP posterior, written independently of the library:
// naive kernel loops, full-pivot LU instead of Cholesky, explicit joint
// covariance over both arms of each query.
struct DenseOracle {
    std::vector<PosteriorSummary> summaries;
};

double oracle_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     const GpHyperparams& hyper) {
    double q = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) {
        double diff = (a[j] - b[j]) / hyper.lengthscales[j];
        q += diff * diff;
    }
    return hyper.signal_var * std::exp(-0.5 * q);
}

DenseOracle dense_posterior(const LabeledSet& train, const GpHyperparams& hyper,
                            const Eigen::MatrixXd& queries) {
    Eigen::Index n = train.n();
    Eigen::Index d = train.dim();

    Eigen::VectorXd x_mean = train.covariates.colwise().mean();
    Eigen::VectorXd x_scale(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        double var = (train.covariates.col(j).array() - x_mean[j]).square().mean();
        x_scale[j] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    double y_mean = 0.0, y_scale = 1.0;
    if (n >= 2) {
        y_mean = train.outcomes.mean();
        double var = (train.outcomes.array() - y_mean).square().mean();
        y_scale = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }

    auto lift = [&](const Eigen::VectorXd& x, double t) {
        Eigen::VectorXd z(d + 1);
        for (Eigen::Index j = 0; j < d; ++j) z[j] = (x[j] - x_mean[j]) / x_scale[j];
        z[d] = t;
        return z;
    };

    std::vector<Eigen::VectorXd> zs;
    for (Eigen::Index i = 0; i < n; ++i) {
        zs.push_back(lift(train.covariates.row(i).transpose(),
                          static_cast<double>(train.treatments[i])));
    }

    Eigen::MatrixXd gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) gram(i, j) = oracle_kernel(zs[i], zs[j], hyper);
    }
    gram.diagonal().array() += hyper.noise_var;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);

    Eigen::VectorXd ys = (train.outcomes.array() - y_mean) / y_scale;
    Eigen::VectorXd alpha = lu.solve(ys);

    DenseOracle oracle;
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        Eigen::VectorXd z0 = lift(queries.row(i).transpose(), 0.0);
        Eigen::VectorXd z1 = lift(queries.row(i).transpose(), 1.0);
        Eigen::VectorXd k0(n), k1(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            k0[r] = oracle_kernel(zs[r], z0, hyper);
            k1[r] = oracle_kernel(zs[r], z1, hyper);
        }
        double m0 = k0.dot(alpha);
        double m1 = k1.dot(alpha);
        Eigen::VectorXd s0 = lu.solve(k0);
        Eigen::VectorXd s1 = lu.solve(k1);
        double v0 = hyper.signal_var - k0.dot(s0);
        double v1 = hyper.signal_var - k1.dot(s1);
        double c01 = oracle_kernel(z0, z1, hyper) - k0.dot(s1);
        PosteriorSummary s;
        s.mu0_mean = m0 * y_scale + y_mean;
        s.mu1_mean = m1 * y_scale + y_mean;
        s.mu0_var = v0 * y_scale * y_scale;
        s.mu1_var = v1 * y_scale * y_scale;
        s.cov01 = c01 * y_scale * y_scale;
        s.tau_mean = s.mu1_mean - s.mu0_mean;
        s.tau_var = s.mu0_var + s.mu1_var - 2.0 * s.cov01;
        oracle.summaries.push_back(s);
    }
    return oracle;
}

LabeledSet small_train(int n, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_pool = n;
    cfg.n_valid = 2;
    cfg.n_test = 2;
    cfg.seed = seed;
    return labeled_view(generate_synthetic(cfg).pool);
}

GpHyperparams unit_hyper(int dims, double lt = 1.0, double noise = 0.1) {
    GpHyperparams h;
    h.lengthscales = Eigen::VectorXd::Ones(dims + 1);
    h.lengthscales[dims] = lt;
    h.signal_var = 1.0;
    h.noise_var = noise;
    return h;
}

}  // namespace

TEST_CASE("GP posterior matches a dense oracle") {
    LabeledSet train = small_train(30, 4);
    GpHyperparams hyper = unit_hyper(1, 0.8, 0.2);
    GpHyperGrid grid;
    grid.candidates.push_back(hyper);

    GpModel model = fit_gp(train, grid);

    Eigen::MatrixXd queries(15, 1);
    for (int i = 0; i < 15; ++i) queries(i, 0) = -3.0 + 6.0 * i / 14.0;

    auto got = predict_summary(model, queries);
    DenseOracle want = dense_posterior(train, hyper, queries);

    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got[i].mu0_mean - want.summaries[i].mu0_mean) <= 1e-8);
        CHECK(std::abs(got[i].mu1_mean - want.summaries[i].mu1_mean) <= 1e-8);
        CHECK(std::abs(got[i].mu0_var - want.summaries[i].mu0_var) <= 1e-8);
        CHECK(std::abs(got[i].mu1_var - want.summaries[i].mu1_var) <= 1e-8);
        CHECK(std::abs(got[i].cov01 - want.summaries[i].cov01) <= 1e-8);
    }
}

TEST_CASE("single observation shrinks the prior by the noise ratio") {
    LabeledSet train;
    train.covariates = Eigen::MatrixXd::Zero(1, 1);
    train.treatments = Eigen::VectorXi::Ones(1);
    train.outcomes = Eigen::VectorXd::Constant(1, 2.0);

    GpHyperGrid grid;
    grid.candidates.push_back(unit_hyper(1));
    GpModel model = fit_gp(train, grid);

    Eigen::MatrixXd query = Eigen::MatrixXd::Zero(1, 1);
    auto s = predict_summary(model, query);
    CHECK(s[0].mu1_mean == doctest::Approx(2.0 / 1.1).epsilon(1e-12));
    CHECK(s[0].mu1_var == doctest::Approx(1.0 - 1.0 / 1.1).epsilon(1e-12));
}

TEST_CASE("prior model predicts zero mean and full signal variance") {
    GpHyperparams hyper = unit_hyper(1, 1.0, 0.1);
    GpModel model = GpModel::prior(hyper, 1);
    CHECK(model.fitted());
    CHECK(model.train_size() == 0);

    Eigen::MatrixXd queries(3, 1);
    queries << -2.0, 0.0, 5.0;
    auto s = predict_summary(model, queries);
    for (const auto& row : s) {
        CHECK(row.mu0_mean == 0.0);
        CHECK(row.mu1_mean == 0.0);
        CHECK(row.mu0_var == 1.0);
        CHECK(row.mu1_var == 1.0);
        CHECK(row.cov01 == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
    }
}

TEST_CASE("summary invariants hold on fitted posteriors") {
    LabeledSet train = small_train(60, 9);
    GpModel model = fit_gp(train, GpHyperGrid::defaults(1));

    Eigen::MatrixXd queries(200, 1);
    for (int i = 0; i < 200; ++i) queries(i, 0) = -4.0 + 8.0 * i / 199.0;
    for (const auto& s : predict_summary(model, queries)) {
        CHECK(s.tau_mean == s.mu1_mean - s.mu0_mean);
        CHECK(s.mu0_var >= 0.0);
        CHECK(s.mu1_var >= 0.0);
        double identity = s.mu0_var + s.mu1_var - 2.0 * s.cov01;
        double scale = std::max({std::abs(identity), std::abs(s.tau_var), 1e-30});
        CHECK(std::abs(s.tau_var - identity) / scale <= 1e-10);
        CHECK(std::abs(s.cov01) <= std::sqrt(s.mu0_var * s.mu1_var) + 1e-12);
    }
}

TEST_CASE("marginal likelihood picks the plausible candidate") {
    // Noiseless smooth data: a tiny-noise candidate should beat a huge-noise
    // one.
    LabeledSet train;
    int n = 40;
    train.covariates.resize(n, 1);
    train.treatments = Eigen::VectorXi::Ones(n);
    train.outcomes.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = -2.0 + 4.0 * i / (n - 1);
        train.covariates(i, 0) = x;
        train.outcomes[i] = std::sin(x);
    }
    GpHyperGrid grid;
    grid.candidates.push_back(unit_hyper(1, 1.0, 0.9));
    grid.candidates.push_back(unit_hyper(1, 1.0, 0.001));
    GpModel model = fit_gp(train, grid);
    CHECK(model.hyperparams().noise_var == 0.001);
    CHECK(std::isfinite(model.log_marginal_likelihood()));
}

TEST_CASE("more labels shrink posterior variance") {
    LabeledSet big = small_train(120, 12);
    LabeledSet small;
    small.covariates = big.covariates.topRows(15);
    small.treatments = big.treatments.head(15);
    small.outcomes = big.outcomes.head(15);

    GpHyperGrid grid;
    grid.candidates.push_back(unit_hyper(1, 0.8, 0.2));
    GpModel coarse = fit_gp(small, grid);
    GpModel fine = fit_gp(big, grid);

    Eigen::MatrixXd queries(50, 1);
    for (int i = 0; i < 50; ++i) queries(i, 0) = -2.0 + 4.0 * i / 49.0;
    auto sc = predict_summary(coarse, queries);
    auto sf = predict_summary(fine, queries);
    double mean_coarse = 0.0, mean_fine = 0.0;
    for (std::size_t i = 0; i < sc.size(); ++i) {
        mean_coarse += sc[i].mu0_var + sc[i].mu1_var;
        mean_fine += sf[i].mu0_var + sf[i].mu1_var;
    }
    CHECK(mean_fine < mean_coarse);
}

TEST_CASE("single-arm training keeps counterfactual uncertainty high") {
    LabeledSet train;
    int n = 50;
    train.covariates.resize(n, 1);
    train.treatments = Eigen::VectorXi::Ones(n);
    train.outcomes.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = -2.0 + 4.0 * i / (n - 1);
        train.covariates(i, 0) = x;
        train.outcomes[i] = noiseless_surface(x, 1);
    }
    GpHyperGrid grid;
    grid.candidates.push_back(unit_hyper(1, 0.5, 0.05));
    GpModel model = fit_gp(train, grid);

    Eigen::MatrixXd query(1, 1);
    query << 0.0;
    auto s = predict_summary(model, query);
    double prior_var = model.hyperparams().signal_var;
    // Standardized units: factual arm is pinned down, the other is not.
    CHECK(s[0].mu1_var < 0.05 * prior_var * 10.0);
    CHECK(s[0].mu0_var > s[0].mu1_var * 5.0);
}

TEST_CASE("tau draws are consistent with the summary moments") {
    LabeledSet train = small_train(40, 21);
    GpHyperGrid grid;
    grid.candidates.push_back(unit_hyper(1, 0.8, 0.2));
    GpModel model = fit_gp(train, grid);

    Eigen::MatrixXd queries(5, 1);
    queries << -1.5, -0.5, 0.0, 0.8, 2.0;
    auto summaries = predict_summary(model, queries);

    const int s_count = 20000;
    TauSamples draws = sample_tau(model, queries, s_count, 77);
    CHECK(draws.requested == s_count);
    CHECK(!draws.member_draws);
    CHECK(draws.values.rows() == 5);
    CHECK(draws.values.cols() == s_count);

    for (int i = 0; i < 5; ++i) {
        double mean = draws.values.row(i).mean();
        double var =
            (draws.values.row(i).array() - mean).square().sum() / (s_count - 1);
        double se_mean = std::sqrt(summaries[i].tau_var / s_count);
        CHECK(std::abs(mean - summaries[i].tau_mean) <= 5.0 * se_mean);
        double se_var = summaries[i].tau_var * std::sqrt(2.0 / (s_count - 1));
        CHECK(std::abs(var - summaries[i].tau_var) <= 5.0 * se_var);
    }

    TauSamples again = sample_tau(model, queries, s_count, 77);
    CHECK(exact_equal(again.values, draws.values));
    TauSamples other = sample_tau(model, queries, s_count, 78);
    CHECK(!exact_equal(other.values, draws.values));

    CHECK_THROWS_AS(sample_tau(model, queries, 1, 0), precondition_error);
}

TEST_CASE("degenerate inputs fall back to jitter") {
    LabeledSet train;
    train.covariates = Eigen::MatrixXd::Zero(6, 1);
    train.treatments = Eigen::VectorXi::Ones(6);
    train.outcomes = Eigen::VectorXd::Constant(6, 1.5);
    train.outcomes[3] = 1.6;

    GpHyperGrid grid;
    GpHyperparams h = unit_hyper(1);
    h.noise_var = 1e-12;
    // noise_var must be positive but can be far below jitter scale.
    grid.candidates.push_back(h);
    GpModel model = fit_gp(train, grid);
    Eigen::MatrixXd query = Eigen::MatrixXd::Zero(1, 1);
    auto s = predict_summary(model, query);
    CHECK(std::isfinite(s[0].mu1_mean));
}

TEST_CASE("fit and predict preconditions") {
    LabeledSet empty;
    empty.covariates.resize(0, 1);
    empty.treatments.resize(0);
    empty.outcomes.resize(0);
    CHECK_THROWS_AS(fit_gp(empty, GpHyperGrid::defaults(1)), precondition_error);

    LabeledSet train = small_train(10, 2);
    GpHyperGrid no_candidates;
    CHECK_THROWS_AS(fit_gp(train, no_candidates), precondition_error);

    GpHyperGrid bad;
    GpHyperparams h = unit_hyper(1);
    h.signal_var = -1.0;
    bad.candidates.push_back(h);
    CHECK_THROWS_AS(fit_gp(train, bad), precondition_error);

    GpModel unfitted;
    Eigen::MatrixXd query = Eigen::MatrixXd::Zero(1, 1);
    CHECK_THROWS_AS(predict_summary(unfitted, query), state_error);
    CHECK_THROWS_AS(sample_tau(unfitted, query, 10, 0), state_error);

    GpModel model = fit_gp(train, GpHyperGrid::defaults(1));
    Eigen::MatrixXd wrong_dim = Eigen::MatrixXd::Zero(1, 3);
    CHECK_THROWS_AS(predict_summary(model, wrong_dim), precondition_error);
}

TEST_CASE("checkpoint round trip preserves predictions bitwise") {
    LabeledSet train = small_train(25, 30);
    GpModel model = fit_gp(train, GpHyperGrid::defaults(1));

    auto dir = std::filesystem::temp_directory_path() / "cbald_gp_tests";
    std::filesystem::create_directories(dir);
    std::string path = (dir / "gp.ckpt").string();
    model.save(path);
    GpModel loaded = GpModel::load(path);

    Eigen::MatrixXd queries(40, 1);
    for (int i = 0; i < 40; ++i) queries(i, 0) = -3.0 + 6.0 * i / 39.0;
    auto a = predict_summary(model, queries);
    auto b = predict_summary(loaded, queries);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mu0_mean == b[i].mu0_mean);
        CHECK(a[i].mu1_mean == b[i].mu1_mean);
        CHECK(a[i].mu0_var == b[i].mu0_var);
        CHECK(a[i].mu1_var == b[i].mu1_var);
        CHECK(a[i].cov01 == b[i].cov01);
    }

    std::string bad_path = (dir / "bad.ckpt").string();
    std::ofstream bad(bad_path, std::ios::binary);
    bad << "not a checkpoint";
    bad.close();
    CHECK_THROWS_AS(GpModel::load(bad_path), parse_error);

    GpModel unfitted;
    CHECK_THROWS_AS(unfitted.save((dir / "x.ckpt").string()), state_error);
}
