#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbald/errors.hpp"
#include "cbald/report.hpp"
#include "util.hpp"

using namespace cbald;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

TrajectoryStep make_step(int step, int n_train, double pehe_value,
                         std::vector<int> selected) {
    TrajectoryStep row;
    row.step = step;
    row.n_train = n_train;
    row.pehe = pehe_value;
    row.selected = std::move(selected);
    return row;
}

ExperimentConfig tiny_run_config(const fs::path& out_dir) {
    ExperimentConfig cfg;
    cfg.data = DataSource::synthetic;
    cfg.model = ModelKind::gp;
    cfg.acquisition = AcquisitionKind::Random;
    cfg.warm_up_size = 5;
    cfg.acquisition_size = 5;
    cfg.acquisition_steps = 2;
    cfg.n_pool = 200;
    cfg.n_valid = 30;
    cfg.n_test = 40;
    cfg.seeds = {0, 1};
    cfg.output_dir = out_dir.string();
    return cfg;
}

}  // namespace

TEST_CASE("pehe is the root mean squared effect error") {
    Eigen::VectorXd tau_hat(2), tau_true(2);
    tau_hat << 1.0, 2.0;
    tau_true << 0.0, 0.0;
    CHECK(pehe(tau_hat, tau_true) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));

    Eigen::VectorXd same = tau_true;
    CHECK(pehe(same, tau_true) == 0.0);

    Eigen::VectorXd short_vec(1);
    short_vec << 1.0;
    CHECK_THROWS_AS(pehe(short_vec, tau_true), precondition_error);
    Eigen::VectorXd empty(0);
    CHECK_THROWS_AS(pehe(empty, empty), precondition_error);
}

TEST_CASE("aggregate computes mean and standard error per step") {
    std::vector<std::vector<TrajectoryStep>> runs;
    runs.push_back({make_step(0, 10, 1.0, {1}), make_step(1, 20, 4.0, {2})});
    runs.push_back({make_step(0, 10, 3.0, {3}), make_step(1, 20, 8.0, {4})});

    AggregateCurve curve = aggregate(runs);
    REQUIRE(curve.rows.size() == 2);
    CHECK(curve.rows[0].step == 0);
    CHECK(curve.rows[0].n_train == 10);
    CHECK(curve.rows[0].pehe_mean == doctest::Approx(2.0));
    // Sample sd sqrt(2) over sqrt(2) seeds.
    CHECK(curve.rows[0].pehe_se == doctest::Approx(1.0));
    CHECK(curve.rows[0].has_se);
    CHECK(curve.rows[0].n_seeds == 2);
    CHECK(curve.rows[1].pehe_mean == doctest::Approx(6.0));
    CHECK(curve.rows[1].pehe_se == doctest::Approx(2.0));

    std::vector<std::vector<TrajectoryStep>> solo{runs[0]};
    AggregateCurve single = aggregate(solo);
    CHECK(!single.rows[0].has_se);
    CHECK(single.rows[0].n_seeds == 1);

    std::vector<std::vector<TrajectoryStep>> ragged = runs;
    ragged[1].pop_back();
    CHECK_THROWS_AS(aggregate(ragged), config_error);

    std::vector<std::vector<TrajectoryStep>> shifted = runs;
    shifted[1][1].n_train = 25;
    CHECK_THROWS_AS(aggregate(shifted), config_error);

    CHECK_THROWS_AS(aggregate(std::vector<std::vector<TrajectoryStep>>{}),
                    precondition_error);
}

TEST_CASE("trajectory files round trip exactly") {
    fs::path dir = fresh_dir("cbald_report_roundtrip");
    Trajectory traj;
    traj.steps.push_back(make_step(0, 10, 0.1 + 0.2, {5, 3, 9}));
    traj.steps.push_back(make_step(1, 20, 1.0 / 3.0, {12}));
    traj.steps.push_back(make_step(2, 30, 6.02214076e23, {0, 1}));

    std::string path = (dir / "traj.csv").string();
    write_trajectory(traj, path);
    std::vector<TrajectoryStep> back = read_trajectory_steps(path);
    CHECK(back == traj.steps);

    std::string text = slurp(path);
    CHECK(text.rfind("step,n_train,pehe,wall_ms,selected_indices\n", 0) == 0);
    CHECK(text.find("5;3;9") != std::string::npos);

    // Same content written twice is byte-identical.
    std::string path2 = (dir / "traj2.csv").string();
    write_trajectory(traj, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("malformed trajectory files are rejected") {
    fs::path dir = fresh_dir("cbald_report_malformed");

    auto write_text = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary);
        out << text;
        return (dir / name).string();
    };

    CHECK_THROWS_AS(read_trajectory_steps((dir / "missing.csv").string()), parse_error);
    CHECK_THROWS_AS(
        read_trajectory_steps(write_text("header.csv", "step,pehe\n0,1\n")),
        parse_error);
    CHECK_THROWS_AS(
        read_trajectory_steps(write_text(
            "short.csv", "step,n_train,pehe,wall_ms,selected_indices\n0,10,1.0\n")),
        parse_error);
    CHECK_THROWS_AS(
        read_trajectory_steps(write_text(
            "bad.csv", "step,n_train,pehe,wall_ms,selected_indices\n0,10,abc,0,1\n")),
        parse_error);
}

TEST_CASE("aggregate CSV leaves the standard error blank for one seed") {
    AggregateCurve curve;
    AggregateRow row;
    row.step = 0;
    row.n_train = 10;
    row.pehe_mean = 1.5;
    row.pehe_se = 0.25;
    row.has_se = true;
    row.n_seeds = 3;
    curve.rows.push_back(row);
    row.step = 1;
    row.n_train = 20;
    row.pehe_mean = 1.25;
    row.has_se = false;
    row.n_seeds = 1;
    curve.rows.push_back(row);

    std::ostringstream out;
    write_aggregate_csv(curve, out);
    std::string text = out.str();
    CHECK(text.rfind("step,n_train,pehe_mean,pehe_se,n_seeds\n", 0) == 0);
    CHECK(text.find("0,10,1.5,0.25,3\n") != std::string::npos);
    CHECK(text.find("1,20,1.25,,1\n") != std::string::npos);
}

TEST_CASE("experiment config parsing and defaults") {
    std::string text =
        "# benchmark shape\n"
        "data = synthetic\n"
        "model = gp\n"
        "acquisition = mu_rho_bald  # trailing comment\n"
        "seeds = 3, 4, 5\n"
        "temperature = 0.5\n";
    ExperimentConfig cfg = parse_experiment_config_text(text, "inline");
    CHECK(cfg.data == DataSource::synthetic);
    CHECK(cfg.acquisition == AcquisitionKind::MuRhoBald);
    CHECK(cfg.temperature == 0.5);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4, 5});
    // Benchmark defaults for the synthetic table.
    CHECK(cfg.warm_up_size == 10);
    CHECK(cfg.acquisition_size == 10);
    CHECK(cfg.acquisition_steps == 30);
    CHECK(cfg.n_pool == 10000);
    CHECK(cfg.n_valid == 1000);
    CHECK(cfg.n_test == 1000);

    ExperimentConfig phi = parse_experiment_config_text("data = phi_surrogate\n", "inline");
    CHECK(phi.warm_up_size == 250);
    CHECK(phi.acquisition_size == 50);
    CHECK(phi.acquisition_steps == 55);
    CHECK(phi.n_pool == 35000);

    ExperimentConfig ihdp = parse_experiment_config_text(
        "data = ihdp\nihdp_path = /tmp/x.csv\n", "inline");
    CHECK(ihdp.warm_up_size == 100);
    CHECK(ihdp.acquisition_size == 10);
    CHECK(ihdp.acquisition_steps == 38);

    ExperimentConfig ens = parse_experiment_config_text(
        "data = synthetic\nmodel = ensemble\nensemble_members = 4\n"
        "ensemble_hidden = 32\nensemble_epochs = 50\n",
        "inline");
    CHECK(ens.model == ModelKind::ensemble);
    CHECK(ens.ensemble.members == 4);
    CHECK(ens.ensemble.hidden == 32);
    CHECK(ens.ensemble.epochs == 50);
}

TEST_CASE("config rejections name the offending line") {
    CHECK_THROWS_WITH_AS(parse_experiment_config_text("data = synthetic\nbogus = 1\n", "cfg"),
                         doctest::Contains("cfg:2"), config_error);
    CHECK_THROWS_AS(parse_experiment_config_text("data = mars\n", "cfg"), config_error);
    CHECK_THROWS_AS(parse_experiment_config_text("data = synthetic\nseeds = \n", "cfg"),
                    config_error);
    CHECK_THROWS_AS(
        parse_experiment_config_text("data = synthetic\nseeds = 1, 1\n", "cfg"),
        config_error);
    CHECK_THROWS_AS(parse_experiment_config_text("data = ihdp\n", "cfg"), config_error);
    CHECK_THROWS_AS(
        parse_experiment_config_text("data = synthetic\nn_pool = -5\n", "cfg"),
        config_error);
    CHECK_THROWS_AS(
        parse_experiment_config_text("data = synthetic\ntemperature = -1\n", "cfg"),
        config_error);
    CHECK_THROWS_AS(parse_experiment_config("/nonexistent/path.cfg"), parse_error);
}

TEST_CASE("output directory precedence") {
    unsetenv("CAUSAL_BALD_OUT");
    CHECK(resolve_output_dir("from_config", "") == "from_config");
    CHECK(resolve_output_dir("from_config", "from_cli") == "from_cli");
    setenv("CAUSAL_BALD_OUT", "from_env", 1);
    CHECK(resolve_output_dir("from_config", "") == "from_env");
    CHECK(resolve_output_dir("from_config", "from_cli") == "from_cli");
    unsetenv("CAUSAL_BALD_OUT");
}

TEST_CASE("trajectory filenames encode the run identity") {
    ExperimentConfig cfg;
    cfg.acquisition = AcquisitionKind::TauBald;
    cfg.model = ModelKind::gp;
    CHECK(trajectory_filename(cfg, 7) == "tau_bald_gp_s7.csv");
}

TEST_CASE("materialized splits follow the seed protocol") {
    ExperimentConfig cfg;
    cfg.data = DataSource::synthetic;
    cfg.apply_defaults();
    cfg.n_pool = 50;
    cfg.n_valid = 20;
    cfg.n_test = 30;
    DatasetSplits splits = materialize_data(cfg, 9);
    CHECK(splits.pool.n() == 50);
    CHECK(splits.valid.n() == 20);
    CHECK(splits.test.n() == 30);
    CHECK(splits.test.has_surfaces());

    DatasetSplits again = materialize_data(cfg, 9);
    CHECK(exact_equal(splits.pool.outcomes, again.pool.outcomes));

    ExperimentConfig ihdp;
    ihdp.data = DataSource::ihdp;
    ihdp.ihdp_path = std::string(CBALD_FIXTURE_DIR) + "/ihdp_fixture.csv";
    ihdp.apply_defaults();
    DatasetSplits realized = materialize_data(ihdp, 0);
    CHECK(realized.pool.n() == 471);
    CHECK(realized.valid.n() == 201);
    CHECK(realized.test.n() == 75);
}

TEST_CASE("run_all writes deterministic trajectory files") {
    fs::path dir = fresh_dir("cbald_run_all");
    ExperimentConfig cfg = tiny_run_config(dir);

    std::vector<std::string> paths = run_all(cfg, 1);
    REQUIRE(paths.size() == 2);
    CHECK(fs::path(paths[0]).filename() == "random_gp_s0.csv");
    CHECK(fs::path(paths[1]).filename() == "random_gp_s1.csv");
    for (const auto& p : paths) CHECK(fs::exists(p));
    CHECK(fs::exists(dir / "random_gp_run.meta"));

    std::string bytes0 = slurp(paths[0]);
    std::string bytes1 = slurp(paths[1]);
    CHECK(bytes0 != bytes1);

    // Rerun, sequential and concurrent, reproduces the files byte for byte.
    std::vector<std::string> again = run_all(cfg, 1);
    CHECK(again == paths);
    CHECK(slurp(paths[0]) == bytes0);
    CHECK(slurp(paths[1]) == bytes1);

    std::vector<std::string> parallel = run_all(cfg, 2);
    CHECK(parallel == paths);
    CHECK(slurp(paths[0]) == bytes0);
    CHECK(slurp(paths[1]) == bytes1);

    AggregateCurve curve = aggregate_files(paths);
    REQUIRE(curve.rows.size() == 3);
    CHECK(curve.rows[0].n_train == 5);
    CHECK(curve.rows[2].n_train == 15);
    CHECK(curve.rows[0].has_se);
    CHECK(curve.rows[0].n_seeds == 2);

    std::ostringstream plot;
    write_plotdata(dir.string(), plot);
    std::string text = plot.str();
    CHECK(text.rfind("acquisition,model,step,n_train,pehe_mean,pehe_se,n_seeds\n", 0) == 0);
    CHECK(text.find("random,gp,0,5,") != std::string::npos);
    CHECK(text.find("random,gp,2,15,") != std::string::npos);
}

TEST_CASE("plotdata requires at least one run in the directory") {
    fs::path dir = fresh_dir("cbald_plotdata_empty");
    std::ostringstream out;
    CHECK_THROWS_AS(write_plotdata(dir.string(), out), config_error);
}
