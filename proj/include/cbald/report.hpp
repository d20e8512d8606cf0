#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "cbald/loop.hpp"

namespace cbald {

// Root mean squared error of the effect estimate: sqrt(mean((tau_hat - tau)^2)).
double pehe(const Eigen::VectorXd& tau_hat, const Eigen::VectorXd& tau_true);

struct AggregateRow {
    int step = 0;
    int n_train = 0;
    double pehe_mean = 0.0;
    double pehe_se = 0.0;   // meaningful only when has_se
    bool has_se = false;    // false for a single seed
    int n_seeds = 0;
};

struct AggregateCurve {
    std::vector<AggregateRow> rows;
};

// Mean and standard error (sample sd / sqrt(K)) of PEHE per step across
// seeds. All trajectories must share the same step/n_train structure.
AggregateCurve aggregate(const std::vector<std::vector<TrajectoryStep>>& runs);
AggregateCurve aggregate(const std::vector<Trajectory>& runs);

// CSV with header step,n_train,pehe,wall_ms,selected_indices; indices are
// semicolon-joined. Doubles are written with 17 significant digits so the
// round trip is exact.
void write_trajectory(const Trajectory& trajectory, const std::string& path);
std::vector<TrajectoryStep> read_trajectory_steps(const std::string& path);

void write_aggregate_csv(const AggregateCurve& curve, std::ostream& out);

struct ExperimentConfig {
    DataSource data = DataSource::synthetic;
    std::string ihdp_path;
    ModelKind model = ModelKind::gp;
    AcquisitionKind acquisition = AcquisitionKind::Random;

    // Loop shape; -1 means use the per-dataset default.
    int warm_up_size = -1;
    int acquisition_size = -1;
    int acquisition_steps = -1;
    double temperature = 1.0;

    int n_pool = -1;
    int n_valid = -1;
    int n_test = -1;
    double noise_sd = 1.0;
    int n_classes = 10;
    double clip_bound = 1.4;

    EnsembleSpec ensemble;

    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = ".";

    // Fills the -1 fields with the dataset's benchmark defaults.
    void apply_defaults();
    void validate() const;
};

// Flat key = value format, # comments, unknown keys rejected.
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin);

std::string trajectory_filename(const ExperimentConfig& cfg, std::uint64_t seed);

// Builds the configured splits for one seed.
DatasetSplits materialize_data(const ExperimentConfig& cfg, std::uint64_t seed);

// Runs every configured seed (jobs > 1 runs seeds concurrently), writes one
// trajectory file per seed plus a run metadata file, and returns the file
// paths in seed order.
std::vector<std::string> run_all(const ExperimentConfig& cfg, int jobs);

AggregateCurve aggregate_files(const std::vector<std::string>& paths);

// Precedence: --out flag, then CAUSAL_BALD_OUT, then the config value.
std::string resolve_output_dir(const std::string& config_dir, const std::string& cli_out);

// Scans a directory of run metadata files and emits one aggregated
// step-vs-PEHE block per (acquisition, model) group.
void write_plotdata(const std::string& run_dir, std::ostream& out);

}  // namespace cbald
