#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cbald/errors.hpp"
#include "cbald/report.hpp"

namespace {

cbald::ExperimentConfig load_config(const std::string& path, bool has_seed,
                                    std::uint64_t seed_override, const std::string& out_override) {
    cbald::ExperimentConfig cfg = cbald::parse_experiment_config(path);
    if (has_seed) cfg.seeds = {seed_override};
    cfg.output_dir = cbald::resolve_output_dir(cfg.output_dir, out_override);
    cfg.validate();
    return cfg;
}

int run_generate(const cbald::ExperimentConfig& cfg) {
    for (std::uint64_t seed : cfg.seeds) {
        cbald::DatasetSplits splits = cbald::materialize_data(cfg, seed);
        std::filesystem::path dir =
            std::filesystem::path(cfg.output_dir) / ("seed" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        cbald::write_dataset_csv(splits.pool, (dir / "pool.csv").string());
        cbald::write_dataset_csv(splits.valid, (dir / "valid.csv").string());
        cbald::write_dataset_csv(splits.test, (dir / "test.csv").string());
        std::cout << dir.string() << "\n";
    }
    return 0;
}

int run_run(const cbald::ExperimentConfig& cfg, int jobs) {
    for (const auto& path : cbald::run_all(cfg, jobs)) {
        std::cout << path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active label acquisition for treatment-effect estimation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    int jobs = 1;

    auto* generate = app.add_subcommand("generate", "Write the configured data splits to CSV");
    generate->add_option("--config", config_path, "experiment config file")->required();
    auto* gen_seed = generate->add_option("--seed", seed_override, "run only this seed");
    generate->add_option("--out", out_override, "output directory override");

    auto* run = app.add_subcommand("run", "Run the acquisition loop for every seed");
    run->add_option("--config", config_path, "experiment config file")->required();
    auto* run_seed = run->add_option("--seed", seed_override, "run only this seed");
    run->add_option("--jobs", jobs, "seeds to run concurrently")->check(CLI::PositiveNumber);
    run->add_option("--out", out_override, "output directory override");

    std::vector<std::string> trajectory_files;
    std::string aggregate_out;
    auto* agg = app.add_subcommand("aggregate", "Average trajectory files into one curve");
    agg->add_option("files", trajectory_files, "trajectory CSV files")->required();
    agg->add_option("--out", aggregate_out, "write the curve here instead of stdout");

    std::string plot_dir;
    std::string plot_out;
    auto* plot = app.add_subcommand("plotdata", "Emit step-vs-PEHE series from a run directory");
    plot->add_option("dir", plot_dir, "directory holding run output")->required();
    plot->add_option("--out", plot_out, "write the series here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(generate)) {
            return run_generate(
                load_config(config_path, !gen_seed->empty(), seed_override, out_override));
        }
        if (app.got_subcommand(run)) {
            return run_run(load_config(config_path, !run_seed->empty(), seed_override, out_override),
                           jobs);
        }
        if (app.got_subcommand(agg)) {
            cbald::AggregateCurve curve = cbald::aggregate_files(trajectory_files);
            if (aggregate_out.empty()) {
                cbald::write_aggregate_csv(curve, std::cout);
            } else {
                std::ofstream out(aggregate_out);
                if (!out) throw cbald::parse_error("cannot open " + aggregate_out);
                cbald::write_aggregate_csv(curve, out);
            }
            return 0;
        }
        if (app.got_subcommand(plot)) {
            if (plot_out.empty()) {
                cbald::write_plotdata(plot_dir, std::cout);
            } else {
                std::ofstream out(plot_out);
                if (!out) throw cbald::parse_error("cannot open " + plot_out);
                cbald::write_plotdata(plot_dir, out);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
