#include "cbald/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <sstream>

#include "cbald/errors.hpp"

namespace cbald {

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    std::size_t end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string part;
    std::stringstream ss(s);
    while (std::getline(ss, part, sep)) parts.push_back(part);
    return parts;
}

double parse_double(const std::string& s, const std::string& what) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') throw parse_error("bad number '" + s + "' for " + what);
    return v;
}

long long parse_ll(const std::string& s, const std::string& what) {
    const char* begin = s.c_str();
    char* end = nullptr;
    long long v = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0') throw parse_error("bad integer '" + s + "' for " + what);
    return v;
}

int parse_int(const std::string& s, const std::string& what) {
    return static_cast<int>(parse_ll(s, what));
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    const char* begin = s.c_str();
    char* end = nullptr;
    unsigned long long v = std::strtoull(begin, &end, 10);
    if (end == begin || *end != '\0') throw parse_error("bad seed '" + s + "' for " + what);
    return static_cast<std::uint64_t>(v);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double pehe(const Eigen::VectorXd& tau_hat, const Eigen::VectorXd& tau_true) {
    if (tau_hat.size() == 0 || tau_hat.size() != tau_true.size()) {
        throw precondition_error("pehe: estimate and truth must have equal, positive length");
    }
    return std::sqrt((tau_hat - tau_true).squaredNorm() / static_cast<double>(tau_hat.size()));
}

AggregateCurve aggregate(const std::vector<std::vector<TrajectoryStep>>& runs) {
    if (runs.empty()) throw precondition_error("aggregate: no trajectories");
    std::size_t rows = runs.front().size();
    for (const auto& run : runs) {
        if (run.size() != rows) throw config_error("aggregate: trajectories differ in length");
    }
    int k = static_cast<int>(runs.size());
    AggregateCurve curve;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& first = runs.front()[r];
        AggregateRow row;
        row.step = first.step;
        row.n_train = first.n_train;
        row.n_seeds = k;
        double sum = 0.0;
        for (const auto& run : runs) {
            if (run[r].step != first.step || run[r].n_train != first.n_train) {
                throw config_error("aggregate: trajectories disagree on step structure");
            }
            sum += run[r].pehe;
        }
        row.pehe_mean = sum / k;
        if (k >= 2) {
            double ss = 0.0;
            for (const auto& run : runs) {
                double d = run[r].pehe - row.pehe_mean;
                ss += d * d;
            }
            row.pehe_se = std::sqrt(ss / (k - 1)) / std::sqrt(static_cast<double>(k));
            row.has_se = true;
        }
        curve.rows.push_back(row);
    }
    return curve;
}

AggregateCurve aggregate(const std::vector<Trajectory>& runs) {
    std::vector<std::vector<TrajectoryStep>> steps;
    steps.reserve(runs.size());
    for (const auto& run : runs) steps.push_back(run.steps);
    return aggregate(steps);
}

void write_trajectory(const Trajectory& trajectory, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open " + path + " for writing");
    out << "step,n_train,pehe,wall_ms,selected_indices\n";
    for (const auto& row : trajectory.steps) {
        out << row.step << "," << row.n_train << "," << format_double(row.pehe) << ","
            << row.wall_ms << ",";
        for (std::size_t i = 0; i < row.selected.size(); ++i) {
            if (i > 0) out << ";";
            out << row.selected[i];
        }
        out << "\n";
    }
    if (!out) throw parse_error("failed writing " + path);
}

std::vector<TrajectoryStep> read_trajectory_steps(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error(path + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "step,n_train,pehe,wall_ms,selected_indices") {
        throw parse_error(path + ": unexpected trajectory header");
    }
    std::vector<TrajectoryStep> steps;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != 5) {
            throw parse_error(path + ": wrong field count at line " + std::to_string(lineno));
        }
        TrajectoryStep step;
        step.step = parse_int(fields[0], "step");
        step.n_train = parse_int(fields[1], "n_train");
        step.pehe = parse_double(fields[2], "pehe");
        step.wall_ms = parse_ll(fields[3], "wall_ms");
        for (const auto& item : split(fields[4], ';')) {
            if (!item.empty()) step.selected.push_back(parse_int(item, "selected_indices"));
        }
        steps.push_back(std::move(step));
    }
    return steps;
}

void write_aggregate_csv(const AggregateCurve& curve, std::ostream& out) {
    out << "step,n_train,pehe_mean,pehe_se,n_seeds\n";
    for (const auto& row : curve.rows) {
        out << row.step << "," << row.n_train << "," << format_double(row.pehe_mean) << ",";
        if (row.has_se) out << format_double(row.pehe_se);
        out << "," << row.n_seeds << "\n";
    }
}

void ExperimentConfig::apply_defaults() {
    switch (data) {
        case DataSource::synthetic:
            if (warm_up_size == -1) warm_up_size = 10;
            if (acquisition_size == -1) acquisition_size = 10;
            if (acquisition_steps == -1) acquisition_steps = 30;
            if (n_pool == -1) n_pool = 10000;
            if (n_valid == -1) n_valid = 1000;
            if (n_test == -1) n_test = 1000;
            break;
        case DataSource::phi_surrogate:
            if (warm_up_size == -1) warm_up_size = 250;
            if (acquisition_size == -1) acquisition_size = 50;
            if (acquisition_steps == -1) acquisition_steps = 55;
            if (n_pool == -1) n_pool = 35000;
            if (n_valid == -1) n_valid = 15000;
            if (n_test == -1) n_test = 10000;
            break;
        case DataSource::ihdp:
            if (warm_up_size == -1) warm_up_size = 100;
            if (acquisition_size == -1) acquisition_size = 10;
            if (acquisition_steps == -1) acquisition_steps = 38;
            // Split sizes are fixed by the 747-row table.
            if (n_pool == -1) n_pool = 471;
            if (n_valid == -1) n_valid = 201;
            if (n_test == -1) n_test = 75;
            break;
    }
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw config_error("seed list is empty");
    std::vector<std::uint64_t> sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw config_error("seed list contains duplicates");
    }
    if (data == DataSource::ihdp && ihdp_path.empty()) {
        throw config_error("data = ihdp requires ihdp_path");
    }
    if (warm_up_size < 1 || acquisition_size < 1 || acquisition_steps < 0) {
        throw config_error("loop sizes must be positive");
    }
    if (n_pool < 1 || n_valid < 1 || n_test < 1) throw config_error("split sizes must be positive");
    if (!(temperature >= 0.0)) throw config_error("temperature must be non-negative");
    if (!(noise_sd >= 0.0)) throw config_error("noise_sd must be non-negative");
    if (n_classes < 1) throw config_error("n_classes must be positive");
    if (!(clip_bound > 0.0)) throw config_error("clip_bound must be positive");
    if (output_dir.empty()) throw config_error("output_dir is empty");
    if (model == ModelKind::ensemble) ensemble.validate();
}

ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::string where = origin + ":" + std::to_string(lineno);
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw config_error(where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw config_error(where + ": empty key or value");

        if (key == "data") {
            cfg.data = data_source_from_string(value);
        } else if (key == "ihdp_path") {
            cfg.ihdp_path = value;
        } else if (key == "model") {
            cfg.model = model_kind_from_string(value);
        } else if (key == "acquisition") {
            cfg.acquisition = acquisition_from_string(value);
        } else if (key == "warm_up_size") {
            cfg.warm_up_size = parse_int(value, key);
        } else if (key == "acquisition_size") {
            cfg.acquisition_size = parse_int(value, key);
        } else if (key == "acquisition_steps") {
            cfg.acquisition_steps = parse_int(value, key);
        } else if (key == "temperature") {
            cfg.temperature = parse_double(value, key);
        } else if (key == "n_pool") {
            cfg.n_pool = parse_int(value, key);
        } else if (key == "n_valid") {
            cfg.n_valid = parse_int(value, key);
        } else if (key == "n_test") {
            cfg.n_test = parse_int(value, key);
        } else if (key == "noise_sd") {
            cfg.noise_sd = parse_double(value, key);
        } else if (key == "n_classes") {
            cfg.n_classes = parse_int(value, key);
        } else if (key == "clip_bound") {
            cfg.clip_bound = parse_double(value, key);
        } else if (key == "seeds") {
            cfg.seeds.clear();
            for (const auto& item : split(value, ',')) {
                std::string entry = trim(item);
                if (entry.empty()) throw config_error(where + ": empty seed entry");
                cfg.seeds.push_back(parse_u64(entry, key));
            }
        } else if (key == "output_dir") {
            cfg.output_dir = value;
        } else if (key == "ensemble_members") {
            cfg.ensemble.members = parse_int(value, key);
        } else if (key == "ensemble_hidden") {
            cfg.ensemble.hidden = parse_int(value, key);
        } else if (key == "ensemble_trunk_layers") {
            cfg.ensemble.trunk_layers = parse_int(value, key);
        } else if (key == "ensemble_epochs") {
            cfg.ensemble.epochs = parse_int(value, key);
        } else if (key == "ensemble_batch") {
            cfg.ensemble.batch_size = parse_int(value, key);
        } else if (key == "ensemble_lr") {
            cfg.ensemble.learning_rate = parse_double(value, key);
        } else if (key == "ensemble_seed") {
            cfg.ensemble.seed = parse_u64(value, key);
        } else {
            throw config_error(where + ": unknown key '" + key + "'");
        }
    }
    cfg.apply_defaults();
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open config " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config_text(buffer.str(), path);
}

std::string trajectory_filename(const ExperimentConfig& cfg, std::uint64_t seed) {
    return to_string(cfg.acquisition) + "_" + to_string(cfg.model) + "_s" + std::to_string(seed) +
           ".csv";
}

DatasetSplits materialize_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    switch (cfg.data) {
        case DataSource::synthetic: {
            SyntheticConfig sc;
            sc.n_pool = cfg.n_pool;
            sc.n_valid = cfg.n_valid;
            sc.n_test = cfg.n_test;
            sc.noise_sd = cfg.noise_sd;
            sc.seed = seed;
            return generate_synthetic(sc);
        }
        case DataSource::phi_surrogate: {
            PhiSurrogateConfig pc;
            pc.n_pool = cfg.n_pool;
            pc.n_valid = cfg.n_valid;
            pc.n_test = cfg.n_test;
            pc.n_classes = cfg.n_classes;
            pc.clip_bound = cfg.clip_bound;
            pc.noise_sd = cfg.noise_sd;
            pc.seed = seed;
            return generate_phi_surrogate(pc);
        }
        case DataSource::ihdp:
            return load_ihdp(cfg.ihdp_path, seed);
    }
    throw precondition_error("unknown data source");
}

namespace {

LoopConfig loop_config_for(const ExperimentConfig& cfg, std::uint64_t seed) {
    LoopConfig lc;
    lc.warm_up_size = cfg.warm_up_size;
    lc.acquisition_size = cfg.acquisition_size;
    lc.acquisition_steps = cfg.acquisition_steps;
    lc.temperature = cfg.temperature;
    lc.model = cfg.model;
    lc.acquisition = cfg.acquisition;
    lc.ensemble = cfg.ensemble;
    lc.seed = seed;
    return lc;
}

std::string run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    DatasetSplits splits = materialize_data(cfg, seed);
    Trajectory trajectory =
        run_experiment(splits.pool, splits.valid, splits.test, loop_config_for(cfg, seed));
    std::filesystem::path out =
        std::filesystem::path(cfg.output_dir) / trajectory_filename(cfg, seed);
    write_trajectory(trajectory, out.string());
    return out.string();
}

}  // namespace

std::vector<std::string> run_all(const ExperimentConfig& input, int jobs) {
    ExperimentConfig cfg = input;
    cfg.apply_defaults();
    cfg.validate();
    if (jobs < 1) throw config_error("jobs must be at least 1");

    std::filesystem::create_directories(cfg.output_dir);

    std::vector<std::string> paths(cfg.seeds.size());
    if (jobs == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            paths[i] = run_one_seed(cfg, cfg.seeds[i]);
        }
    } else {
        std::size_t next = 0;
        while (next < cfg.seeds.size()) {
            std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(jobs),
                                                      cfg.seeds.size() - next);
            std::vector<std::future<std::string>> futures;
            futures.reserve(batch);
            for (std::size_t i = 0; i < batch; ++i) {
                std::uint64_t seed = cfg.seeds[next + i];
                futures.push_back(std::async(std::launch::async,
                                             [&cfg, seed] { return run_one_seed(cfg, seed); }));
            }
            for (std::size_t i = 0; i < batch; ++i) paths[next + i] = futures[i].get();
            next += batch;
        }
    }

    std::filesystem::path meta_path =
        std::filesystem::path(cfg.output_dir) /
        (to_string(cfg.acquisition) + "_" + to_string(cfg.model) + "_run.meta");
    std::ofstream meta(meta_path);
    if (!meta) throw parse_error("cannot open " + meta_path.string() + " for writing");
    meta << "acquisition = " << to_string(cfg.acquisition) << "\n";
    meta << "model = " << to_string(cfg.model) << "\n";
    meta << "data = " << to_string(cfg.data) << "\n";
    meta << "warm_up_size = " << cfg.warm_up_size << "\n";
    meta << "acquisition_size = " << cfg.acquisition_size << "\n";
    meta << "acquisition_steps = " << cfg.acquisition_steps << "\n";
    meta << "temperature = " << format_double(cfg.temperature) << "\n";
    meta << "n_pool = " << cfg.n_pool << "\n";
    meta << "n_valid = " << cfg.n_valid << "\n";
    meta << "n_test = " << cfg.n_test << "\n";
    meta << "noise_sd = " << format_double(cfg.noise_sd) << "\n";
    meta << "seeds = ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        if (i > 0) meta << ",";
        meta << cfg.seeds[i];
    }
    meta << "\n";
    meta << "files = ";
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (i > 0) meta << ",";
        meta << std::filesystem::path(paths[i]).filename().string();
    }
    meta << "\n";
    if (!meta) throw parse_error("failed writing " + meta_path.string());

    return paths;
}

AggregateCurve aggregate_files(const std::vector<std::string>& paths) {
    if (paths.empty()) throw precondition_error("aggregate_files: no files given");
    std::vector<std::vector<TrajectoryStep>> runs;
    runs.reserve(paths.size());
    for (const auto& path : paths) runs.push_back(read_trajectory_steps(path));
    return aggregate(runs);
}

void write_plotdata(const std::string& run_dir, std::ostream& out) {
    std::vector<std::filesystem::path> metas;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".meta") {
            metas.push_back(entry.path());
        }
    }
    if (metas.empty()) throw config_error("no run metadata files in " + run_dir);
    std::sort(metas.begin(), metas.end());

    out << "acquisition,model,step,n_train,pehe_mean,pehe_se,n_seeds\n";
    for (const auto& meta_path : metas) {
        std::ifstream in(meta_path);
        if (!in) throw parse_error("cannot open " + meta_path.string());
        std::map<std::string, std::string> kv;
        std::string line;
        while (std::getline(in, line)) {
            std::size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        auto need = [&](const std::string& key) {
            auto it = kv.find(key);
            if (it == kv.end()) {
                throw parse_error(meta_path.string() + ": missing key '" + key + "'");
            }
            return it->second;
        };
        std::string acquisition = need("acquisition");
        std::string model = need("model");
        std::vector<std::string> files;
        for (const auto& item : split(need("files"), ',')) {
            std::string name = trim(item);
            if (!name.empty()) {
                files.push_back((std::filesystem::path(run_dir) / name).string());
            }
        }
        AggregateCurve curve = aggregate_files(files);
        for (const auto& row : curve.rows) {
            out << acquisition << "," << model << "," << row.step << "," << row.n_train << ","
                << format_double(row.pehe_mean) << ",";
            if (row.has_se) out << format_double(row.pehe_se);
            out << "," << row.n_seeds << "\n";
        }
    }
}

std::string resolve_output_dir(const std::string& config_dir, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    const char* env = std::getenv("CAUSAL_BALD_OUT");
    if (env != nullptr && env[0] != '\0') return env;
    return config_dir;
}

}  // namespace cbald
