#include "cbald/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cbald/errors.hpp"
#include "cbald/rng.hpp"

namespace cbald {

namespace {

double sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    double e = std::exp(a);
    return e / (1.0 + e);
}

double treatment_propensity(double score) { return sigmoid(2.0 * score + 0.5); }

void check_count(int value, const char* name) {
    if (value <= 0) {
        throw config_error(std::string(name) + " must be positive, got " + std::to_string(value));
    }
}

}  // namespace

std::string to_string(DataSource source) {
    switch (source) {
        case DataSource::synthetic: return "synthetic";
        case DataSource::phi_surrogate: return "phi_surrogate";
        case DataSource::ihdp: return "ihdp";
    }
    throw precondition_error("unknown data source");
}

DataSource data_source_from_string(const std::string& name) {
    if (name == "synthetic") return DataSource::synthetic;
    if (name == "phi_surrogate") return DataSource::phi_surrogate;
    if (name == "ihdp") return DataSource::ihdp;
    throw config_error("unknown data source '" + name + "'");
}

Eigen::VectorXd ObservationalDataset::true_tau() const {
    if (!has_surfaces()) throw state_error("dataset has no true outcome surfaces");
    return mu1_true - mu0_true;
}

void ObservationalDataset::validate() const {
    Eigen::Index rows = covariates.rows();
    if (treatments.size() != rows || outcomes.size() != rows) {
        throw precondition_error("dataset arrays disagree on unit count");
    }
    bool mu_empty = mu0_true.size() == 0 && mu1_true.size() == 0;
    bool mu_full = mu0_true.size() == rows && mu1_true.size() == rows;
    if (!mu_empty && !mu_full) {
        throw precondition_error("outcome surfaces must cover all units or be absent");
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (treatments[i] != 0 && treatments[i] != 1) {
            throw precondition_error("treatment must be 0 or 1 at row " + std::to_string(i));
        }
    }
    if (!covariates.allFinite() || !outcomes.allFinite()) {
        throw precondition_error("dataset contains non-finite values");
    }
    if (mu_full && (!mu0_true.allFinite() || !mu1_true.allFinite())) {
        throw precondition_error("outcome surfaces contain non-finite values");
    }
}

LabeledSet labeled_view(const ObservationalDataset& data) {
    return LabeledSet{data.covariates, data.treatments, data.outcomes};
}

void SyntheticConfig::validate() const {
    check_count(n_pool, "n_pool");
    check_count(n_valid, "n_valid");
    check_count(n_test, "n_test");
    if (!(noise_sd >= 0.0)) throw config_error("noise_sd must be non-negative");
}

void PhiSurrogateConfig::validate() const {
    check_count(n_pool, "n_pool");
    check_count(n_valid, "n_valid");
    check_count(n_test, "n_test");
    check_count(n_classes, "n_classes");
    if (!(clip_bound > 0.0)) throw config_error("clip_bound must be positive");
    if (!(noise_sd >= 0.0)) throw config_error("noise_sd must be non-negative");
}

double noiseless_surface(double x, int t) {
    if (t != 0 && t != 1) throw precondition_error("treatment must be 0 or 1");
    double sign = 2.0 * t - 1.0;
    return sign * x + sign - 2.0 * std::sin(2.0 * sign * x) + 2.0 * (1.0 + 0.5 * x);
}

double true_cate(double x) { return 2.0 * x + 2.0 - 4.0 * std::sin(2.0 * x); }

namespace {

ObservationalDataset draw_synthetic(int n, double noise_sd, std::uint64_t seed) {
    Rng rng(seed);
    ObservationalDataset data;
    data.source = DataSource::synthetic;
    data.covariates.resize(n, 1);
    data.treatments.resize(n);
    data.outcomes.resize(n);
    data.mu0_true.resize(n);
    data.mu1_true.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        int t = rng.bernoulli(treatment_propensity(x)) ? 1 : 0;
        data.covariates(i, 0) = x;
        data.treatments[i] = t;
        data.mu0_true[i] = noiseless_surface(x, 0);
        data.mu1_true[i] = noiseless_surface(x, 1);
        double mu = t == 1 ? data.mu1_true[i] : data.mu0_true[i];
        data.outcomes[i] = mu + noise_sd * rng.normal();
    }
    return data;
}

}  // namespace

DatasetSplits generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    DatasetSplits splits;
    splits.pool = draw_synthetic(cfg.n_pool, cfg.noise_sd, cfg.seed);
    splits.valid = draw_synthetic(cfg.n_valid, cfg.noise_sd, cfg.seed + 1);
    splits.test = draw_synthetic(cfg.n_test, cfg.noise_sd, cfg.seed + 2);
    return splits;
}

double phi_value(int c, double z, const PhiSurrogateConfig& cfg) {
    if (c < 0 || c >= cfg.n_classes) throw precondition_error("class index out of range");
    double clipped = std::clamp(z, -cfg.clip_bound, cfg.clip_bound);
    double width = 4.0 / cfg.n_classes;
    double lo = -2.0 + width * c;
    double hi = lo + width;
    return (clipped + cfg.clip_bound) * (hi - lo) / (2.0 * cfg.clip_bound) + lo;
}

namespace {

ObservationalDataset draw_phi_surrogate(int n, const PhiSurrogateConfig& cfg,
                                        std::uint64_t seed) {
    Rng rng(seed);
    int d = cfg.n_classes + 1;
    ObservationalDataset data;
    data.source = DataSource::phi_surrogate;
    data.covariates = Eigen::MatrixXd::Zero(n, d);
    data.treatments.resize(n);
    data.outcomes.resize(n);
    data.mu0_true.resize(n);
    data.mu1_true.resize(n);
    for (int i = 0; i < n; ++i) {
        int c = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(cfg.n_classes)));
        double z = std::clamp(rng.normal(), -cfg.clip_bound, cfg.clip_bound);
        double phi = phi_value(c, z, cfg);
        data.covariates(i, c) = 1.0;
        data.covariates(i, d - 1) = z;
        int t = rng.bernoulli(treatment_propensity(phi)) ? 1 : 0;
        data.treatments[i] = t;
        data.mu0_true[i] = noiseless_surface(phi, 0);
        data.mu1_true[i] = noiseless_surface(phi, 1);
        double mu = t == 1 ? data.mu1_true[i] : data.mu0_true[i];
        data.outcomes[i] = mu + cfg.noise_sd * rng.normal();
    }
    return data;
}

}  // namespace

DatasetSplits generate_phi_surrogate(const PhiSurrogateConfig& cfg) {
    cfg.validate();
    DatasetSplits splits;
    splits.pool = draw_phi_surrogate(cfg.n_pool, cfg, cfg.seed);
    splits.valid = draw_phi_surrogate(cfg.n_valid, cfg, cfg.seed + 1);
    splits.test = draw_phi_surrogate(cfg.n_test, cfg, cfg.seed + 2);
    return splits;
}

namespace {

constexpr int kIhdpUnits = 747;
constexpr int kIhdpCovariates = 25;
constexpr int kIhdpPool = 471;
constexpr int kIhdpValid = 201;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

double parse_double_field(const std::string& field, int row, const std::string& column) {
    const char* begin = field.c_str();
    char* end = nullptr;
    double value = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(value)) {
        throw parse_error("bad value '" + field + "' in column " + column + " at data row " +
                          std::to_string(row));
    }
    return value;
}

ObservationalDataset take_rows(const ObservationalDataset& all, const std::vector<int>& idx,
                               int begin, int count) {
    ObservationalDataset out;
    out.source = all.source;
    out.covariates.resize(count, all.dim());
    out.treatments.resize(count);
    out.outcomes.resize(count);
    out.mu0_true.resize(count);
    out.mu1_true.resize(count);
    for (int i = 0; i < count; ++i) {
        int r = idx[static_cast<std::size_t>(begin + i)];
        out.covariates.row(i) = all.covariates.row(r);
        out.treatments[i] = all.treatments[r];
        out.outcomes[i] = all.outcomes[r];
        out.mu0_true[i] = all.mu0_true[r];
        out.mu1_true[i] = all.mu1_true[r];
    }
    return out;
}

}  // namespace

DatasetSplits load_ihdp(const std::string& path, std::uint64_t realization_seed) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open " + path);

    std::vector<std::string> expected = {"treatment", "y_factual", "y_cfactual", "mu0", "mu1"};
    for (int j = 1; j <= kIhdpCovariates; ++j) expected.push_back("x" + std::to_string(j));

    std::string line;
    if (!std::getline(in, line)) throw parse_error(path + ": missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header != expected) throw parse_error(path + ": unexpected header row");

    ObservationalDataset all;
    all.source = DataSource::ihdp;
    all.covariates.resize(kIhdpUnits, kIhdpCovariates);
    all.treatments.resize(kIhdpUnits);
    all.outcomes.resize(kIhdpUnits);
    all.mu0_true.resize(kIhdpUnits);
    all.mu1_true.resize(kIhdpUnits);

    int row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (row >= kIhdpUnits) {
            throw parse_error(path + ": expected exactly " + std::to_string(kIhdpUnits) +
                              " data rows");
        }
        auto fields = split_csv_line(line);
        if (fields.size() != expected.size()) {
            throw parse_error(path + ": wrong field count at data row " + std::to_string(row + 1));
        }
        double t = parse_double_field(fields[0], row + 1, "treatment");
        if (t != 0.0 && t != 1.0) {
            throw parse_error(path + ": treatment must be 0 or 1 at data row " +
                              std::to_string(row + 1));
        }
        all.treatments[row] = static_cast<int>(t);
        all.outcomes[row] = parse_double_field(fields[1], row + 1, "y_factual");
        parse_double_field(fields[2], row + 1, "y_cfactual");
        all.mu0_true[row] = parse_double_field(fields[3], row + 1, "mu0");
        all.mu1_true[row] = parse_double_field(fields[4], row + 1, "mu1");
        for (int j = 0; j < kIhdpCovariates; ++j) {
            all.covariates(row, j) =
                parse_double_field(fields[static_cast<std::size_t>(5 + j)], row + 1,
                                   expected[static_cast<std::size_t>(5 + j)]);
        }
        ++row;
    }
    if (row != kIhdpUnits) {
        throw parse_error(path + ": expected exactly " + std::to_string(kIhdpUnits) +
                          " data rows, got " + std::to_string(row));
    }

    std::vector<int> idx(kIhdpUnits);
    for (int i = 0; i < kIhdpUnits; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(realization_seed);
    rng.shuffle(idx);

    DatasetSplits splits;
    splits.pool = take_rows(all, idx, 0, kIhdpPool);
    splits.valid = take_rows(all, idx, kIhdpPool, kIhdpValid);
    splits.test = take_rows(all, idx, kIhdpPool + kIhdpValid, kIhdpUnits - kIhdpPool - kIhdpValid);
    return splits;
}

void write_dataset_csv(const ObservationalDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("cannot open " + path + " for writing");
    char buf[64];
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << "x" << (j + 1) << ",";
    out << "treatment,outcome";
    if (data.has_surfaces()) out << ",mu0,mu1";
    out << "\n";
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        for (Eigen::Index j = 0; j < data.dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.covariates(i, j));
            out << buf << ",";
        }
        out << data.treatments[i] << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", data.outcomes[i]);
        out << buf;
        if (data.has_surfaces()) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.mu0_true[i]);
            out << "," << buf;
            std::snprintf(buf, sizeof(buf), "%.17g", data.mu1_true[i]);
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw parse_error("failed writing " + path);
}

}  // namespace cbald
