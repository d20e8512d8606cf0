#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace cbald {

enum class DataSource { synthetic, phi_surrogate, ihdp };

std::string to_string(DataSource source);
DataSource data_source_from_string(const std::string& name);

// A pool of units with covariates, assigned treatments and factual outcomes.
// mu0_true / mu1_true hold the noiseless potential-outcome surfaces when the
// source provides them (needed for PEHE evaluation); they stay empty
// otherwise and must never reach a model fit.
struct ObservationalDataset {
    Eigen::MatrixXd covariates;   // n x d
    Eigen::VectorXi treatments;   // n, each 0 or 1
    Eigen::VectorXd outcomes;     // n
    Eigen::VectorXd mu0_true;     // n or empty
    Eigen::VectorXd mu1_true;     // n or empty
    DataSource source = DataSource::synthetic;

    Eigen::Index n() const { return covariates.rows(); }
    Eigen::Index dim() const { return covariates.cols(); }
    bool has_surfaces() const { return mu0_true.size() == n() && mu1_true.size() == n(); }
    Eigen::VectorXd true_tau() const;

    void validate() const;
};

// What a fitting routine is allowed to see: no counterfactual surfaces.
struct LabeledSet {
    Eigen::MatrixXd covariates;
    Eigen::VectorXi treatments;
    Eigen::VectorXd outcomes;

    Eigen::Index n() const { return covariates.rows(); }
    Eigen::Index dim() const { return covariates.cols(); }
};

LabeledSet labeled_view(const ObservationalDataset& data);

struct DatasetSplits {
    ObservationalDataset pool;
    ObservationalDataset valid;
    ObservationalDataset test;
};

struct SyntheticConfig {
    int n_pool = 10000;
    int n_valid = 1000;
    int n_test = 1000;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Low-dimensional stand-in for the image benchmark: a latent scalar phi is
// binned into one of n_classes intervals of [-2, 2]; the model sees the
// one-hot bin plus the within-bin position, never phi itself.
struct PhiSurrogateConfig {
    int n_pool = 35000;
    int n_valid = 15000;
    int n_test = 10000;
    int n_classes = 10;
    double clip_bound = 1.4;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Noiseless outcome surface of the synthetic generator at covariate x under
// treatment t.
double noiseless_surface(double x, int t);

// True treatment effect of the synthetic generator, tau(x).
double true_cate(double x);

// phi for class c and clipped latent z under the given surrogate config.
double phi_value(int c, double z, const PhiSurrogateConfig& cfg);

// Pool / valid / test draws use seed, seed + 1, seed + 2.
DatasetSplits generate_synthetic(const SyntheticConfig& cfg);
DatasetSplits generate_phi_surrogate(const PhiSurrogateConfig& cfg);

// Reads the 747-unit semi-synthetic infant-health table (treatment,
// y_factual, y_cfactual, mu0, mu1, x1..x25) and splits it 471/201/75 with a
// seeded shuffle.
DatasetSplits load_ihdp(const std::string& path, std::uint64_t realization_seed);

void write_dataset_csv(const ObservationalDataset& data, const std::string& path);

}  // namespace cbald
