#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "cbald/dataset.hpp"

namespace cbald {

// Per-query joint posterior over the two arm means (mu0, mu1). Variances are
// epistemic only. tau_mean and tau_var are derived fields kept consistent
// with the block: tau_mean = mu1_mean - mu0_mean, tau_var = mu0_var +
// mu1_var - 2 cov01.
struct PosteriorSummary {
    double mu0_mean = 0.0;
    double mu1_mean = 0.0;
    double mu0_var = 0.0;
    double mu1_var = 0.0;
    double cov01 = 0.0;
    double tau_mean = 0.0;
    double tau_var = 0.0;
};

// Builds a summary from raw moments, clamping away the tiny negative
// variances and Cauchy-Schwarz overshoots that finite precision produces.
PosteriorSummary make_summary(double mu0_mean, double mu1_mean, double mu0_var,
                              double mu1_var, double cov01);

struct GpHyperparams {
    Eigen::VectorXd lengthscales;  // one per covariate dim, plus the treatment dim last
    double signal_var = 1.0;
    double noise_var = 0.1;
};

struct GpHyperGrid {
    std::vector<GpHyperparams> candidates;

    // Small fixed grid refit at every step; candidates are scored by log
    // marginal likelihood on the current training set.
    static GpHyperGrid defaults(int covariate_dim);
};

// Exact GP regressor over (covariates, treatment flag) with an anisotropic
// squared-exponential kernel. The treatment flag gets its own lengthscale,
// so correlation between arms is learned from data.
class GpModel {
public:
    GpModel() = default;

    static GpModel prior(const GpHyperparams& hyper, int covariate_dim);

    bool fitted() const { return fitted_; }
    Eigen::Index train_size() const { return inputs_.rows(); }
    const GpHyperparams& hyperparams() const { return hyper_; }
    double log_marginal_likelihood() const { return lml_; }

    void save(const std::string& path) const;
    static GpModel load(const std::string& path);

private:
    bool fitted_ = false;
    GpHyperparams hyper_;
    int covariate_dim_ = 0;
    Eigen::MatrixXd inputs_;  // n x (d + 1), standardized covariates then raw flag
    Eigen::MatrixXd chol_;    // L with L L^T = K + noise_var I
    Eigen::VectorXd alpha_;   // (K + noise_var I)^{-1} y_std
    Eigen::VectorXd x_mean_, x_scale_;
    double y_mean_ = 0.0;
    double y_scale_ = 1.0;
    double lml_ = 0.0;

    friend GpModel fit_gp(const LabeledSet& train, const GpHyperGrid& grid);
    friend std::vector<PosteriorSummary> predict_summary(const GpModel& model,
                                                         const Eigen::MatrixXd& queries);
};

GpModel fit_gp(const LabeledSet& train, const GpHyperGrid& grid);

std::vector<PosteriorSummary> predict_summary(const GpModel& model,
                                              const Eigen::MatrixXd& queries);

struct EnsembleSpec {
    int members = 5;
    int hidden = 64;
    int trunk_layers = 2;
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

// Small ensemble of shared-trunk two-headed MLP regressors trained on the
// factual arm only. Disagreement across members is the epistemic signal.
class EnsembleModel {
public:
    struct Member {
        std::vector<Eigen::MatrixXd> weights;  // trunk layers then the two heads
        std::vector<Eigen::VectorXd> biases;
        double best_valid_loss = 0.0;
    };

    EnsembleModel() = default;

    bool fitted() const { return !members_.empty(); }
    int member_count() const { return static_cast<int>(members_.size()); }
    const EnsembleSpec& spec() const { return spec_; }
    const std::vector<double>& valid_history(int member) const;

    // Per-member arm means for each query row: Q x M matrices.
    void member_predictions(const Eigen::MatrixXd& queries, Eigen::MatrixXd& mu0,
                            Eigen::MatrixXd& mu1) const;

    void save(const std::string& path) const;
    static EnsembleModel load(const std::string& path);

private:
    EnsembleSpec spec_;
    int input_dim_ = 0;
    std::vector<Member> members_;
    std::vector<std::vector<double>> valid_histories_;
    Eigen::VectorXd x_mean_, x_scale_;
    double y_mean_ = 0.0;
    double y_scale_ = 1.0;

    friend EnsembleModel fit_ensemble(const LabeledSet& train, const LabeledSet& valid,
                                      const EnsembleSpec& spec);
};

EnsembleModel fit_ensemble(const LabeledSet& train, const LabeledSet& valid,
                           const EnsembleSpec& spec);

std::vector<PosteriorSummary> predict_summary(const EnsembleModel& model,
                                              const Eigen::MatrixXd& queries);

// Population (1/M) moments over one query's member predictions; exposed so
// the convention is testable in isolation.
PosteriorSummary summary_from_member_predictions(const Eigen::VectorXd& mu0,
                                                 const Eigen::VectorXd& mu1);

// Draws from the treatment-effect posterior, one row per query. For the GP
// these are n_samples exact draws from each query's 2x2 block; for the
// ensemble the member effect estimates are returned as-is and n_samples is
// only recorded.
struct TauSamples {
    Eigen::MatrixXd values;  // Q x S
    int requested = 0;
    bool member_draws = false;
};

TauSamples sample_tau(const GpModel& model, const Eigen::MatrixXd& queries,
                      int n_samples, std::uint64_t seed);
TauSamples sample_tau(const EnsembleModel& model, const Eigen::MatrixXd& queries,
                      int n_samples, std::uint64_t seed);

using FittedModel = std::variant<GpModel, EnsembleModel>;

std::vector<PosteriorSummary> predict_summary(const FittedModel& model,
                                              const Eigen::MatrixXd& queries);
TauSamples sample_tau(const FittedModel& model, const Eigen::MatrixXd& queries,
                      int n_samples, std::uint64_t seed);

}  // namespace cbald
