#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cbald/dataset.hpp"

namespace cbald {

// Ridge-penalized logistic regression of treatment on covariates, fit once
// on the full pool. Predictions are clamped into [eps, 1 - eps] so
// inverse-style scores stay bounded.
struct PropensityModel {
    Eigen::VectorXd weights;
    double bias = 0.0;
    double clamp_eps = 1e-3;
    std::vector<double> nll_history;  // penalized objective per IRLS iteration

    bool fitted() const { return weights.size() > 0; }
};

PropensityModel fit_propensity(const ObservationalDataset& pool, double ridge = 1e-4,
                               double clamp_eps = 1e-3);

// P(T = t | x), clamped.
double predict_pi(const PropensityModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                  int t);

Eigen::VectorXd predict_pi(const PropensityModel& model, const Eigen::MatrixXd& covariates,
                           const Eigen::VectorXi& treatments);

}  // namespace cbald
