#include "cbald/propensity.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "cbald/errors.hpp"

namespace cbald {

namespace {

// -log p(t | a) for a logit a, computed without overflow.
double bernoulli_nll(double a, int t) {
    double z = t == 1 ? a : -a;
    if (z >= 0.0) return std::log1p(std::exp(-z));
    return -z + std::log1p(std::exp(z));
}

double sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    double e = std::exp(a);
    return e / (1.0 + e);
}

}  // namespace

PropensityModel fit_propensity(const ObservationalDataset& pool, double ridge,
                               double clamp_eps) {
    Eigen::Index n = pool.n();
    if (n == 0) throw precondition_error("fit_propensity: pool is empty");
    if (!(ridge >= 0.0)) throw precondition_error("fit_propensity: ridge must be non-negative");
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) {
        throw precondition_error("fit_propensity: clamp_eps must lie in (0, 0.5)");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (pool.treatments[i] != 0 && pool.treatments[i] != 1) {
            throw precondition_error("fit_propensity: treatments must be 0 or 1");
        }
    }

    Eigen::Index d = pool.dim();
    Eigen::MatrixXd x(n, d + 1);
    x.leftCols(d) = pool.covariates;
    x.col(d).setOnes();
    Eigen::VectorXd t = pool.treatments.cast<double>();

    Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);

    auto objective = [&](const Eigen::VectorXd& weights) {
        Eigen::VectorXd logits = x * weights;
        double nll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            nll += bernoulli_nll(logits[i], pool.treatments[i]);
        }
        return nll + 0.5 * ridge * weights.squaredNorm();
    };

    PropensityModel model;
    model.clamp_eps = clamp_eps;
    model.nll_history.push_back(objective(w));

    constexpr int kMaxIter = 100;
    constexpr double kTol = 1e-8;
    for (int iter = 0; iter < kMaxIter; ++iter) {
        Eigen::VectorXd logits = x * w;
        Eigen::VectorXd p(n);
        for (Eigen::Index i = 0; i < n; ++i) p[i] = sigmoid(logits[i]);
        Eigen::VectorXd grad = x.transpose() * (p - t) + ridge * w;
        Eigen::VectorXd s = p.array() * (1.0 - p.array());
        Eigen::MatrixXd hess = x.transpose() * s.asDiagonal() * x;
        hess.diagonal().array() += ridge;
        Eigen::VectorXd delta = hess.ldlt().solve(grad);

        // Halve the Newton step until the penalized objective improves.
        double current = model.nll_history.back();
        double alpha = 1.0;
        Eigen::VectorXd next = w - alpha * delta;
        double next_obj = objective(next);
        while (next_obj > current && alpha > 1e-12) {
            alpha *= 0.5;
            next = w - alpha * delta;
            next_obj = objective(next);
        }
        if (next_obj > current) break;
        double max_change = (next - w).cwiseAbs().maxCoeff();
        w = next;
        model.nll_history.push_back(next_obj);
        if (max_change < kTol) break;
    }

    model.weights = w.head(d);
    model.bias = w[d];
    return model;
}

double predict_pi(const PropensityModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                  int t) {
    if (!model.fitted()) throw state_error("predict_pi: model is not fitted");
    if (x.size() != model.weights.size()) {
        throw precondition_error("predict_pi: covariate dimension mismatch");
    }
    if (t != 0 && t != 1) throw precondition_error("predict_pi: treatment must be 0 or 1");
    double p1 = sigmoid(model.weights.dot(x) + model.bias);
    p1 = std::clamp(p1, model.clamp_eps, 1.0 - model.clamp_eps);
    return t == 1 ? p1 : 1.0 - p1;
}

Eigen::VectorXd predict_pi(const PropensityModel& model, const Eigen::MatrixXd& covariates,
                           const Eigen::VectorXi& treatments) {
    if (covariates.rows() != treatments.size()) {
        throw precondition_error("predict_pi: row count mismatch");
    }
    Eigen::VectorXd out(covariates.rows());
    for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
        out[i] = predict_pi(model, covariates.row(i).transpose(), treatments[i]);
    }
    return out;
}

}  // namespace cbald
