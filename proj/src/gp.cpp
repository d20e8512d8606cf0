#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cbald/errors.hpp"
#include "cbald/posterior.hpp"
#include "cbald/rng.hpp"
#include "serialize.hpp"

namespace cbald {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Squared distances between row sets after per-dimension lengthscale
// scaling.
Eigen::MatrixXd scaled_sqdist(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const Eigen::VectorXd& lengthscales) {
    Eigen::MatrixXd as = a * lengthscales.cwiseInverse().asDiagonal();
    Eigen::MatrixXd bs = b * lengthscales.cwiseInverse().asDiagonal();
    Eigen::VectorXd an = as.rowwise().squaredNorm();
    Eigen::VectorXd bn = bs.rowwise().squaredNorm();
    Eigen::MatrixXd d = -2.0 * (as * bs.transpose());
    d.colwise() += an;
    d.rowwise() += bn.transpose();
    return d.cwiseMax(0.0);
}

Eigen::MatrixXd se_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const GpHyperparams& hyper) {
    return hyper.signal_var * (-0.5 * scaled_sqdist(a, b, hyper.lengthscales).array()).exp();
}

void check_hyper(const GpHyperparams& hyper, int input_dim) {
    if (hyper.lengthscales.size() != input_dim) {
        throw precondition_error("lengthscale count must equal covariate dims + 1");
    }
    if ((hyper.lengthscales.array() <= 0.0).any() || hyper.signal_var <= 0.0 ||
        hyper.noise_var <= 0.0) {
        throw precondition_error("GP hyperparameters must be positive");
    }
}

struct CholFit {
    Eigen::MatrixXd chol;
    Eigen::VectorXd alpha;
    double lml = -std::numeric_limits<double>::infinity();
    bool ok = false;
};

// Escalates diagonal jitter up to 1e-4 before giving up.
CholFit try_fit(const Eigen::MatrixXd& gram, const Eigen::VectorXd& y) {
    CholFit fit;
    Eigen::Index n = gram.rows();
    for (double jitter : {0.0, 1e-10, 1e-8, 1e-6, 1e-4}) {
        Eigen::MatrixXd k = gram;
        k.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) continue;
        fit.chol = llt.matrixL();
        fit.alpha = llt.solve(y);
        fit.lml = -0.5 * y.dot(fit.alpha) - fit.chol.diagonal().array().log().sum() -
                  0.5 * static_cast<double>(n) * std::log(kTwoPi);
        fit.ok = true;
        return fit;
    }
    return fit;
}

}  // namespace

PosteriorSummary make_summary(double mu0_mean, double mu1_mean, double mu0_var, double mu1_var,
                              double cov01) {
    PosteriorSummary s;
    s.mu0_mean = mu0_mean;
    s.mu1_mean = mu1_mean;
    s.mu0_var = std::max(mu0_var, 0.0);
    s.mu1_var = std::max(mu1_var, 0.0);
    double bound = std::sqrt(s.mu0_var * s.mu1_var);
    s.cov01 = std::clamp(cov01, -bound, bound);
    s.tau_mean = s.mu1_mean - s.mu0_mean;
    s.tau_var = std::max(s.mu0_var + s.mu1_var - 2.0 * s.cov01, 0.0);
    return s;
}

GpHyperGrid GpHyperGrid::defaults(int covariate_dim) {
    if (covariate_dim <= 0) throw precondition_error("covariate_dim must be positive");
    GpHyperGrid grid;
    double base = std::sqrt(static_cast<double>(covariate_dim));
    for (double xm : {0.5, 1.0, 2.0}) {
        for (double lt : {0.4, 0.8, 1.6}) {
            for (double noise : {0.05, 0.2, 0.5}) {
                GpHyperparams h;
                h.lengthscales = Eigen::VectorXd::Constant(covariate_dim + 1, base * xm);
                h.lengthscales[covariate_dim] = lt;
                h.signal_var = 1.0;
                h.noise_var = noise;
                grid.candidates.push_back(std::move(h));
            }
        }
    }
    return grid;
}

GpModel GpModel::prior(const GpHyperparams& hyper, int covariate_dim) {
    if (covariate_dim <= 0) throw precondition_error("covariate_dim must be positive");
    check_hyper(hyper, covariate_dim + 1);
    GpModel model;
    model.fitted_ = true;
    model.hyper_ = hyper;
    model.covariate_dim_ = covariate_dim;
    model.inputs_.resize(0, covariate_dim + 1);
    model.x_mean_ = Eigen::VectorXd::Zero(covariate_dim);
    model.x_scale_ = Eigen::VectorXd::Ones(covariate_dim);
    return model;
}

GpModel fit_gp(const LabeledSet& train, const GpHyperGrid& grid) {
    Eigen::Index n = train.n();
    if (n == 0) throw precondition_error("fit_gp: training set is empty");
    if (grid.candidates.empty()) throw precondition_error("fit_gp: empty hyperparameter grid");
    int d = static_cast<int>(train.dim());
    for (const auto& h : grid.candidates) check_hyper(h, d + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (train.treatments[i] != 0 && train.treatments[i] != 1) {
            throw precondition_error("fit_gp: treatments must be 0 or 1");
        }
    }

    GpModel model;
    model.covariate_dim_ = d;
    model.x_mean_ = train.covariates.colwise().mean();
    model.x_scale_.resize(d);
    for (int j = 0; j < d; ++j) {
        double var = (train.covariates.col(j).array() - model.x_mean_[j]).square().mean();
        double sd = std::sqrt(var);
        model.x_scale_[j] = sd > 1e-12 ? sd : 1.0;
    }
    // Outcome standardization only once a scale is estimable.
    if (n >= 2) {
        model.y_mean_ = train.outcomes.mean();
        double var = (train.outcomes.array() - model.y_mean_).square().mean();
        double sd = std::sqrt(var);
        model.y_scale_ = sd > 1e-12 ? sd : 1.0;
    }

    model.inputs_.resize(n, d + 1);
    model.inputs_.leftCols(d) =
        (train.covariates.rowwise() - model.x_mean_.transpose()) *
        model.x_scale_.cwiseInverse().asDiagonal();
    model.inputs_.col(d) = train.treatments.cast<double>();

    Eigen::VectorXd y = (train.outcomes.array() - model.y_mean_) / model.y_scale_;

    bool any_ok = false;
    double best_lml = -std::numeric_limits<double>::infinity();
    CholFit best;
    const GpHyperparams* best_hyper = nullptr;
    for (const auto& hyper : grid.candidates) {
        Eigen::MatrixXd gram = se_kernel(model.inputs_, model.inputs_, hyper);
        gram.diagonal().array() += hyper.noise_var;
        CholFit fit = try_fit(gram, y);
        if (!fit.ok) continue;
        if (!any_ok || fit.lml > best_lml) {
            any_ok = true;
            best_lml = fit.lml;
            best = std::move(fit);
            best_hyper = &hyper;
        }
    }
    if (!any_ok) {
        throw numeric_error("fit_gp: Gram matrix not positive definite for any candidate");
    }

    model.hyper_ = *best_hyper;
    model.chol_ = std::move(best.chol);
    model.alpha_ = std::move(best.alpha);
    model.lml_ = best_lml;
    model.fitted_ = true;
    return model;
}

std::vector<PosteriorSummary> predict_summary(const GpModel& model,
                                              const Eigen::MatrixXd& queries) {
    if (!model.fitted()) throw state_error("predict_summary: GP model is not fitted");
    if (queries.cols() != model.covariate_dim_) {
        throw precondition_error("predict_summary: query dimension mismatch");
    }
    Eigen::Index q = queries.rows();
    Eigen::Index n = model.inputs_.rows();
    int d = model.covariate_dim_;
    double sig = model.hyper_.signal_var;
    double lt = model.hyper_.lengthscales[d];
    // Same covariates, opposite flags: prior cross-arm covariance is constant.
    double prior_cross = sig * std::exp(-0.5 / (lt * lt));
    double ys2 = model.y_scale_ * model.y_scale_;

    std::vector<PosteriorSummary> out;
    out.reserve(static_cast<std::size_t>(q));

    Eigen::MatrixXd xs = (queries.rowwise() - model.x_mean_.transpose()) *
                         model.x_scale_.cwiseInverse().asDiagonal();

    if (n == 0) {
        for (Eigen::Index i = 0; i < q; ++i) {
            out.push_back(make_summary(model.y_mean_, model.y_mean_, sig * ys2, sig * ys2,
                                       prior_cross * ys2));
        }
        return out;
    }

    const Eigen::Index block = 4096;
    Eigen::MatrixXd zq(block, d + 1);
    for (Eigen::Index start = 0; start < q; start += block) {
        Eigen::Index b = std::min(block, q - start);
        zq.conservativeResize(b, d + 1);
        zq.leftCols(d) = xs.middleRows(start, b);

        zq.col(d).setZero();
        Eigen::MatrixXd k0 = se_kernel(model.inputs_, zq, model.hyper_);  // n x b
        zq.col(d).setOnes();
        Eigen::MatrixXd k1 = se_kernel(model.inputs_, zq, model.hyper_);

        Eigen::VectorXd m0 = k0.transpose() * model.alpha_;
        Eigen::VectorXd m1 = k1.transpose() * model.alpha_;

        model.chol_.triangularView<Eigen::Lower>().solveInPlace(k0);
        model.chol_.triangularView<Eigen::Lower>().solveInPlace(k1);

        for (Eigen::Index i = 0; i < b; ++i) {
            double v0 = sig - k0.col(i).squaredNorm();
            double v1 = sig - k1.col(i).squaredNorm();
            double c01 = prior_cross - k0.col(i).dot(k1.col(i));
            out.push_back(make_summary(m0[i] * model.y_scale_ + model.y_mean_,
                                       m1[i] * model.y_scale_ + model.y_mean_, v0 * ys2, v1 * ys2,
                                       c01 * ys2));
        }
    }
    return out;
}

TauSamples sample_tau(const GpModel& model, const Eigen::MatrixXd& queries, int n_samples,
                      std::uint64_t seed) {
    if (n_samples < 2) throw precondition_error("sample_tau: need at least 2 samples");
    auto summaries = predict_summary(model, queries);

    TauSamples result;
    result.requested = n_samples;
    result.member_draws = false;
    result.values.resize(queries.rows(), n_samples);

    Rng rng(seed);
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        const auto& s = summaries[static_cast<std::size_t>(i)];
        double scale = std::max({s.mu0_var, s.mu1_var, 1e-30});
        double l11 = 0.0, l21 = 0.0, l22 = 0.0;
        bool ok = false;
        for (double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
            double v0 = s.mu0_var + jitter * scale;
            double v1 = s.mu1_var + jitter * scale;
            l11 = std::sqrt(v0);
            l21 = l11 > 0.0 ? s.cov01 / l11 : 0.0;
            double rem = v1 - l21 * l21;
            if (rem >= -1e-12 * scale) {
                l22 = std::sqrt(std::max(rem, 0.0));
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw numeric_error("sample_tau: posterior block not positive definite at query " +
                                std::to_string(i));
        }
        for (int k = 0; k < n_samples; ++k) {
            double z1 = rng.normal();
            double z2 = rng.normal();
            result.values(i, k) = s.tau_mean + (l21 - l11) * z1 + l22 * z2;
        }
    }
    return result;
}

namespace {

constexpr char kGpMagic[8] = {'C', 'B', 'G', 'P', '0', '0', '0', '1'};

using detail::read_matrix;
using detail::read_scalar;
using detail::write_matrix;
using detail::write_scalar;

}  // namespace

void GpModel::save(const std::string& path) const {
    if (!fitted_) throw state_error("GpModel::save: model is not fitted");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error("cannot open " + path + " for writing");
    out.write(kGpMagic, sizeof(kGpMagic));
    std::int64_t d = covariate_dim_;
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    write_matrix(out, hyper_.lengthscales);
    write_scalar(out, hyper_.signal_var);
    write_scalar(out, hyper_.noise_var);
    write_matrix(out, inputs_);
    write_matrix(out, chol_);
    write_matrix(out, alpha_);
    write_matrix(out, x_mean_);
    write_matrix(out, x_scale_);
    write_scalar(out, y_mean_);
    write_scalar(out, y_scale_);
    write_scalar(out, lml_);
    if (!out) throw parse_error("failed writing " + path);
}

GpModel GpModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kGpMagic, sizeof(magic)) != 0) {
        throw parse_error(path + " is not a GP checkpoint");
    }
    GpModel model;
    std::int64_t d = 0;
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (!in || d <= 0) throw parse_error("corrupt GP checkpoint");
    model.covariate_dim_ = static_cast<int>(d);
    model.hyper_.lengthscales = read_matrix(in);
    model.hyper_.signal_var = read_scalar(in);
    model.hyper_.noise_var = read_scalar(in);
    model.inputs_ = read_matrix(in);
    model.chol_ = read_matrix(in);
    model.alpha_ = read_matrix(in);
    model.x_mean_ = read_matrix(in);
    model.x_scale_ = read_matrix(in);
    model.y_mean_ = read_scalar(in);
    model.y_scale_ = read_scalar(in);
    model.lml_ = read_scalar(in);
    model.fitted_ = true;
    return model;
}

}  // namespace cbald
