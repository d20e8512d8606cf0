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

constexpr char kEnsembleMagic[8] = {'C', 'B', 'E', 'N', '0', '0', '0', '1'};

Eigen::ArrayXXd elu(const Eigen::ArrayXXd& a) {
    return (a > 0.0).select(a, a.exp() - 1.0);
}

Eigen::ArrayXXd elu_grad(const Eigen::ArrayXXd& a) {
    return (a > 0.0).select(Eigen::ArrayXXd::Ones(a.rows(), a.cols()), a.exp());
}

struct AdamState {
    std::vector<Eigen::MatrixXd> m_w, v_w;
    std::vector<Eigen::VectorXd> m_b, v_b;
    int step = 0;
};

void adam_update(Eigen::MatrixXd& w, const Eigen::MatrixXd& grad, Eigen::MatrixXd& m,
                 Eigen::MatrixXd& v, int step, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(b1, step);
    double c2 = 1.0 - std::pow(b2, step);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

void adam_update(Eigen::VectorXd& w, const Eigen::VectorXd& grad, Eigen::VectorXd& m,
                 Eigen::VectorXd& v, int step, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(b1, step);
    double c2 = 1.0 - std::pow(b2, step);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

// Trunk layers followed by the two heads; heads are rows h and h + 1.
int tensor_count(const EnsembleSpec& spec) { return spec.trunk_layers + 2; }

EnsembleModel::Member init_member(const EnsembleSpec& spec, int input_dim, Rng& rng) {
    EnsembleModel::Member member;
    int count = tensor_count(spec);
    member.weights.resize(static_cast<std::size_t>(count));
    member.biases.resize(static_cast<std::size_t>(count));
    for (int l = 0; l < count; ++l) {
        int fan_in = l == 0 ? input_dim : spec.hidden;
        int fan_out = l < spec.trunk_layers ? spec.hidden : 1;
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd w(fan_out, fan_in);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
        }
        member.weights[static_cast<std::size_t>(l)] = std::move(w);
        member.biases[static_cast<std::size_t>(l)] = Eigen::VectorXd::Zero(fan_out);
    }
    return member;
}

// Forward pass, keeping pre-activations for the backward pass.
struct ForwardTrace {
    std::vector<Eigen::MatrixXd> inputs;   // layer inputs, inputs[0] is the batch
    std::vector<Eigen::MatrixXd> preacts;  // trunk pre-activations
    Eigen::VectorXd mu0, mu1;
};

ForwardTrace forward(const EnsembleModel::Member& member, const EnsembleSpec& spec,
                     const Eigen::MatrixXd& batch, bool keep_trace) {
    ForwardTrace trace;
    Eigen::MatrixXd h = batch;
    if (keep_trace) trace.inputs.push_back(h);
    for (int l = 0; l < spec.trunk_layers; ++l) {
        Eigen::MatrixXd a =
            (h * member.weights[static_cast<std::size_t>(l)].transpose()).rowwise() +
            member.biases[static_cast<std::size_t>(l)].transpose();
        if (keep_trace) trace.preacts.push_back(a);
        h = elu(a.array()).matrix();
        if (keep_trace) trace.inputs.push_back(h);
    }
    const auto& w0 = member.weights[static_cast<std::size_t>(spec.trunk_layers)];
    const auto& w1 = member.weights[static_cast<std::size_t>(spec.trunk_layers + 1)];
    trace.mu0 = (h * w0.transpose()).col(0);
    trace.mu0.array() += member.biases[static_cast<std::size_t>(spec.trunk_layers)][0];
    trace.mu1 = (h * w1.transpose()).col(0);
    trace.mu1.array() += member.biases[static_cast<std::size_t>(spec.trunk_layers + 1)][0];
    return trace;
}

double factual_mse(const Eigen::VectorXd& mu0, const Eigen::VectorXd& mu1,
                   const Eigen::VectorXi& t, const Eigen::VectorXd& y) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double pred = t[i] == 1 ? mu1[i] : mu0[i];
        double diff = pred - y[i];
        total += diff * diff;
    }
    return total / static_cast<double>(y.size());
}

}  // namespace

void EnsembleSpec::validate() const {
    if (members < 2) throw config_error("ensemble needs at least 2 members");
    if (hidden < 1) throw config_error("hidden width must be positive");
    if (trunk_layers < 1) throw config_error("trunk needs at least one layer");
    if (epochs < 1) throw config_error("epochs must be positive");
    if (batch_size < 1) throw config_error("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw config_error("learning_rate must be positive");
}

EnsembleModel fit_ensemble(const LabeledSet& train, const LabeledSet& valid,
                           const EnsembleSpec& spec) {
    spec.validate();
    Eigen::Index n = train.n();
    if (n == 0) throw precondition_error("fit_ensemble: training set is empty");
    int d = static_cast<int>(train.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (train.treatments[i] != 0 && train.treatments[i] != 1) {
            throw precondition_error("fit_ensemble: treatments must be 0 or 1");
        }
    }
    if (valid.n() > 0 && valid.dim() != d) {
        throw precondition_error("fit_ensemble: validation dimension mismatch");
    }

    EnsembleModel model;
    model.spec_ = spec;
    model.input_dim_ = d;
    model.x_mean_ = train.covariates.colwise().mean();
    model.x_scale_.resize(d);
    for (int j = 0; j < d; ++j) {
        double var = (train.covariates.col(j).array() - model.x_mean_[j]).square().mean();
        double sd = std::sqrt(var);
        model.x_scale_[j] = sd > 1e-12 ? sd : 1.0;
    }
    if (n >= 2) {
        model.y_mean_ = train.outcomes.mean();
        double var = (train.outcomes.array() - model.y_mean_).square().mean();
        double sd = std::sqrt(var);
        model.y_scale_ = sd > 1e-12 ? sd : 1.0;
    }

    Eigen::MatrixXd x = (train.covariates.rowwise() - model.x_mean_.transpose()) *
                        model.x_scale_.cwiseInverse().asDiagonal();
    Eigen::VectorXd y = (train.outcomes.array() - model.y_mean_) / model.y_scale_;
    Eigen::MatrixXd xv;
    Eigen::VectorXd yv;
    if (valid.n() > 0) {
        xv = (valid.covariates.rowwise() - model.x_mean_.transpose()) *
             model.x_scale_.cwiseInverse().asDiagonal();
        yv = (valid.outcomes.array() - model.y_mean_) / model.y_scale_;
    }

    for (int m_idx = 0; m_idx < spec.members; ++m_idx) {
        Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(m_idx)));
        EnsembleModel::Member member = init_member(spec, d, rng);

        AdamState adam;
        adam.m_w.resize(member.weights.size());
        adam.v_w.resize(member.weights.size());
        adam.m_b.resize(member.biases.size());
        adam.v_b.resize(member.biases.size());
        for (std::size_t l = 0; l < member.weights.size(); ++l) {
            adam.m_w[l] = Eigen::MatrixXd::Zero(member.weights[l].rows(), member.weights[l].cols());
            adam.v_w[l] = adam.m_w[l];
            adam.m_b[l] = Eigen::VectorXd::Zero(member.biases[l].size());
            adam.v_b[l] = adam.m_b[l];
        }

        std::vector<int> order(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);

        EnsembleModel::Member best = member;
        double best_valid = std::numeric_limits<double>::infinity();
        std::vector<double> history;
        double last_train_loss = 0.0;

        for (int epoch = 0; epoch < spec.epochs; ++epoch) {
            rng.shuffle(order);
            double epoch_loss = 0.0;
            for (Eigen::Index start = 0; start < n; start += spec.batch_size) {
                Eigen::Index b = std::min<Eigen::Index>(spec.batch_size, n - start);
                Eigen::MatrixXd xb(b, d);
                Eigen::VectorXd yb(b);
                Eigen::VectorXi tb(b);
                for (Eigen::Index i = 0; i < b; ++i) {
                    int r = order[static_cast<std::size_t>(start + i)];
                    xb.row(i) = x.row(r);
                    yb[i] = y[r];
                    tb[i] = train.treatments[r];
                }

                ForwardTrace trace = forward(member, spec, xb, true);

                Eigen::VectorXd dmu0 = Eigen::VectorXd::Zero(b);
                Eigen::VectorXd dmu1 = Eigen::VectorXd::Zero(b);
                double batch_loss = 0.0;
                for (Eigen::Index i = 0; i < b; ++i) {
                    double pred = tb[i] == 1 ? trace.mu1[i] : trace.mu0[i];
                    double diff = pred - yb[i];
                    batch_loss += diff * diff;
                    double g = 2.0 * diff / static_cast<double>(b);
                    if (tb[i] == 1) {
                        dmu1[i] = g;
                    } else {
                        dmu0[i] = g;
                    }
                }
                batch_loss /= static_cast<double>(b);
                epoch_loss += batch_loss * static_cast<double>(b);
                if (!std::isfinite(batch_loss)) {
                    throw numeric_error("fit_ensemble: member " + std::to_string(m_idx) +
                                        " diverged at epoch " + std::to_string(epoch));
                }

                const Eigen::MatrixXd& h_last = trace.inputs.back();
                std::size_t h0 = static_cast<std::size_t>(spec.trunk_layers);
                std::size_t h1 = h0 + 1;
                Eigen::MatrixXd gw0 = dmu0.transpose() * h_last;
                Eigen::MatrixXd gw1 = dmu1.transpose() * h_last;
                Eigen::VectorXd gb0 = Eigen::VectorXd::Constant(1, dmu0.sum());
                Eigen::VectorXd gb1 = Eigen::VectorXd::Constant(1, dmu1.sum());

                Eigen::MatrixXd dh = dmu0 * member.weights[h0] + dmu1 * member.weights[h1];

                adam.step += 1;
                adam_update(member.weights[h0], gw0, adam.m_w[h0], adam.v_w[h0], adam.step,
                            spec.learning_rate);
                adam_update(member.weights[h1], gw1, adam.m_w[h1], adam.v_w[h1], adam.step,
                            spec.learning_rate);
                adam_update(member.biases[h0], gb0, adam.m_b[h0], adam.v_b[h0], adam.step,
                            spec.learning_rate);
                adam_update(member.biases[h1], gb1, adam.m_b[h1], adam.v_b[h1], adam.step,
                            spec.learning_rate);

                for (int l = spec.trunk_layers - 1; l >= 0; --l) {
                    std::size_t li = static_cast<std::size_t>(l);
                    Eigen::MatrixXd da =
                        (dh.array() * elu_grad(trace.preacts[li].array())).matrix();
                    Eigen::MatrixXd gw = da.transpose() * trace.inputs[li];
                    Eigen::VectorXd gb = da.colwise().sum().transpose();
                    if (l > 0) dh = da * member.weights[li];
                    adam_update(member.weights[li], gw, adam.m_w[li], adam.v_w[li], adam.step,
                                spec.learning_rate);
                    adam_update(member.biases[li], gb, adam.m_b[li], adam.v_b[li], adam.step,
                                spec.learning_rate);
                }
            }
            last_train_loss = epoch_loss / static_cast<double>(n);

            if (valid.n() > 0) {
                ForwardTrace vt = forward(member, spec, xv, false);
                double vloss = factual_mse(vt.mu0, vt.mu1, valid.treatments, yv);
                history.push_back(vloss);
                if (vloss < best_valid) {
                    best_valid = vloss;
                    best = member;
                }
            }
        }

        if (valid.n() > 0) {
            member = best;
            member.best_valid_loss = best_valid;
        } else {
            member.best_valid_loss = last_train_loss;
        }
        model.members_.push_back(std::move(member));
        model.valid_histories_.push_back(std::move(history));
    }
    return model;
}

const std::vector<double>& EnsembleModel::valid_history(int member) const {
    if (member < 0 || member >= member_count()) {
        throw precondition_error("valid_history: member index out of range");
    }
    return valid_histories_[static_cast<std::size_t>(member)];
}

void EnsembleModel::member_predictions(const Eigen::MatrixXd& queries, Eigen::MatrixXd& mu0,
                                       Eigen::MatrixXd& mu1) const {
    if (!fitted()) throw state_error("member_predictions: ensemble is not fitted");
    if (queries.cols() != input_dim_) {
        throw precondition_error("member_predictions: query dimension mismatch");
    }
    Eigen::MatrixXd x = (queries.rowwise() - x_mean_.transpose()) *
                        x_scale_.cwiseInverse().asDiagonal();
    mu0.resize(queries.rows(), member_count());
    mu1.resize(queries.rows(), member_count());
    for (int m_idx = 0; m_idx < member_count(); ++m_idx) {
        ForwardTrace trace =
            forward(members_[static_cast<std::size_t>(m_idx)], spec_, x, false);
        mu0.col(m_idx) = (trace.mu0.array() * y_scale_ + y_mean_).matrix();
        mu1.col(m_idx) = (trace.mu1.array() * y_scale_ + y_mean_).matrix();
    }
}

PosteriorSummary summary_from_member_predictions(const Eigen::VectorXd& mu0,
                                                 const Eigen::VectorXd& mu1) {
    Eigen::Index m = mu0.size();
    if (m < 2 || mu1.size() != m) {
        throw precondition_error("summary needs matching predictions from at least 2 members");
    }
    double mean0 = mu0.mean();
    double mean1 = mu1.mean();
    Eigen::ArrayXd c0 = mu0.array() - mean0;
    Eigen::ArrayXd c1 = mu1.array() - mean1;
    double inv = 1.0 / static_cast<double>(m);
    return make_summary(mean0, mean1, c0.square().sum() * inv, c1.square().sum() * inv,
                        (c0 * c1).sum() * inv);
}

std::vector<PosteriorSummary> predict_summary(const EnsembleModel& model,
                                              const Eigen::MatrixXd& queries) {
    Eigen::MatrixXd mu0, mu1;
    model.member_predictions(queries, mu0, mu1);
    std::vector<PosteriorSummary> out;
    out.reserve(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        out.push_back(summary_from_member_predictions(mu0.row(i).transpose(),
                                                      mu1.row(i).transpose()));
    }
    return out;
}

TauSamples sample_tau(const EnsembleModel& model, const Eigen::MatrixXd& queries, int n_samples,
                      std::uint64_t seed) {
    (void)seed;
    if (n_samples < 2) throw precondition_error("sample_tau: need at least 2 samples");
    Eigen::MatrixXd mu0, mu1;
    model.member_predictions(queries, mu0, mu1);
    TauSamples result;
    result.requested = n_samples;
    result.member_draws = true;
    result.values = mu1 - mu0;
    return result;
}

std::vector<PosteriorSummary> predict_summary(const FittedModel& model,
                                              const Eigen::MatrixXd& queries) {
    return std::visit([&](const auto& m) { return predict_summary(m, queries); }, model);
}

TauSamples sample_tau(const FittedModel& model, const Eigen::MatrixXd& queries, int n_samples,
                      std::uint64_t seed) {
    return std::visit([&](const auto& m) { return sample_tau(m, queries, n_samples, seed); },
                      model);
}

void EnsembleModel::save(const std::string& path) const {
    if (!fitted()) throw state_error("EnsembleModel::save: model is not fitted");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error("cannot open " + path + " for writing");
    out.write(kEnsembleMagic, sizeof(kEnsembleMagic));
    detail::write_i64(out, spec_.members);
    detail::write_i64(out, spec_.hidden);
    detail::write_i64(out, spec_.trunk_layers);
    detail::write_i64(out, spec_.epochs);
    detail::write_i64(out, spec_.batch_size);
    detail::write_scalar(out, spec_.learning_rate);
    detail::write_u64(out, spec_.seed);
    detail::write_i64(out, input_dim_);
    detail::write_matrix(out, x_mean_);
    detail::write_matrix(out, x_scale_);
    detail::write_scalar(out, y_mean_);
    detail::write_scalar(out, y_scale_);
    for (const auto& member : members_) {
        for (const auto& w : member.weights) detail::write_matrix(out, w);
        for (const auto& b : member.biases) detail::write_matrix(out, b);
        detail::write_scalar(out, member.best_valid_loss);
    }
    for (const auto& history : valid_histories_) {
        detail::write_i64(out, static_cast<std::int64_t>(history.size()));
        for (double v : history) detail::write_scalar(out, v);
    }
    if (!out) throw parse_error("failed writing " + path);
}

EnsembleModel EnsembleModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kEnsembleMagic, sizeof(magic)) != 0) {
        throw parse_error(path + " is not an ensemble checkpoint");
    }
    EnsembleModel model;
    model.spec_.members = static_cast<int>(detail::read_i64(in));
    model.spec_.hidden = static_cast<int>(detail::read_i64(in));
    model.spec_.trunk_layers = static_cast<int>(detail::read_i64(in));
    model.spec_.epochs = static_cast<int>(detail::read_i64(in));
    model.spec_.batch_size = static_cast<int>(detail::read_i64(in));
    model.spec_.learning_rate = detail::read_scalar(in);
    model.spec_.seed = detail::read_u64(in);
    model.spec_.validate();
    model.input_dim_ = static_cast<int>(detail::read_i64(in));
    if (model.input_dim_ <= 0) throw parse_error("corrupt ensemble checkpoint");
    model.x_mean_ = detail::read_matrix(in);
    model.x_scale_ = detail::read_matrix(in);
    model.y_mean_ = detail::read_scalar(in);
    model.y_scale_ = detail::read_scalar(in);
    int count = tensor_count(model.spec_);
    for (int m_idx = 0; m_idx < model.spec_.members; ++m_idx) {
        Member member;
        member.weights.resize(static_cast<std::size_t>(count));
        member.biases.resize(static_cast<std::size_t>(count));
        for (int l = 0; l < count; ++l) {
            member.weights[static_cast<std::size_t>(l)] = detail::read_matrix(in);
        }
        for (int l = 0; l < count; ++l) {
            member.biases[static_cast<std::size_t>(l)] = detail::read_matrix(in);
        }
        member.best_valid_loss = detail::read_scalar(in);
        model.members_.push_back(std::move(member));
    }
    for (int m_idx = 0; m_idx < model.spec_.members; ++m_idx) {
        std::int64_t len = detail::read_i64(in);
        if (len < 0) throw parse_error("corrupt ensemble checkpoint");
        std::vector<double> history(static_cast<std::size_t>(len));
        for (auto& v : history) v = detail::read_scalar(in);
        model.valid_histories_.push_back(std::move(history));
    }
    return model;
}

}  // namespace cbald
