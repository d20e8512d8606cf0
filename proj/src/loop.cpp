#include "cbald/loop.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>

#include "cbald/errors.hpp"
#include "cbald/propensity.hpp"
#include "cbald/report.hpp"
#include "cbald/rng.hpp"

namespace cbald {

namespace {

// Posterior draws per candidate for the sign-information score when the
// model is a GP; an ensemble contributes one draw per member instead.
constexpr int kGammaDraws = 128;

long long ms_between(std::chrono::steady_clock::time_point a,
                     std::chrono::steady_clock::time_point b) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(b - a).count();
}

bool needs_propensity(AcquisitionKind kind) {
    return kind == AcquisitionKind::Propensity || kind == AcquisitionKind::MuPiBald;
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::gp: return "gp";
        case ModelKind::ensemble: return "ensemble";
    }
    throw precondition_error("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "gp") return ModelKind::gp;
    if (name == "ensemble") return ModelKind::ensemble;
    throw config_error("unknown model kind '" + name + "'");
}

void LoopConfig::validate(Eigen::Index pool_size) const {
    if (warm_up_size < 1) throw config_error("warm_up_size must be at least 1");
    if (acquisition_size < 1) throw config_error("acquisition_size must be at least 1");
    if (acquisition_steps < 0) throw config_error("acquisition_steps must be non-negative");
    if (!(temperature >= 0.0)) throw config_error("temperature must be non-negative");
    if (final_labeled() > pool_size) {
        throw config_error("label budget " + std::to_string(final_labeled()) +
                           " exceeds pool size " + std::to_string(pool_size));
    }
    if (model == ModelKind::ensemble) ensemble.validate();
}

ActivePool::ActivePool(const ObservationalDataset& pool) : pool_(&pool) {
    pool.validate();
    remaining_.resize(static_cast<std::size_t>(pool.n()));
    std::iota(remaining_.begin(), remaining_.end(), 0);
    labeled_flags_.assign(static_cast<std::size_t>(pool.n()), false);
    train_.covariates.resize(0, pool.dim());
    train_.treatments.resize(0);
    train_.outcomes.resize(0);
}

void ActivePool::reveal_outcomes(const std::vector<int>& indices) {
    if (indices.empty()) throw precondition_error("reveal_outcomes: empty index list");
    for (int idx : indices) {
        if (idx < 0 || idx >= pool_->n()) {
            throw precondition_error("reveal_outcomes: index " + std::to_string(idx) +
                                     " out of range");
        }
        if (labeled_flags_[static_cast<std::size_t>(idx)]) {
            throw precondition_error("reveal_outcomes: index " + std::to_string(idx) +
                                     " already labeled");
        }
        labeled_flags_[static_cast<std::size_t>(idx)] = true;
    }

    Eigen::Index old_n = train_.n();
    Eigen::Index add = static_cast<Eigen::Index>(indices.size());
    train_.covariates.conservativeResize(old_n + add, Eigen::NoChange);
    train_.treatments.conservativeResize(old_n + add);
    train_.outcomes.conservativeResize(old_n + add);
    for (Eigen::Index i = 0; i < add; ++i) {
        int idx = indices[static_cast<std::size_t>(i)];
        train_.covariates.row(old_n + i) = pool_->covariates.row(idx);
        train_.treatments[old_n + i] = pool_->treatments[idx];
        train_.outcomes[old_n + i] = pool_->outcomes[idx];
        labeled_order_.push_back(idx);
    }

    std::erase_if(remaining_, [&](int idx) { return labeled_flags_[static_cast<std::size_t>(idx)]; });
}

Eigen::MatrixXd ActivePool::remaining_covariates() const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(remaining_.size()), pool_->dim());
    for (std::size_t i = 0; i < remaining_.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = pool_->covariates.row(remaining_[i]);
    }
    return out;
}

Eigen::VectorXi ActivePool::remaining_treatments() const {
    Eigen::VectorXi out(static_cast<Eigen::Index>(remaining_.size()));
    for (std::size_t i = 0; i < remaining_.size(); ++i) {
        out[static_cast<Eigen::Index>(i)] = pool_->treatments[remaining_[i]];
    }
    return out;
}

namespace {

FittedModel fit_model(const LoopConfig& config, const LabeledSet& train,
                      const LabeledSet& valid) {
    if (config.model == ModelKind::gp) {
        return fit_gp(train, GpHyperGrid::defaults(static_cast<int>(train.dim())));
    }
    return fit_ensemble(train, valid, config.ensemble);
}

double evaluate_pehe(const FittedModel& model, const ObservationalDataset& test) {
    auto summaries = predict_summary(model, test.covariates);
    Eigen::VectorXd tau_hat(test.n());
    for (Eigen::Index i = 0; i < test.n(); ++i) {
        tau_hat[i] = summaries[static_cast<std::size_t>(i)].tau_mean;
    }
    return pehe(tau_hat, test.true_tau());
}

Eigen::VectorXd candidate_scores(const LoopConfig& config, const FittedModel& model,
                                 const ActivePool& active, const PropensityModel& propensity,
                                 std::uint64_t draw_seed) {
    Eigen::Index m = static_cast<Eigen::Index>(active.remaining().size());
    Eigen::VectorXd scores = Eigen::VectorXd::Zero(m);
    if (config.acquisition == AcquisitionKind::Random) return scores;

    Eigen::MatrixXd covs = active.remaining_covariates();
    Eigen::VectorXi treats = active.remaining_treatments();

    Eigen::VectorXd pi;
    if (needs_propensity(config.acquisition)) {
        pi = predict_pi(propensity, covs, treats);
    }

    if (config.acquisition == AcquisitionKind::Propensity) {
        for (Eigen::Index i = 0; i < m; ++i) scores[i] = score_propensity(pi[i]);
        return scores;
    }

    if (config.acquisition == AcquisitionKind::GammaSType) {
        TauSamples draws = sample_tau(model, covs, kGammaDraws, draw_seed);
        for (Eigen::Index i = 0; i < m; ++i) {
            scores[i] = score_gamma_stype(draws.values.row(i).transpose());
        }
        return scores;
    }

    auto summaries = predict_summary(model, covs);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& s = summaries[static_cast<std::size_t>(i)];
        int t = treats[i];
        switch (config.acquisition) {
            case AcquisitionKind::TauBald:
                scores[i] = score_tau_bald(s);
                break;
            case AcquisitionKind::MuBald:
                scores[i] = score_mu_bald(s, t);
                break;
            case AcquisitionKind::MuPiBald:
                scores[i] = score_mu_pi_bald(s, t, pi[i]);
                break;
            case AcquisitionKind::RhoBald:
                scores[i] = score_rho_bald(s, t);
                break;
            case AcquisitionKind::MuRhoBald:
                scores[i] = score_mu_rho_bald(s, t);
                break;
            default:
                throw precondition_error("unhandled acquisition kind");
        }
    }
    return scores;
}

}  // namespace

Trajectory run_experiment(const ObservationalDataset& pool, const ObservationalDataset& valid,
                          const ObservationalDataset& test, const LoopConfig& config) {
    config.validate(pool.n());
    pool.validate();
    valid.validate();
    test.validate();
    if (!test.has_surfaces()) {
        throw precondition_error("run_experiment: test set lacks true outcome surfaces");
    }
    if (valid.dim() != pool.dim() || test.dim() != pool.dim()) {
        throw precondition_error("run_experiment: splits disagree on covariate dimension");
    }

    auto t_start = std::chrono::steady_clock::now();
    long long fit_ms = 0, score_ms = 0;

    ActivePool active(pool);
    LabeledSet valid_labeled = labeled_view(valid);

    PropensityModel propensity;
    if (needs_propensity(config.acquisition)) {
        propensity = fit_propensity(pool);
    }

    // Uniform warm-up draw without replacement.
    std::vector<int> all(static_cast<std::size_t>(pool.n()));
    std::iota(all.begin(), all.end(), 0);
    Rng warm_rng(mix_seed(config.seed, 1));
    warm_rng.shuffle(all);
    std::vector<int> warm(all.begin(), all.begin() + config.warm_up_size);

    Trajectory trajectory;
    trajectory.config = config;

    active.reveal_outcomes(warm);
    auto t0 = std::chrono::steady_clock::now();
    FittedModel model = fit_model(config, active.train(), valid_labeled);
    auto t1 = std::chrono::steady_clock::now();
    fit_ms += ms_between(t0, t1);

    TrajectoryStep row;
    row.step = 0;
    row.n_train = static_cast<int>(active.labeled_count());
    row.pehe = evaluate_pehe(model, test);
    row.selected = warm;
    trajectory.steps.push_back(std::move(row));

    for (int step = 1; step <= config.acquisition_steps; ++step) {
        auto s0 = std::chrono::steady_clock::now();
        Eigen::VectorXd raw = candidate_scores(config, model, active, propensity,
                                               mix_seed(config.seed, 3000 + static_cast<std::uint64_t>(step)));
        auto score_vec = AcquisitionScoreVector::make(std::move(raw), config.acquisition);
        std::vector<int> local =
            select_batch_softmax(score_vec, config.acquisition_size, config.temperature,
                                 mix_seed(config.seed, 2000 + static_cast<std::uint64_t>(step)));
        auto s1 = std::chrono::steady_clock::now();
        score_ms += ms_between(s0, s1);

        std::vector<int> chosen;
        chosen.reserve(local.size());
        for (int idx : local) chosen.push_back(active.remaining()[static_cast<std::size_t>(idx)]);

        active.reveal_outcomes(chosen);

        auto f0 = std::chrono::steady_clock::now();
        model = fit_model(config, active.train(), valid_labeled);
        auto f1 = std::chrono::steady_clock::now();
        fit_ms += ms_between(f0, f1);

        TrajectoryStep next;
        next.step = step;
        next.n_train = static_cast<int>(active.labeled_count());
        next.pehe = evaluate_pehe(model, test);
        next.selected = std::move(chosen);
        trajectory.steps.push_back(std::move(next));
    }

    auto t_end = std::chrono::steady_clock::now();
    std::fprintf(stderr,
                 "[cbald] %s/%s seed=%llu rows=%zu final_n=%d total=%lldms fit=%lldms score=%lldms\n",
                 to_string(config.acquisition).c_str(), to_string(config.model).c_str(),
                 static_cast<unsigned long long>(config.seed), trajectory.steps.size(),
                 trajectory.steps.back().n_train, ms_between(t_start, t_end), fit_ms, score_ms);
    return trajectory;
}

}  // namespace cbald
