#include "cbald/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbald/errors.hpp"
#include "cbald/rng.hpp"

namespace cbald {

std::string to_string(AcquisitionKind kind) {
    switch (kind) {
        case AcquisitionKind::Random: return "random";
        case AcquisitionKind::Propensity: return "propensity";
        case AcquisitionKind::TauBald: return "tau_bald";
        case AcquisitionKind::MuBald: return "mu_bald";
        case AcquisitionKind::MuPiBald: return "mu_pi_bald";
        case AcquisitionKind::RhoBald: return "rho_bald";
        case AcquisitionKind::MuRhoBald: return "mu_rho_bald";
        case AcquisitionKind::GammaSType: return "gamma_stype";
    }
    throw precondition_error("unknown acquisition kind");
}

AcquisitionKind acquisition_from_string(const std::string& name) {
    if (name == "random") return AcquisitionKind::Random;
    if (name == "propensity") return AcquisitionKind::Propensity;
    if (name == "tau_bald") return AcquisitionKind::TauBald;
    if (name == "mu_bald") return AcquisitionKind::MuBald;
    if (name == "mu_pi_bald") return AcquisitionKind::MuPiBald;
    if (name == "rho_bald") return AcquisitionKind::RhoBald;
    if (name == "mu_rho_bald") return AcquisitionKind::MuRhoBald;
    if (name == "gamma_stype") return AcquisitionKind::GammaSType;
    throw config_error("unknown acquisition kind '" + name + "'");
}

AcquisitionScoreVector AcquisitionScoreVector::make(Eigen::VectorXd scores,
                                                    AcquisitionKind kind) {
    if (!scores.allFinite()) {
        throw numeric_error("acquisition scores must be finite");
    }
    // rho's log can dip below zero; the ranking only needs the order above
    // the clamp, and the vector contract is non-negative entries.
    if (kind != AcquisitionKind::Random) {
        scores = scores.cwiseMax(0.0);
    }
    AcquisitionScoreVector v;
    v.scores = std::move(scores);
    v.kind = kind;
    return v;
}

namespace {

void check_treatment(int t) {
    if (t != 0 && t != 1) throw precondition_error("treatment must be 0 or 1");
}

void check_pi(double pi) {
    if (!(pi > 0.0 && pi < 1.0)) {
        throw precondition_error("propensity must lie strictly inside (0, 1)");
    }
}

}  // namespace

double score_propensity(double pi_factual) {
    check_pi(pi_factual);
    return 1.0 - pi_factual;
}

double score_tau_bald(const PosteriorSummary& s) { return s.tau_var; }

double score_mu_bald(const PosteriorSummary& s, int t) {
    check_treatment(t);
    return t == 1 ? s.mu1_var : s.mu0_var;
}

double score_mu_pi_bald(const PosteriorSummary& s, int t, double pi_factual) {
    check_pi(pi_factual);
    return (1.0 - pi_factual) * score_mu_bald(s, t);
}

double score_rho_bald(const PosteriorSummary& s, int t, double floor) {
    check_treatment(t);
    double v_f = t == 1 ? s.mu1_var : s.mu0_var;
    double v_c = t == 1 ? s.mu0_var : s.mu1_var;
    double arg = (v_f - 2.0 * s.cov01) / std::max(v_c, floor) + 1.0;
    return 0.5 * std::log(std::max(arg, floor));
}

double score_mu_rho_bald(const PosteriorSummary& s, int t, double floor) {
    check_treatment(t);
    double v_f = t == 1 ? s.mu1_var : s.mu0_var;
    double v_c = t == 1 ? s.mu0_var : s.mu1_var;
    return v_f * s.tau_var / std::max(v_c, floor);
}

Eigen::VectorXd gamma_values(const Eigen::Ref<const Eigen::VectorXd>& tau_samples) {
    Eigen::Index n = tau_samples.size();
    if (n < 2) throw precondition_error("gamma_values: need at least 2 samples");
    double mean = tau_samples.mean();
    double var = (tau_samples.array() - mean).square().sum() / static_cast<double>(n - 1);
    double sd = std::sqrt(var + kGammaStabilizer);
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    Eigen::VectorXd gammas(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        // Phi(-|tau| / sd): mass the draw puts on the effect's sign being
        // ambiguous.
        double g = 0.5 * std::erfc(std::abs(tau_samples[i]) / sd * kInvSqrt2);
        gammas[i] = std::clamp(g, kGammaStabilizer, 1.0 - kGammaStabilizer);
    }
    return gammas;
}

double bernoulli_entropy(double p) {
    double q = std::clamp(p, kGammaStabilizer, 1.0 - kGammaStabilizer);
    return -q * std::log(q) - (1.0 - q) * std::log(1.0 - q);
}

double bernoulli_mutual_information(const Eigen::Ref<const Eigen::VectorXd>& gammas) {
    if (gammas.size() == 0) throw precondition_error("empty gamma vector");
    double mean_entropy = 0.0;
    for (Eigen::Index i = 0; i < gammas.size(); ++i) {
        mean_entropy += bernoulli_entropy(gammas[i]);
    }
    mean_entropy /= static_cast<double>(gammas.size());
    // Jensen guarantees non-negativity; cancellation can undershoot by an ulp.
    return std::max(0.0, bernoulli_entropy(gammas.mean()) - mean_entropy);
}

double score_gamma_stype(const Eigen::Ref<const Eigen::VectorXd>& tau_samples) {
    return bernoulli_mutual_information(gamma_values(tau_samples));
}

std::vector<int> select_batch_softmax(const AcquisitionScoreVector& scores, int batch_size,
                                      double temperature, std::uint64_t seed) {
    Eigen::Index n = scores.scores.size();
    if (batch_size <= 0) throw precondition_error("select_batch_softmax: batch_size must be positive");
    if (batch_size > n) {
        throw precondition_error("select_batch_softmax: batch exceeds candidate count");
    }
    if (!(temperature >= 0.0)) {
        throw precondition_error("select_batch_softmax: temperature must be non-negative");
    }

    // Gumbel-top-b: adding Gumbel noise to score / T and taking the b
    // largest keys samples the softmax distribution without replacement.
    // T = 0 degenerates to exact top-b (stable on ties via the index order).
    std::vector<double> keys(static_cast<std::size_t>(n));
    Rng rng(seed);
    if (temperature > 0.0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            keys[static_cast<std::size_t>(i)] = scores.scores[i] / temperature + rng.gumbel();
        }
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            keys[static_cast<std::size_t>(i)] = scores.scores[i];
        }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return keys[static_cast<std::size_t>(a)] > keys[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(batch_size));
    return order;
}

}  // namespace cbald
