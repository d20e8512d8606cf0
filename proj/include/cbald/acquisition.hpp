#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cbald/posterior.hpp"

namespace cbald {

enum class AcquisitionKind {
    Random,
    Propensity,
    TauBald,
    MuBald,
    MuPiBald,
    RhoBald,
    MuRhoBald,
    GammaSType,
};

std::string to_string(AcquisitionKind kind);
AcquisitionKind acquisition_from_string(const std::string& name);

// Guard for the variance ratios inside the rho family.
inline constexpr double kVarianceFloor = 1e-12;
// Stabilizer added to tau_var and clamp width for the gamma probabilities.
inline constexpr double kGammaStabilizer = 1e-7;

// One point per remaining pool unit, aligned with the candidate list it was
// built from. Entries are finite and, except for the Random placeholder,
// non-negative.
struct AcquisitionScoreVector {
    Eigen::VectorXd scores;
    AcquisitionKind kind = AcquisitionKind::Random;

    static AcquisitionScoreVector make(Eigen::VectorXd scores, AcquisitionKind kind);
};

// 1 - pi_t(x): prefer units whose observed arm is rare at their x.
double score_propensity(double pi_factual);

// Var over the model posterior of the treatment effect estimate.
double score_tau_bald(const PosteriorSummary& s);

// Var of the factual arm mean.
double score_mu_bald(const PosteriorSummary& s, int t);

double score_mu_pi_bald(const PosteriorSummary& s, int t, double pi_factual);

// 0.5 log((mu_var_factual - 2 cov01) / mu_var_counterfactual + 1); with the
// tau_var identity the log argument equals tau_var / mu_var_counterfactual.
// Can be negative when the counterfactual arm dominates.
double score_rho_bald(const PosteriorSummary& s, int t, double floor = kVarianceFloor);

// mu_var_factual * tau_var / mu_var_counterfactual: rho's preference with
// mu's magnitude.
double score_mu_rho_bald(const PosteriorSummary& s, int t, double floor = kVarianceFloor);

// Probability that the effect's sign is uninformative, per posterior draw.
Eigen::VectorXd gamma_values(const Eigen::Ref<const Eigen::VectorXd>& tau_samples);

// Entropy of Bernoulli(p) in nats, with p clamped away from {0, 1}.
double bernoulli_entropy(double p);

// H(mean gamma) - mean H(gamma): mutual information between the
// uninformativeness bit and the posterior draw.
double bernoulli_mutual_information(const Eigen::Ref<const Eigen::VectorXd>& gammas);

double score_gamma_stype(const Eigen::Ref<const Eigen::VectorXd>& tau_samples);

// Gumbel-top-b draw without replacement: keys score/temperature + G with G
// standard Gumbel, the b largest keys win. Returns positions into the score
// vector. As temperature -> 0 this recovers exact top-b.
std::vector<int> select_batch_softmax(const AcquisitionScoreVector& scores, int batch_size,
                                      double temperature, std::uint64_t seed);

}  // namespace cbald
