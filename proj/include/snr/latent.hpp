#ifndef SNR_LATENT_HPP
#define SNR_LATENT_HPP

// Hidden-state laws: prior probabilities, posterior tables (joint over state
// vectors, pointwise marginals, forward-backward for Markov chains) and the
// conditional maximisation of alpha.

#include "snr/covariance.hpp"
#include "snr/model.hpp"
#include "snr/states.hpp"

#include <string>
#include <vector>

namespace snr {

/// n x J matrix of log P(z_{ik} = j) for the independent kinds; `design` is
/// the n x (M+1) covariate design for replicate k (ignored for Iid).
Matrix log_state_probs(const LatentParams& alpha, Index n, const Matrix* design = nullptr);

/// log p(z_k = s | alpha). -inf for impossible state vectors.
double log_prior(StateView s, const LatentParams& alpha, const Matrix* design = nullptr);

/// Per-point Gaussian log-likelihoods log N(y_ik; f_j(x_i), sigma_j^2) for a
/// diagonal covariance, as an n x J matrix for replicate k.
Matrix pointwise_loglik(const Dataset& data, Index k, const Matrix& F, const CovParams& cov);

/// Exact posterior over all J^n state vectors for every replicate, with the
/// marginals (and, for Markov, adjacent pairwise tables) derived from it.
/// Throws EnumerationTooLarge beyond `cap` and DegenerateLikelihood when a
/// replicate has zero probability under every state vector.
PosteriorTables joint_posterior(const Dataset& data, const Matrix& F, const CovStructure& cov,
                                const LatentParams& alpha, const StateSpace& space);

/// Pointwise Bayes rule for diagonal covariances with independent states.
PosteriorTables marginal_posterior(const Dataset& data, const Matrix& F, const CovParams& cov,
                                   const LatentParams& alpha);

/// Log-space forward-backward recursions for Markov states with a diagonal
/// covariance: marginals, adjacent pairwise posteriors and log p(y_k).
PosteriorTables forward_backward(const Dataset& data, const Matrix& F, const CovParams& cov,
                                 const LatentParams& alpha);

/// Marginal and pairwise tables implied by a joint table.
void marginalize_joint(PosteriorTables& post, const StateSpace& space, bool with_pairwise);

struct AlphaUpdate {
  LatentParams alpha;
  bool newton_diverged = false;
  int newton_steps = 0;
};

/// E(L2) = sum_k sum_i sum_j p_ik(j) log p_j(.) (independent kinds) or the
/// Markov analogue using first-position marginals and pairwise tables.
double expected_log_prior(const PosteriorTables& post, const LatentParams& alpha,
                          const Dataset& data);

/// Maximises E(L2) given posterior tables. Iid and Markov are closed-form;
/// Covariate runs Newton-Raphson with step halving from `previous`.
/// Markov rows with expected occupancy below 1e-12 are kept from `previous`.
AlphaUpdate update_alpha(const PosteriorTables& post, const LatentSpec& spec, const Dataset& data,
                         const LatentParams& previous, std::vector<std::string>* notes = nullptr);

/// Newton-Raphson for the multinomial logistic M-step alone. `weights[j]`
/// holds p_ik(j) as an N x n matrix.
AlphaUpdate fit_multinomial_logit(const std::vector<Matrix>& weights, const Dataset& data,
                                  const Matrix& start);

}  // namespace snr

#endif  // SNR_LATENT_HPP
