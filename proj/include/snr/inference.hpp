#ifndef SNR_INFERENCE_HPP
#define SNR_INFERENCE_HPP

// Louis observed information for the hidden-state parameters alpha, with
// gamma (functions and covariance) held at its estimate.
//
// Every path computes
//   I = E(-L2'' | y) - sum_k Cov(g_k | y_k),
// g_k being replicate k's complete-data score. At the MLE the sum of the
// conditional score means vanishes, so this is the usual
// E(-L2'') - E(L2' L2'^T); away from it the expression is still exactly the
// observed information of log p(y | alpha).
//
// Free coordinates: Iid p_1..p_{J-1}; Markov (J = 2) pi_1, a_12, a_21;
// Covariate (J = 2) the coefficients of the state-2 logit.

#include "snr/model.hpp"

namespace snr {

/// Exact enumeration over the joint posterior table (post.joint required).
/// Iid any J, Markov and Covariate with J = 2.
InformationMatrix louis_information_generic(const Dataset& data, const LatentParams& alpha,
                                            const PosteriorTables& post);

/// Closed-form Iid matrices from the state-count moments of the joint table.
InformationMatrix louis_information_iid_closed(const Dataset& data, const LatentParams& alpha,
                                               const PosteriorTables& post);

/// Markov J = 2: diagonal closed-form expected curvature plus the enumerated
/// score covariance. Throws BoundaryParameter when pi_1, a_12 or a_21 is
/// within 1e-8 of 0 or 1.
InformationMatrix louis_information_markov_closed(const Dataset& data, const LatentParams& alpha,
                                                  const PosteriorTables& post);

/// Independent states whose posterior factorises over points (diagonal
/// covariance): uses the marginal tables only. Iid any J, Covariate J = 2.
InformationMatrix louis_information_pointwise(const Dataset& data, const LatentParams& alpha,
                                              const PosteriorTables& post);

/// Covariate J = 2; pointwise when there is no joint table, generic otherwise.
InformationMatrix louis_information_covariate(const Dataset& data, const LatentParams& alpha,
                                              const PosteriorTables& post);

/// Picks the path for alpha.kind and finishes the matrix. `factorized` says
/// whether the posterior of each replicate is a product over points. The
/// builders above return the information only.
InformationMatrix louis_information(const Dataset& data, const LatentParams& alpha,
                                    const PosteriorTables& post, bool factorized);

/// Fills covariance and se from the information matrix. Throws
/// SingularInformation when it is not positive definite.
void finish_information(InformationMatrix& info);

std::vector<std::string> alpha_coordinate_names(const LatentParams& alpha);
Vector alpha_coordinates(const LatentParams& alpha);

}  // namespace snr

#endif  // SNR_INFERENCE_HPP
