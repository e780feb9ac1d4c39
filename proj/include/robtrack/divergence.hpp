#pragma once

#include <functional>
#include <span>

#include "robtrack/model.hpp"
#include "robtrack/types.hpp"

namespace robtrack {

/// Ambiguity set: all laws g whose divergence E_f[G(g/f)] from the nominal f
/// is at most eta. lambda = 0 selects the Kullback-Leibler member of the family.
struct DivergenceBall {
    double lambda = 0.1;
    double eta = 0.0;

    bool is_kl() const { return lambda == 0.0; }
    void validate() const;
};

/// Convex generator F(z) = (z^(lambda+1) - (lambda+1) z) / lambda, z > 0, lambda > 0.
double generator_F(double z, double lambda);

/// Pointwise divergence integrand in terms of the likelihood ratio e = g/f.
///   lambda > 0:  e^(lambda+1)/lambda - (lambda+1)/lambda * e + 1
///   lambda = 0:  e log e - e + 1
/// The weight function of the functional divergence is already folded in.
double scalar_G(double e, double lambda);

/// dG/de.
double scalar_G_deriv(double e, double lambda);

/// G evaluated from log(e), for ratios that would overflow if exponentiated
/// first. Returns +inf when G itself overflows.
double scalar_G_from_log(double log_e, double lambda);

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    Index n = 0;
};

/// Sample mean of G over likelihood-ratio values drawn under f.
McEstimate divergence_mc(std::span<const double> ratios, double lambda);

/// Same, evaluating the ratio at each row of `draws` (draws from f).
McEstimate divergence_mc(const MatrixCRef& draws,
                         const std::function<double(const VectorCRef&)>& ratio, double lambda);

/// Closed form between N(mu1, Sigma1) (nominal) and N(mu2, Sigma2) (actual).
/// Throws NumericalError when (lambda+1) Sigma2^-1 - lambda Sigma1^-1 is not
/// positive definite. lambda = 0 gives KL(N2 || N1).
double divergence_gaussian(const VectorCRef& mu1, const MatrixCRef& Sigma1, const VectorCRef& mu2,
                           const MatrixCRef& Sigma2, double lambda);

/// (exp(lambda (lambda+1)/2 * d^T Sigma^-1 d) - 1) / lambda with d = mu2 - mu1;
/// lambda = 0 gives half the squared Mahalanobis distance.
double divergence_gaussian_equal_cov(const VectorCRef& mu1, const VectorCRef& mu2,
                                     const MatrixCRef& Sigma, double lambda);

enum class KSign { Plus, Minus };

/// Mean-scaling factor k with divergence_gaussian_equal_cov(mu1, k mu1, Sigma1) = eta.
double k_from_eta(double eta, double lambda, const VectorCRef& mu1, const MatrixCRef& Sigma1,
                  KSign sign);

struct EtaEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    Index n = 0;
    bool overflow = false;  // some G(ratio) overflowed; estimate is +inf
};

/// Monte-Carlo radius E_f[G(g/f)] for two parametric laws, with the density
/// ratio formed in log space from draws of the nominal.
EtaEstimate eta_from_ratio_mc(const NominalModel& nominal, const NominalModel& actual,
                              double lambda, Index n, Seed seed);

}  // namespace robtrack
