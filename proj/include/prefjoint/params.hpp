#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "prefjoint/spde.hpp"

namespace prefjoint {

// Full fixed-effect / covariance parameter vector theta.
// Positive parameters live on the log scale (estimation scale).
// Catchability of the reference vessel is fixed at 1 and not stored;
// log_catchability holds vessels 2..J and is empty when J = 1.
struct HyperParams {
  double alpha_prime = 0.0;   // presence intercept (logit scale)
  double alpha = 0.0;         // biomass intercept (log scale)
  double alpha_dprime = 0.0;  // point-process intercept (log scale)
  double beta_prime = 0.0;    // preferential degree on presence field V
  double beta = 0.0;          // preferential degree on biomass field U
  double log_kappa_v = 0.0;
  double log_tau_v = 0.0;
  double log_kappa_u = 0.0;
  double log_tau_u = 0.0;
  double log_upsilon = 0.0;
  std::vector<double> log_catchability;

  double upsilon() const { return std::exp(log_upsilon); }
  MaternConfig matern_v() const { return {1.0, std::exp(log_kappa_v), std::exp(log_tau_v)}; }
  MaternConfig matern_u() const { return {1.0, std::exp(log_kappa_u), std::exp(log_tau_u)}; }

  int n_vessels() const { return 1 + static_cast<int>(log_catchability.size()); }
  // Multiplicative catchability of vessel j (1-based; vessel 1 is reference).
  double catchability(int vessel) const {
    return vessel <= 1 ? 1.0 : std::exp(log_catchability[vessel - 2]);
  }
};

// Node-indexed values of the two latent GMRFs.
struct LatentFields {
  Eigen::VectorXd v;  // presence field
  Eigen::VectorXd u;  // biomass field
};

}  // namespace prefjoint
