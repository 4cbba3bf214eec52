#pragma once

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefjoint/errors.hpp"
#include "prefjoint/grid.hpp"

namespace prefjoint {

// Matern internal parameterization; smoothness fixed at nu = 1 throughout.
struct MaternConfig {
  double nu = 1.0;
  double kappa = 1.0;  // inverse-range scale, > 0
  double tau = 1.0;    // precision scale, > 0
};

struct MaternInterpretable {
  double phi = 1.0;    // spatial range
  double sigma = 1.0;  // marginal standard deviation
};

inline void validate(const MaternConfig& m) {
  if (!(m.kappa > 0.0) || !(m.tau > 0.0))
    throw std::invalid_argument("MaternConfig: kappa and tau must be positive");
}

// Matern nu=1 correlation rho(d) = kappa*d * K1(kappa*d).
inline double matern_correlation(double d, double kappa) {
  if (d < 0.0) throw std::invalid_argument("matern_correlation: negative distance");
  if (!(kappa > 0.0)) throw std::invalid_argument("matern_correlation: kappa must be positive");
  if (d == 0.0) return 1.0;
  const double x = kappa * d;
  if (x > 650.0) return 0.0;  // K1 underflows
  return x * boost::math::cyl_bessel_k(1.0, x);
}

// phi = sqrt(8 nu)/kappa, sigma = sqrt(G(nu)) / (sqrt(G(nu+1)) kappa^nu tau sqrt(4 pi)).
inline MaternInterpretable reparam_internal_to_interpretable(const MaternConfig& m) {
  validate(m);
  const double phi = std::sqrt(8.0 * m.nu) / m.kappa;
  const double sigma = std::sqrt(std::tgamma(m.nu)) /
                       (std::sqrt(std::tgamma(m.nu + 1.0)) * std::pow(m.kappa, m.nu) *
                        m.tau * std::sqrt(4.0 * M_PI));
  return {phi, sigma};
}

inline MaternConfig reparam_interpretable_to_internal(double phi, double sigma) {
  if (!(phi > 0.0) || !(sigma > 0.0))
    throw std::invalid_argument("reparam: phi and sigma must be positive");
  MaternConfig m;
  m.nu = 1.0;
  m.kappa = std::sqrt(8.0 * m.nu) / phi;
  m.tau = std::sqrt(std::tgamma(m.nu)) /
          (std::sqrt(std::tgamma(m.nu + 1.0)) * std::pow(m.kappa, m.nu) * sigma *
           std::sqrt(4.0 * M_PI));
  return m;
}

// Symmetric positive-definite sparse precision with a shared cached
// factorization; immutable after construction. The logdet_only variant skips
// the simplicial factor for hot paths that never solve or sample.
class SparsePrecision {
public:
  using Factor = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;

  SparsePrecision() = default;

  explicit SparsePrecision(Eigen::SparseMatrix<double> q, std::string context = {})
      : q_(std::make_shared<Eigen::SparseMatrix<double>>(std::move(q))) {
    q_->makeCompressed();
    auto fact = std::make_shared<Factor>();
    fact->compute(*q_);
    if (fact->info() != Eigen::Success || fact->vectorD().minCoeff() <= 0.0)
      throw numerical_error("SparsePrecision: Cholesky factorization failed" +
                            (context.empty() ? "" : " (" + context + ")"));
    factor_ = std::move(fact);
    log_det_ = factor_->vectorD().array().log().sum();
  }

  static SparsePrecision logdet_only(Eigen::SparseMatrix<double> q, double log_det) {
    SparsePrecision p;
    p.q_ = std::make_shared<Eigen::SparseMatrix<double>>(std::move(q));
    p.q_->makeCompressed();
    p.log_det_ = log_det;
    return p;
  }

  int dimension() const { return q_ ? static_cast<int>(q_->rows()) : 0; }
  const Eigen::SparseMatrix<double>& matrix() const { return *q_; }
  bool has_factor() const { return static_cast<bool>(factor_); }
  const Factor& factor() const {
    if (!factor_) throw numerical_error("SparsePrecision: no factorization available");
    return *factor_;
  }
  double log_det() const { return log_det_; }

private:
  std::shared_ptr<Eigen::SparseMatrix<double>> q_;
  std::shared_ptr<Factor> factor_;
  double log_det_ = 0.0;
};

namespace detail {

// 1D stiffness/lumped-mass pair for linear elements with zero-flux boundary.
inline void stiffness_1d(int n, double h, std::vector<double>& diag, double& off) {
  diag.assign(n, 2.0 / h);
  diag.front() = diag.back() = 1.0 / h;
  off = -1.0 / h;
}

inline std::vector<double> lumped_mass_1d(int n, double h) {
  std::vector<double> c(n, h);
  c.front() = c.back() = 0.5 * h;
  return c;
}

}  // namespace detail

// SPDE lattice precision matrix for the Matern nu=1 field:
//   Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^-1 G)
// with C the lumped (trapezoid) mass diagonal and G the 5-point stiffness
// G = G1x (x) C1y + C1x (x) G1y under zero-flux boundary conditions.
inline Eigen::SparseMatrix<double> spde_precision_matrix(const GridSpec& g,
                                                         const MaternConfig& m) {
  validate(m);
  if (g.nx < 2 || g.ny < 2) throw std::invalid_argument("build_precision: grid too small");
  const int nx = g.nx, ny = g.ny, n = g.n_nodes();

  std::vector<double> gx_diag, gy_diag;
  double gx_off, gy_off;
  detail::stiffness_1d(nx, g.dx(), gx_diag, gx_off);
  detail::stiffness_1d(ny, g.dy(), gy_diag, gy_off);
  const std::vector<double> cx = detail::lumped_mass_1d(nx, g.dx());
  const std::vector<double> cy = detail::lumped_mass_1d(ny, g.dy());

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(5 * n));
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const int k = iy * nx + ix;
      trips.emplace_back(k, k, gx_diag[ix] * cy[iy] + cx[ix] * gy_diag[iy]);
      if (ix + 1 < nx) {
        trips.emplace_back(k, k + 1, gx_off * cy[iy]);
        trips.emplace_back(k + 1, k, gx_off * cy[iy]);
      }
      if (iy + 1 < ny) {
        trips.emplace_back(k, k + nx, cx[ix] * gy_off);
        trips.emplace_back(k + nx, k, cx[ix] * gy_off);
      }
    }
  }
  Eigen::SparseMatrix<double> G(n, n);
  G.setFromTriplets(trips.begin(), trips.end());

  Eigen::VectorXd c_inv(n);
  Eigen::SparseMatrix<double> C(n, n);
  C.reserve(Eigen::VectorXi::Constant(n, 1));
  for (int k = 0; k < n; ++k) {
    const double ck = g.quad_weight(k);
    C.insert(k, k) = ck;
    c_inv[k] = 1.0 / ck;
  }
  C.makeCompressed();

  const double t2 = m.tau * m.tau;
  const double k2 = m.kappa * m.kappa;
  Eigen::SparseMatrix<double> GCG = G * c_inv.asDiagonal() * G;
  Eigen::SparseMatrix<double> Q = t2 * (k2 * k2 * C + 2.0 * k2 * G + GCG);
  return Eigen::SparseMatrix<double>(Q.selfadjointView<Eigen::Lower>());
}

inline SparsePrecision build_precision(const GridSpec& g, const MaternConfig& m) {
  return SparsePrecision(spde_precision_matrix(g, m),
                         "kappa=" + std::to_string(m.kappa) + " tau=" + std::to_string(m.tau));
}

inline SparsePrecision build_precision(const GridSpec& g, const MaternInterpretable& p) {
  return build_precision(g, reparam_interpretable_to_internal(p.phi, p.sigma));
}

}  // namespace prefjoint
