#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <algorithm>
#include <array>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "prefjoint/dataset.hpp"
#include "prefjoint/errors.hpp"
#include "prefjoint/grid.hpp"
#include "prefjoint/params.hpp"
#include "prefjoint/spde.hpp"

namespace prefjoint {

enum class ModelKind { fid_only, fdd_only, joint };

inline const char* to_string(ModelKind m) {
  switch (m) {
    case ModelKind::fid_only: return "fid";
    case ModelKind::fdd_only: return "fdd";
    default: return "joint";
  }
}

struct NllBreakdown {
  double gamma = 0.0;
  double bernoulli = 0.0;
  double ipp = 0.0;
  double gmrf_u = 0.0;
  double gmrf_v = 0.0;
  double total = 0.0;

  void sum_up() { total = gamma + bernoulli + ipp + gmrf_u + gmrf_v; }
  bool finite() const { return std::isfinite(total); }
};

inline double log1p_exp(double x) {
  // log(1 + e^x), stable for large |x|
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Negative Bernoulli log-likelihood from linear predictors (logit scale).
inline double nll_bernoulli_logit(const Eigen::VectorXd& z, const Eigen::VectorXd& eta) {
  if (z.size() != eta.size()) throw std::invalid_argument("nll_bernoulli: size mismatch");
  double nll = 0.0;
  for (int i = 0; i < z.size(); ++i) nll += log1p_exp(eta[i]) - z[i] * eta[i];
  return nll;
}

// Probability-scale wrapper; the joint evaluation always goes through the
// predictor form above, so pi in (0,1) is enforced here only.
inline double nll_bernoulli(const Eigen::VectorXd& z, const Eigen::VectorXd& pi) {
  if (z.size() != pi.size()) throw std::invalid_argument("nll_bernoulli: size mismatch");
  Eigen::VectorXd eta(pi.size());
  for (int i = 0; i < pi.size(); ++i) {
    if (!(pi[i] > 0.0 && pi[i] < 1.0))
      throw std::invalid_argument("nll_bernoulli: pi must lie in (0,1)");
    eta[i] = std::log(pi[i]) - std::log1p(-pi[i]);
  }
  return nll_bernoulli_logit(z, eta);
}

// Gamma with mean mu_i and common sd upsilon: shape mu^2/ups^2, rate mu/ups^2.
inline double gamma_logpdf(double y, double mu, double upsilon) {
  const double ups2 = upsilon * upsilon;
  const double a = mu * mu / ups2;
  const double r = mu / ups2;
  return a * std::log(r) - std::lgamma(a) + (a - 1.0) * std::log(y) - r * y;
}

inline double nll_gamma(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double upsilon) {
  if (y.size() != mu.size()) throw std::invalid_argument("nll_gamma: size mismatch");
  if (!(upsilon > 0.0)) throw std::invalid_argument("nll_gamma: upsilon must be positive");
  double nll = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) throw std::invalid_argument("nll_gamma: y must be positive");
    if (!(mu[i] > 0.0)) throw std::invalid_argument("nll_gamma: mu must be positive");
    nll -= gamma_logpdf(y[i], mu[i], upsilon);
  }
  return nll;
}

// d/dm and d^2/dm^2 of the Gamma log-density, m = log mu.
struct GammaLinkDerivs {
  double d1 = 0.0;
  double d2 = 0.0;
};

namespace detail {

// Asymptotic branches keep extreme line-search iterates from throwing inside
// Boost; a possible inf propagates into the Hessian and is rejected there.
inline double digamma_safe(double a) {
  if (a < 1e-8) return -1.0 / a - 0.57721566490153286;
  return boost::math::digamma(a);
}

inline double trigamma_safe(double a) {
  if (a < 1e-8) return 1.0 / (a * a);
  return boost::math::trigamma(a);
}

}  // namespace detail

inline GammaLinkDerivs gamma_logpdf_derivs(double y, double mu, double upsilon) {
  const double ups2 = upsilon * upsilon;
  const double a = mu * mu / ups2;
  const double r = mu / ups2;
  const double core = std::log(r) - detail::digamma_safe(a) + std::log(y);
  GammaLinkDerivs d;
  d.d1 = 2.0 * a * core + a - r * y;
  d.d2 = 4.0 * a * core + 4.0 * a - 4.0 * a * a * detail::trigamma_safe(a) - r * y;
  return d;
}

// Negative Gaussian log-density with sparse precision Q:
//   nll = (N/2) log(2 pi) - (1/2) log|Q| + (1/2) w'Qw
inline double nll_gmrf(const Eigen::VectorXd& w, const SparsePrecision& Q) {
  if (w.size() != Q.dimension()) throw std::invalid_argument("nll_gmrf: size mismatch");
  const double quad = w.dot(Q.matrix() * w);
  const int n = Q.dimension();
  return 0.5 * (n * std::log(2.0 * M_PI) - Q.log_det() + quad);
}

// zeta_ij = k_j * mu_i per Eq.-(5)-style vessel catchability; vessel 1 is the
// reference with k = 1.
inline Eigen::VectorXd apply_catchability(const Eigen::VectorXd& mu,
                                          std::span<const int> vessel_ids,
                                          std::span<const double> k) {
  if (static_cast<int>(vessel_ids.size()) != mu.size())
    throw std::invalid_argument("apply_catchability: size mismatch");
  if (k.empty() || k[0] != 1.0)
    throw std::invalid_argument("apply_catchability: k[0] (reference vessel) must be 1");
  Eigen::VectorXd out(mu.size());
  for (int i = 0; i < mu.size(); ++i) {
    const int j = vessel_ids[i];
    if (j < 1 || j > static_cast<int>(k.size()))
      throw std::invalid_argument("apply_catchability: unknown vessel id " + std::to_string(j) +
                                  " at row " + std::to_string(i));
    out[i] = k[j - 1] * mu[i];
  }
  return out;
}

// Per-observation bilinear footprint; compact form of a Projection row.
struct ObsStencil {
  std::array<int, 4> node{};
  std::array<double, 4> weight{};
  int size = 0;
  double at(const Eigen::VectorXd& field) const {
    double s = 0.0;
    for (int j = 0; j < size; ++j) s += weight[j] * field[node[j]];
    return s;
  }
};

// Model-variant view of a Dataset on a grid: canonical row order, projection
// stencils, masks, and node quadrature weights. Grid-free by construction so
// toy problems can assemble it directly.
struct ModelAssembly {
  int n_nodes = 0;
  bool include_ipp = true;
  int n_vessels = 1;

  std::vector<ObsStencil> proj;  // one per retained observation
  Eigen::VectorXd z;             // presence indicator per row
  std::vector<int> pos_rows;     // rows with z == 1
  Eigen::VectorXd y_pos;         // biomass for pos_rows
  std::vector<int> vessel_pos;   // 1-based vessel per pos_row
  std::vector<int> ipp_rows;     // rows entering the point-process term
  Eigen::VectorXd quad_weight;   // node quadrature weights (IPP integral)
};

inline ModelAssembly assemble(const Dataset& data, const GridSpec& grid, ModelKind model) {
  data.validate();
  ModelAssembly a;
  a.n_nodes = grid.n_nodes();
  a.include_ipp = model != ModelKind::fid_only;
  a.quad_weight = grid.quad_weights();

  std::vector<const Observation*> rows;
  rows.reserve(data.obs.size());
  for (const auto& o : data.obs) {
    if (model == ModelKind::fid_only && o.source != Source::fid) continue;
    if (model == ModelKind::fdd_only && o.source != Source::fdd) continue;
    rows.push_back(&o);
  }
  // Canonical order makes every downstream sum independent of input row order.
  std::sort(rows.begin(), rows.end(), [](const Observation* l, const Observation* r) {
    const double lv = l->value.value_or(0.0), rv = r->value.value_or(0.0);
    return std::tie(l->source, l->location.x, l->location.y, l->z, lv, l->vessel_id) <
           std::tie(r->source, r->location.x, r->location.y, r->z, rv, r->vessel_id);
  });

  const int n = static_cast<int>(rows.size());
  a.proj.resize(n);
  a.z.resize(n);
  int max_vessel = 1;
  for (int i = 0; i < n; ++i) {
    const Observation& o = *rows[i];
    const BilinearStencil s = bilinear_weights(grid, o.location);
    a.proj[i].size = s.size;
    for (int j = 0; j < s.size; ++j) {
      a.proj[i].node[j] = s.node[j];
      a.proj[i].weight[j] = s.weight[j];
    }
    a.z[i] = o.z;
    if (o.z == 1) {
      a.pos_rows.push_back(i);
      a.y_pos.conservativeResize(a.y_pos.size() + 1);
      a.y_pos[a.y_pos.size() - 1] = *o.value;
      a.vessel_pos.push_back(std::max(1, o.vessel_id));
    }
    if (a.include_ipp && o.source == Source::fdd) a.ipp_rows.push_back(i);
    max_vessel = std::max(max_vessel, o.vessel_id);
  }
  a.n_vessels = max_vessel;
  return a;
}

// Five-component joint negative log-likelihood at fixed theta, with analytic
// gradient and sparse Hessian in the 2N latent values w = [v; u].
// Precision matrices and their factorizations are cached per construction.
class JointEvaluator {
public:
  JointEvaluator(const HyperParams& theta, std::shared_ptr<const ModelAssembly> assembly,
                 SparsePrecision q_v, SparsePrecision q_u)
      : theta_(theta), asm_ptr_(std::move(assembly)), asm_(*asm_ptr_), q_v_(std::move(q_v)),
        q_u_(std::move(q_u)) {
    if (q_v_.dimension() != asm_.n_nodes || q_u_.dimension() != asm_.n_nodes)
      throw std::invalid_argument("JointEvaluator: precision dimension mismatch");
    if (theta_.n_vessels() < asm_.n_vessels)
      throw std::invalid_argument("JointEvaluator: missing catchability parameters");
    log_k_pos_.resize(asm_.pos_rows.size());
    for (std::size_t i = 0; i < asm_.pos_rows.size(); ++i)
      log_k_pos_[i] = std::log(theta_.catchability(asm_.vessel_pos[i]));
  }

  JointEvaluator(const HyperParams& theta, ModelAssembly assembly, SparsePrecision q_v,
                 SparsePrecision q_u)
      : JointEvaluator(theta, std::make_shared<const ModelAssembly>(std::move(assembly)),
                       std::move(q_v), std::move(q_u)) {}

  int n_nodes() const { return asm_.n_nodes; }
  int n_latent() const { return 2 * asm_.n_nodes; }
  const HyperParams& theta() const { return theta_; }
  const ModelAssembly& assembly() const { return asm_; }
  const SparsePrecision& precision_v() const { return q_v_; }
  const SparsePrecision& precision_u() const { return q_u_; }

  // Breakdown may carry +inf when the IPP predictor guard |eta| > 50 trips;
  // the inner optimizer rejects such iterates in its line search.
  NllBreakdown nll(const Eigen::VectorXd& w) const {
    check(w);
    const int N = asm_.n_nodes;
    const auto v = w.head(N);
    const auto u = w.tail(N);
    NllBreakdown b;
    b.gmrf_v = nll_gmrf(v, q_v_);
    b.gmrf_u = nll_gmrf(u, q_u_);

    for (std::size_t i = 0; i < asm_.proj.size(); ++i) {
      const double eta = theta_.alpha_prime + asm_.proj[i].at(v);
      b.bernoulli += log1p_exp(eta) - asm_.z[i] * eta;
    }

    const double ups = theta_.upsilon();
    for (std::size_t i = 0; i < asm_.pos_rows.size(); ++i) {
      const int row = asm_.pos_rows[i];
      const double mu = std::exp(theta_.alpha + asm_.proj[row].at(u) + log_k_pos_[i]);
      b.gamma -= gamma_logpdf(asm_.y_pos[i], mu, ups);
    }

    if (asm_.include_ipp) b.ipp = ipp_nll(v, u);
    b.sum_up();
    return b;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    check(w);
    const int N = asm_.n_nodes;
    const auto v = w.head(N);
    const auto u = w.tail(N);
    Eigen::VectorXd g(2 * N);
    g.head(N) = q_v_.matrix() * v;
    g.tail(N) = q_u_.matrix() * u;

    for (std::size_t i = 0; i < asm_.proj.size(); ++i) {
      const ObsStencil& s = asm_.proj[i];
      const double eta = theta_.alpha_prime + s.at(v);
      const double resid = sigmoid(eta) - asm_.z[i];
      for (int j = 0; j < s.size; ++j) g[s.node[j]] += resid * s.weight[j];
    }

    const double ups = theta_.upsilon();
    for (std::size_t i = 0; i < asm_.pos_rows.size(); ++i) {
      const ObsStencil& s = asm_.proj[asm_.pos_rows[i]];
      const double mu = std::exp(theta_.alpha + s.at(u) + log_k_pos_[i]);
      const double d1 = gamma_logpdf_derivs(asm_.y_pos[i], mu, ups).d1;
      for (int j = 0; j < s.size; ++j) g[N + s.node[j]] -= d1 * s.weight[j];
    }

    if (asm_.include_ipp) {
      const Eigen::ArrayXd lamw = ipp_lambda_weighted(v, u);
      g.head(N) += (theta_.beta_prime * lamw).matrix();
      g.tail(N) += (theta_.beta * lamw).matrix();
      for (const int row : asm_.ipp_rows) {
        const ObsStencil& s = asm_.proj[row];
        for (int j = 0; j < s.size; ++j) {
          g[s.node[j]] -= theta_.beta_prime * s.weight[j];
          g[N + s.node[j]] -= theta_.beta * s.weight[j];
        }
      }
    }
    return g;
  }

  // Exact (possibly indefinite) Hessian; the sparsity pattern is constant
  // across calls for fixed assembly, as required for factorization reuse.
  Eigen::SparseMatrix<double> hessian(const Eigen::VectorXd& w) const {
    check(w);
    const int N = asm_.n_nodes;
    const auto v = w.head(N);
    const auto u = w.tail(N);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(q_v_.matrix().nonZeros() + q_u_.matrix().nonZeros() +
                                           32 * asm_.proj.size() + 4 * N));
    append_block(trips, q_v_.matrix(), 0, 0);
    append_block(trips, q_u_.matrix(), N, N);

    for (std::size_t i = 0; i < asm_.proj.size(); ++i) {
      const ObsStencil& s = asm_.proj[i];
      const double p = sigmoid(theta_.alpha_prime + s.at(v));
      const double curv = p * (1.0 - p);
      for (int a = 0; a < s.size; ++a)
        for (int b = 0; b < s.size; ++b)
          trips.emplace_back(s.node[a], s.node[b], curv * s.weight[a] * s.weight[b]);
    }

    const double ups = theta_.upsilon();
    for (std::size_t i = 0; i < asm_.pos_rows.size(); ++i) {
      const ObsStencil& s = asm_.proj[asm_.pos_rows[i]];
      const double mu = std::exp(theta_.alpha + s.at(u) + log_k_pos_[i]);
      const double curv = -gamma_logpdf_derivs(asm_.y_pos[i], mu, ups).d2;
      for (int a = 0; a < s.size; ++a)
        for (int b = 0; b < s.size; ++b)
          trips.emplace_back(N + s.node[a], N + s.node[b], curv * s.weight[a] * s.weight[b]);
    }

    if (asm_.include_ipp) {
      const Eigen::ArrayXd lamw = ipp_lambda_weighted(v, u);
      const double bp = theta_.beta_prime, bb = theta_.beta;
      for (int k = 0; k < N; ++k) {
        trips.emplace_back(k, k, bp * bp * lamw[k]);
        trips.emplace_back(N + k, N + k, bb * bb * lamw[k]);
        trips.emplace_back(k, N + k, bp * bb * lamw[k]);
        trips.emplace_back(N + k, k, bp * bb * lamw[k]);
      }
    }

    Eigen::SparseMatrix<double> H(2 * N, 2 * N);
    H.setFromTriplets(trips.begin(), trips.end());
    H.makeCompressed();
    return H;
  }

  // Point-process term in isolation (for the public nll_ipp surface).
  double ipp_nll(const Eigen::VectorXd& v, const Eigen::VectorXd& u) const {
    double nll = omega(v, u);
    for (const int row : asm_.ipp_rows) {
      const ObsStencil& s = asm_.proj[row];
      const double eta = theta_.alpha_dprime + theta_.beta_prime * s.at(v) + theta_.beta * s.at(u);
      if (std::abs(eta) > 50.0) return std::numeric_limits<double>::infinity();
      nll -= eta;
    }
    return nll;
  }

  double omega(const Eigen::VectorXd& v, const Eigen::VectorXd& u) const {
    double om = 0.0;
    for (int k = 0; k < asm_.n_nodes; ++k) {
      const double eta = theta_.alpha_dprime + theta_.beta_prime * v[k] + theta_.beta * u[k];
      if (std::abs(eta) > 50.0) return std::numeric_limits<double>::infinity();
      om += std::exp(eta) * asm_.quad_weight[k];
    }
    return om;
  }

private:
  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  void check(const Eigen::VectorXd& w) const {
    if (w.size() != 2 * asm_.n_nodes)
      throw std::invalid_argument("JointEvaluator: latent vector must have length 2N");
  }

  Eigen::ArrayXd ipp_lambda_weighted(const Eigen::VectorXd& v, const Eigen::VectorXd& u) const {
    Eigen::ArrayXd lamw(asm_.n_nodes);
    for (int k = 0; k < asm_.n_nodes; ++k) {
      const double eta = theta_.alpha_dprime + theta_.beta_prime * v[k] + theta_.beta * u[k];
      lamw[k] = std::exp(std::min(eta, 50.0)) * asm_.quad_weight[k];
    }
    return lamw;
  }

  static void append_block(std::vector<Eigen::Triplet<double>>& trips,
                           const Eigen::SparseMatrix<double>& M, int row0, int col0) {
    for (int c = 0; c < M.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(M, c); it; ++it)
        trips.emplace_back(row0 + static_cast<int>(it.row()), col0 + static_cast<int>(it.col()),
                           it.value());
  }

  HyperParams theta_;
  std::shared_ptr<const ModelAssembly> asm_ptr_;
  const ModelAssembly& asm_;
  SparsePrecision q_v_, q_u_;
  std::vector<double> log_k_pos_;
};

// Convenience surfaces matching the spec operations.

inline JointEvaluator make_evaluator(const HyperParams& theta, const Dataset& data,
                                     const GridSpec& grid, ModelKind model = ModelKind::joint) {
  return JointEvaluator(theta, assemble(data, grid, model), build_precision(grid, theta.matern_v()),
                        build_precision(grid, theta.matern_u()));
}

inline NllBreakdown joint_nll(const HyperParams& theta, const LatentFields& latents,
                              const Dataset& data, const GridSpec& grid,
                              ModelKind model = ModelKind::joint) {
  const JointEvaluator eval = make_evaluator(theta, data, grid, model);
  Eigen::VectorXd w(2 * grid.n_nodes());
  w.head(grid.n_nodes()) = latents.v;
  w.tail(grid.n_nodes()) = latents.u;
  return eval.nll(w);
}

// IPP component of the joint likelihood for a set of FDD locations; throws
// numerical_error when the predictor guard trips.
inline double nll_ipp(std::span<const Point> fdd_locations, const Eigen::VectorXd& v,
                      const Eigen::VectorXd& u, const HyperParams& theta, const GridSpec& grid) {
  Dataset d;
  d.obs.reserve(fdd_locations.size());
  for (const auto& p : fdd_locations)
    d.obs.push_back(Observation{p, 0, std::nullopt, Source::fdd, 0});
  const ModelAssembly a = assemble(d, grid, ModelKind::fdd_only);
  const JointEvaluator eval(theta, a, build_precision(grid, theta.matern_v()),
                            build_precision(grid, theta.matern_u()));
  const double nll = eval.ipp_nll(v, u);
  if (!std::isfinite(nll))
    throw numerical_error("nll_ipp: linear predictor magnitude exceeded 50");
  return nll;
}

}  // namespace prefjoint
