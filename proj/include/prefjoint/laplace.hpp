#pragma once

#include <Eigen/Cholesky>
#include <Eigen/CholmodSupport>
#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prefjoint/dataset.hpp"
#include "prefjoint/errors.hpp"
#include "prefjoint/grid.hpp"
#include "prefjoint/likelihood.hpp"
#include "prefjoint/params.hpp"
#include "prefjoint/selected_inverse.hpp"
#include "prefjoint/spde.hpp"

namespace prefjoint {

struct FitConfig {
  double inner_tol = 1e-8;      // gradient max-norm threshold for the latent mode
  int inner_max_iter = 100;
  double outer_tol = 1e-6;      // relative parameter/objective convergence
  int outer_max_iter = 500;
  double fd_step = 1e-4;        // relative step for outer central differences
  double se_fd_step = 1e-3;     // relative step for the outer Hessian
  double outer_grad_tol = 1e-2; // first-order condition backing the converged flag
  bool compute_std_errors = true;
  bool compute_latent_se = true;

  void validate() const {
    if (!(inner_tol > 0.0 && outer_tol > 0.0 && fd_step > 0.0 && se_fd_step > 0.0 &&
          outer_grad_tol > 0.0))
      throw std::invalid_argument("FitConfig: tolerances must be positive");
    if (inner_max_iter < 1 || outer_max_iter < 1)
      throw std::invalid_argument("FitConfig: iteration caps must be >= 1");
  }
};

// Packing order of free parameters for a model variant; positive parameters
// are estimated on the log scale, so the outer problem is unconstrained.
struct ParamLayout {
  bool has_ipp = true;
  int n_vessels = 1;
  std::vector<std::string> names;

  static ParamLayout make(bool has_ipp, int n_vessels) {
    ParamLayout l;
    l.has_ipp = has_ipp;
    l.n_vessels = n_vessels;
    l.names = {"alpha_prime", "alpha"};
    if (has_ipp) {
      l.names.insert(l.names.end(), {"alpha_dprime", "beta_prime", "beta"});
    }
    l.names.insert(l.names.end(),
                   {"log_kappa_v", "log_tau_v", "log_kappa_u", "log_tau_u", "log_upsilon"});
    for (int j = 2; j <= n_vessels; ++j) l.names.push_back("log_k_" + std::to_string(j));
    return l;
  }

  int size() const { return static_cast<int>(names.size()); }

  Eigen::VectorXd pack(const HyperParams& t) const {
    Eigen::VectorXd x(size());
    int i = 0;
    x[i++] = t.alpha_prime;
    x[i++] = t.alpha;
    if (has_ipp) {
      x[i++] = t.alpha_dprime;
      x[i++] = t.beta_prime;
      x[i++] = t.beta;
    }
    x[i++] = t.log_kappa_v;
    x[i++] = t.log_tau_v;
    x[i++] = t.log_kappa_u;
    x[i++] = t.log_tau_u;
    x[i++] = t.log_upsilon;
    for (int j = 2; j <= n_vessels; ++j) x[i++] = t.log_catchability[j - 2];
    return x;
  }

  HyperParams unpack(const Eigen::VectorXd& x) const {
    HyperParams t;
    int i = 0;
    t.alpha_prime = x[i++];
    t.alpha = x[i++];
    if (has_ipp) {
      t.alpha_dprime = x[i++];
      t.beta_prime = x[i++];
      t.beta = x[i++];
    }
    t.log_kappa_v = x[i++];
    t.log_tau_v = x[i++];
    t.log_kappa_u = x[i++];
    t.log_tau_u = x[i++];
    t.log_upsilon = x[i++];
    t.log_catchability.assign(n_vessels > 1 ? n_vessels - 1 : 0, 0.0);
    for (int j = 2; j <= n_vessels; ++j) t.log_catchability[j - 2] = x[i++];
    return t;
  }
};

struct FitResult {
  ModelKind model = ModelKind::joint;
  GridSpec grid;
  ParamLayout layout;
  HyperParams theta_hat;
  Eigen::VectorXd estimates;   // estimation scale, layout order
  Eigen::VectorXd std_errors;  // NaN where unavailable
  // Interpretable transforms of the covariance parameters (+ delta-method SEs).
  double phi_v_hat = 0, sigma_v_hat = 0, phi_u_hat = 0, sigma_u_hat = 0;
  double se_phi_v = std::numeric_limits<double>::quiet_NaN();
  double se_sigma_v = std::numeric_limits<double>::quiet_NaN();
  double se_phi_u = std::numeric_limits<double>::quiet_NaN();
  double se_sigma_u = std::numeric_limits<double>::quiet_NaN();
  LatentFields latent_modes;
  Eigen::VectorXd latent_se_v, latent_se_u;  // empty when not computed
  double nll_marginal = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  double outer_grad_norm = std::numeric_limits<double>::quiet_NaN();
  double inner_grad_norm = std::numeric_limits<double>::quiet_NaN();
  int outer_iterations = 0;
  long nll_evaluations = 0;
  std::vector<std::string> warnings;
};

// Reusable symbolic factorization of the inner Hessian (pattern is constant
// for a fixed assembly across both latent values and theta). CHOLMOD
// simplicial LDLT with METIS ordering; an indefinite factor surfaces as a
// non-finite log-determinant.
struct InnerSolver {
  Eigen::CholmodSimplicialLDLT<Eigen::SparseMatrix<double>> llt;
  bool analyzed = false;
  bool ready = false;    // holds a successful factorization from some iterate
  double delta_hint = 0.0;  // carry the working inflation across iterations

  // Factorizes H (+ delta I with doubling on indefiniteness); returns the
  // applied delta.
  double factorize(Eigen::SparseMatrix<double>& H) {
    if (!analyzed) {
      llt.cholmod().print = 0;  // silence not-positive-definite warnings
      llt.cholmod().nmethods = 1;
      llt.cholmod().method[0].ordering = CHOLMOD_METIS;
      llt.analyzePattern(H);
      analyzed = true;
    }
    double delta = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      llt.factorize(H);
      if (llt.info() == Eigen::Success && std::isfinite(llt.logDeterminant())) {
        ready = true;
        delta_hint = delta * 0.25;
        return delta;
      }
      const double add =
          delta == 0.0 ? std::max(delta_hint, 1e-8 * diag_scale(H)) : delta;
      for (int k = 0; k < H.rows(); ++k) H.coeffRef(k, k) += add;
      delta += add;
    }
    ready = false;
    throw numerical_error("inner solver: Hessian regularization failed");
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt.solve(b); }
  double log_det() const { return llt.logDeterminant(); }

  static double diag_scale(const Eigen::SparseMatrix<double>& H) {
    double s = 0.0;
    for (int k = 0; k < H.rows(); ++k) s = std::max(s, std::abs(H.coeff(k, k)));
    return s > 0.0 ? s : 1.0;
  }
};

struct InnerResult {
  Eigen::VectorXd mode;
  NllBreakdown nll;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double log_det_h = std::numeric_limits<double>::quiet_NaN();
  bool hessian_regularized = false;
  std::vector<std::string> warnings;
};

// Newton optimization of the joint nll over the 2N latent values at fixed
// theta, with step-halving line search and Levenberg-style inflation on
// indefiniteness. Warm calls first take chord steps that reuse the solver's
// factorization from the previous call; the Hessian is refactorized exactly
// at the mode, so the solver always ends up holding H(mode). Any evaluator
// exposing nll/gradient/hessian/n_latent works.
template <class Evaluator>
InnerResult inner_mode(const Evaluator& eval, const Eigen::VectorXd& init,
                       const FitConfig& cfg, InnerSolver& solver) {
  cfg.validate();
  Eigen::VectorXd w = init.size() == eval.n_latent()
                          ? init
                          : Eigen::VectorXd::Zero(eval.n_latent());
  InnerResult res;
  NllBreakdown f = eval.nll(w);
  if (!f.finite()) {  // cold fallback: the prior mode is always feasible
    w.setZero();
    f = eval.nll(w);
  }

  Eigen::VectorXd g = eval.gradient(w);
  res.grad_norm = g.template lpNorm<Eigen::Infinity>();
  int chord_budget = (solver.ready && init.size() == eval.n_latent()) ? 6 : 0;
  bool factored_here = false;  // solver factorization is of H at the current w

  for (int iter = 0; res.grad_norm > cfg.inner_tol; ++iter) {
    if (iter >= cfg.inner_max_iter)
      throw numerical_error("inner_mode: not converged in " + std::to_string(cfg.inner_max_iter) +
                            " iterations; gradient max-norm " + std::to_string(res.grad_norm));
    const bool chord = chord_budget > 0;
    if (!chord) {
      Eigen::SparseMatrix<double> H = eval.hessian(w);
      const double delta = solver.factorize(H);
      if (delta > 0.0) {
        res.hessian_regularized = true;
        res.warnings.push_back("inner Hessian indefinite; inflated by " + std::to_string(delta));
      }
      factored_here = true;
    }
    const Eigen::VectorXd step = solver.solve(g);
    res.iterations = iter + 1;

    bool accepted = false;
    // Near the mode the decrement drops below the resolution of the
    // objective; take the full step without demanding a visible decrease.
    if (0.5 * g.dot(step) <= 1e-12 * (1.0 + std::abs(f.total))) {
      w -= step;
      f = eval.nll(w);
      accepted = true;
    } else {
      double t = 1.0;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        const Eigen::VectorXd w_try = w - t * step;
        const NllBreakdown f_try = eval.nll(w_try);
        if (f_try.finite() && f_try.total < f.total) {
          w = w_try;
          f = f_try;
          accepted = true;
          break;
        }
      }
    }

    if (!accepted) {
      if (chord) {  // stale direction; retry the same iterate with a fresh Hessian
        chord_budget = 0;
        continue;
      }
      if (res.grad_norm > cfg.inner_tol)
        throw numerical_error("inner_mode: no descent after " + std::to_string(iter + 1) +
                              " iterations; gradient max-norm " + std::to_string(res.grad_norm));
      break;
    }

    factored_here = false;
    const double prev_norm = res.grad_norm;
    g = eval.gradient(w);
    res.grad_norm = g.template lpNorm<Eigen::Infinity>();
    if (chord) {
      --chord_budget;
      if (res.grad_norm > 0.5 * prev_norm) chord_budget = 0;  // not contracting
    }
  }

  // Exact Hessian at the mode for the Laplace log-determinant (skipped when
  // the solver already holds it).
  if (!factored_here) {
    Eigen::SparseMatrix<double> H = eval.hessian(w);
    const double delta = solver.factorize(H);
    if (delta > 0.0) {
      res.hessian_regularized = true;
      res.warnings.push_back("Hessian at mode required inflation " + std::to_string(delta));
    }
  }
  // Polish with the exact factor so the mode is path-independent to machine
  // precision; the mode location enters the log-determinant linearly, and
  // leftover warm-start hysteresis would otherwise pollute outer central
  // differences. The moves are ~1e-8, so the factored log-determinant stands.
  for (int polish = 0; polish < 3 && res.grad_norm > 1e-12; ++polish) {
    w -= solver.solve(g);
    g = eval.gradient(w);
    res.grad_norm = g.template lpNorm<Eigen::Infinity>();
  }
  res.log_det_h = solver.log_det();
  res.mode = std::move(w);
  res.nll = eval.nll(res.mode);
  return res;
}

// Negative log of the Laplace-approximated marginal likelihood:
//   joint nll at the mode + (1/2) log|H| - N log(2 pi),
// where 2N is the number of latent values.
inline double laplace_nll_marginal(const InnerResult& inner, int n_nodes) {
  return inner.nll.total + 0.5 * inner.log_det_h - n_nodes * std::log(2.0 * M_PI);
}

struct LaplaceObjective {
  double value = std::numeric_limits<double>::quiet_NaN();
  InnerResult inner;
};

template <class Evaluator>
LaplaceObjective laplace_objective_core(const Evaluator& eval, const FitConfig& cfg,
                                        const Eigen::VectorXd& warm, InnerSolver& solver) {
  LaplaceObjective out;
  out.inner = inner_mode(eval, warm, cfg, solver);
  out.value = laplace_nll_marginal(out.inner, eval.n_nodes());
  return out;
}

// Production surface: builds the evaluator from (theta, data, grid).
inline std::pair<double, LatentFields> laplace_objective(
    const HyperParams& theta, const Dataset& data, const GridSpec& grid, const FitConfig& cfg,
    ModelKind model = ModelKind::joint, std::optional<LatentFields> warm = std::nullopt) {
  const JointEvaluator eval = make_evaluator(theta, data, grid, model);
  InnerSolver solver;
  Eigen::VectorXd w0;
  if (warm) {
    w0.resize(eval.n_latent());
    w0.head(grid.n_nodes()) = warm->v;
    w0.tail(grid.n_nodes()) = warm->u;
  }
  const LaplaceObjective obj = laplace_objective_core(eval, cfg, w0, solver);
  LatentFields modes{obj.inner.mode.head(grid.n_nodes()), obj.inner.mode.tail(grid.n_nodes())};
  return {obj.value, std::move(modes)};
}

// Square roots of the diagonal of the inverse Hessian. NaN-filled (with the
// pd flag cleared) when the Hessian is not positive definite.
struct StdErrorResult {
  Eigen::VectorXd se;
  Eigen::MatrixXd covariance;
  bool positive_definite = false;
};

inline StdErrorResult std_errors(const Eigen::MatrixXd& outer_hessian) {
  const int p = static_cast<int>(outer_hessian.rows());
  StdErrorResult r;
  r.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  r.covariance = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
  Eigen::LLT<Eigen::MatrixXd> llt(outer_hessian);
  if (llt.info() != Eigen::Success) return r;
  r.covariance = llt.solve(Eigen::MatrixXd::Identity(p, p));
  if ((r.covariance.diagonal().array() <= 0.0).any()) return r;
  r.se = r.covariance.diagonal().array().sqrt();
  r.positive_definite = true;
  return r;
}

namespace detail {

// Prototype-pattern factorization for the SPDE precision: one symbolic
// analysis per field, numeric-only refactorization per (kappa, tau). Only the
// log-determinant is needed along the optimization path.
class PrecisionFactory {
public:
  explicit PrecisionFactory(const GridSpec& grid) : grid_(grid) {}

  SparsePrecision get(const MaternConfig& m) {
    const auto key = std::make_pair(std::bit_cast<std::uint64_t>(m.kappa),
                                    std::bit_cast<std::uint64_t>(m.tau));
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 64) cache_.clear();

    Eigen::SparseMatrix<double> Q = spde_precision_matrix(grid_, m);
    if (!analyzed_) {
      ldlt_.analyzePattern(Q);
      analyzed_ = true;
    }
    ldlt_.factorize(Q);
    if (ldlt_.info() != Eigen::Success || ldlt_.vectorD().minCoeff() <= 0.0)
      throw numerical_error("precision factorization failed (kappa=" + std::to_string(m.kappa) +
                            " tau=" + std::to_string(m.tau) + ")");
    const double log_det = ldlt_.vectorD().array().log().sum();
    return cache_.emplace(key, SparsePrecision::logdet_only(std::move(Q), log_det)).first->second;
  }

private:
  GridSpec grid_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool analyzed_ = false;
  std::map<std::pair<std::uint64_t, std::uint64_t>, SparsePrecision> cache_;
};

// Per-fit evaluation state: precision caches, warm latent mode, and the
// reusable symbolic factorization of the inner Hessian.
class FitWorkspace {
public:
  FitWorkspace(std::shared_ptr<const ModelAssembly> assembly, const GridSpec& grid,
               const ParamLayout& layout, const FitConfig& cfg)
      : assembly_(std::move(assembly)), factory_v_(grid), factory_u_(grid), layout_(layout),
        cfg_(cfg) {}

  // +inf objective outside a sane box or on numerical failure; the outer
  // line search backtracks through such points.
  double operator()(const Eigen::VectorXd& x) {
    ++n_evals_;
    if (x.lpNorm<Eigen::Infinity>() > 40.0) return std::numeric_limits<double>::infinity();
    try {
      const HyperParams theta = layout_.unpack(x);
      JointEvaluator eval(theta, assembly_, factory_v_.get(theta.matern_v()),
                          factory_u_.get(theta.matern_u()));
      const LaplaceObjective obj = laplace_objective_core(eval, cfg_, warm_, solver_);
      warm_ = obj.inner.mode;
      inner_iters_ += obj.inner.iterations;
      last_inner_ = obj.inner;
      return obj.value;
    } catch (const std::runtime_error&) {
      // numerical_error and library overflow/underflow alike; precondition
      // violations (logic_error) still propagate.
      return std::numeric_limits<double>::infinity();
    }
  }

  const InnerResult& last_inner() const { return last_inner_; }
  long evaluations() const { return n_evals_; }
  long inner_iterations() const { return inner_iters_; }

private:
  std::shared_ptr<const ModelAssembly> assembly_;
  PrecisionFactory factory_v_, factory_u_;
  ParamLayout layout_;
  FitConfig cfg_;
  Eigen::VectorXd warm_;
  InnerSolver solver_;
  InnerResult last_inner_;
  long n_evals_ = 0;
  long inner_iters_ = 0;
};

inline Eigen::VectorXd fd_gradient(FitWorkspace& f, const Eigen::VectorXd& x, double rel_step) {
  const int p = static_cast<int>(x.size());
  Eigen::VectorXd g(p);
  for (int i = 0; i < p; ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(FitWorkspace& f, const Eigen::VectorXd& x, double f0,
                                  double rel_step) {
  const int p = static_cast<int>(x.size());
  Eigen::VectorXd h(p);
  for (int i = 0; i < p; ++i) h[i] = rel_step * std::max(1.0, std::abs(x[i]));
  Eigen::MatrixXd H(p, p);
  for (int i = 0; i < p; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h[i];
    xm[i] -= h[i];
    H(i, i) = (f(xp) + f(xm) - 2.0 * f0) / (h[i] * h[i]);
  }
  for (int i = 0; i < p; ++i) {
    for (int j = i + 1; j < p; ++j) {
      Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += h[i]; xpp[j] += h[j];
      xpm[i] += h[i]; xpm[j] -= h[j];
      xmp[i] -= h[i]; xmp[j] += h[j];
      xmm[i] -= h[i]; xmm[j] -= h[j];
      H(i, j) = H(j, i) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

struct BfgsOutcome {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool step_converged = false;
};

// Dense BFGS with Armijo backtracking and central-difference gradients.
inline BfgsOutcome bfgs_minimize(FitWorkspace& f, Eigen::VectorXd x0, const FitConfig& cfg) {
  const int p = static_cast<int>(x0.size());
  BfgsOutcome out;
  Eigen::VectorXd x = std::move(x0);
  double fx = f(x);
  if (!std::isfinite(fx))
    throw numerical_error("fit: objective not finite at the initial point");
  Eigen::VectorXd g = fd_gradient(f, x, cfg.fd_step);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(p, p);
  bool scaled = false;
  int quiet = 0;
  int restarts = 0;

  for (int iter = 0; iter < cfg.outer_max_iter; ++iter) {
    out.iterations = iter + 1;
    Eigen::VectorXd dir = -(Hinv * g);
    if (!dir.allFinite() || dir.dot(g) >= 0.0) {
      Hinv.setIdentity();
      scaled = false;
      dir = -g;
    }

    const double slope = dir.dot(g);
    double t = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    // Armijo with a float-resolution allowance: decreases below the
    // representable precision of the objective count as acceptable.
    const double noise = 1e-11 * (1.0 + std::abs(fx));
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      x_new = x + t * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * t * slope + noise) break;
    }
    if (!std::isfinite(f_new) || f_new > fx + noise) {
      // no descent along the quasi-Newton direction: retry once with a fresh
      // metric before giving up
      if (restarts < 4 && g.lpNorm<Eigen::Infinity>() > cfg.outer_grad_tol) {
        ++restarts;
        Hinv.setIdentity();
        scaled = false;
        quiet = 0;
        continue;
      }
      out.step_converged = g.lpNorm<Eigen::Infinity>() <= cfg.outer_grad_tol;
      break;
    }

    const Eigen::VectorXd g_new = fd_gradient(f, x_new, cfg.fd_step);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-10 * s.norm() * yv.norm()) {
      if (!scaled) {
        Hinv = (sy / yv.squaredNorm()) * Eigen::MatrixXd::Identity(p, p);
        scaled = true;
      }
      const Eigen::VectorXd Hy = Hinv * yv;
      const double yHy = yv.dot(Hy);
      Hinv += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
              (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }

    double step_rel = 0.0;
    for (int i = 0; i < p; ++i)
      step_rel = std::max(step_rel, std::abs(s[i]) / (1.0 + std::abs(x_new[i])));
    const double obj_rel = std::abs(fx - f_new) / (1.0 + std::abs(f_new));

    x = x_new;
    fx = f_new;
    g = g_new;

    const bool small_change = step_rel <= cfg.outer_tol || obj_rel <= cfg.outer_tol;
    const bool first_order = g.lpNorm<Eigen::Infinity>() <= cfg.outer_grad_tol;
    if (small_change && first_order) {
      if (++quiet >= 2) {
        out.step_converged = true;
        break;
      }
    } else if (small_change && restarts < 4) {
      // parameter/objective progress stalled away from first-order
      // optimality: restart the metric and keep going
      ++restarts;
      Hinv.setIdentity();
      scaled = false;
      quiet = 0;
    } else if (small_change) {
      out.step_converged = first_order;
      break;
    } else {
      quiet = 0;
    }
  }

  out.x = x;
  out.value = fx;
  out.gradient = g;
  return out;
}

inline double safe_log(double x, double fallback) { return x > 0.0 ? std::log(x) : fallback; }

// Neutral initialization: empirical logit/log intercepts, zero preferential
// degrees, range at half the domain width, scales from sample moments.
inline HyperParams initial_theta(const ModelAssembly& a, const GridSpec& grid) {
  HyperParams t;
  const int n = static_cast<int>(a.proj.size());
  const double zbar = n > 0 ? std::clamp(a.z.sum() / n, 0.02, 0.98) : 0.5;
  t.alpha_prime = std::log(zbar) - std::log1p(-zbar);

  double sigma_u0 = 1.0, upsilon0 = 1.0;
  if (a.y_pos.size() > 0) {
    t.alpha = safe_log(a.y_pos.mean(), 0.0);
    if (a.y_pos.size() > 4) {
      const Eigen::ArrayXd logy = a.y_pos.array().log();
      const double sd_logy = std::sqrt((logy - logy.mean()).square().sum() / (logy.size() - 1));
      sigma_u0 = std::clamp(sd_logy, 0.3, 3.0);
      const Eigen::ArrayXd yc = a.y_pos.array() - a.y_pos.mean();
      upsilon0 = std::clamp(std::sqrt(yc.square().sum() / (yc.size() - 1)), 0.2, 10.0);
    }
  }
  if (a.include_ipp)
    t.alpha_dprime = std::log(std::max<std::size_t>(a.ipp_rows.size(), 1) / grid.area());

  const double phi0 = 0.5 * (grid.x_max - grid.x_min);
  const MaternConfig mv = reparam_interpretable_to_internal(phi0, 1.0);
  const MaternConfig mu = reparam_interpretable_to_internal(phi0, sigma_u0);
  t.log_kappa_v = std::log(mv.kappa);
  t.log_tau_v = std::log(mv.tau);
  t.log_kappa_u = std::log(mu.kappa);
  t.log_tau_u = std::log(mu.tau);
  t.log_upsilon = std::log(upsilon0);
  return t;
}

}  // namespace detail

// Maximum Laplace-approximated marginal likelihood fit of a model variant.
inline FitResult fit(const Dataset& data, const GridSpec& grid, const FitConfig& cfg,
                     ModelKind model = ModelKind::joint) {
  cfg.validate();
  auto assembly = std::make_shared<ModelAssembly>(assemble(data, grid, model));
  if (assembly->proj.empty()) throw std::invalid_argument("fit: no observations for model");

  FitResult res;
  res.model = model;
  res.grid = grid;

  if (assembly->include_ipp && assembly->ipp_rows.empty()) {
    // A joint model without FDD rows has no point-process information; drop
    // the IPP layer so alpha'', beta', beta are not left unidentified.
    assembly->include_ipp = false;
    res.warnings.push_back("no FDD rows: IPP layer dropped; fit reduces to the FID-only model");
  }
  res.layout = ParamLayout::make(assembly->include_ipp, assembly->n_vessels);

  detail::FitWorkspace work(assembly, grid, res.layout, cfg);
  const Eigen::VectorXd x0 = res.layout.pack(detail::initial_theta(*assembly, grid));
  detail::BfgsOutcome opt = detail::bfgs_minimize(work, x0, cfg);

  res.estimates = opt.x;
  res.theta_hat = res.layout.unpack(opt.x);
  res.outer_iterations = opt.iterations;
  res.outer_grad_norm = opt.gradient.lpNorm<Eigen::Infinity>();

  // Final inner solve at theta-hat; the workspace solver then holds the
  // factorization of the exact Hessian at the mode.
  res.nll_marginal = work(opt.x);
  const InnerResult& inner = work.last_inner();
  res.inner_grad_norm = inner.grad_norm;
  const int N = grid.n_nodes();
  res.latent_modes.v = inner.mode.head(N);
  res.latent_modes.u = inner.mode.tail(N);
  for (const auto& w : inner.warnings) res.warnings.push_back(w);

  if (cfg.compute_latent_se) {
    if (inner.hessian_regularized) {
      res.warnings.push_back("latent SEs skipped: Hessian at mode was regularized");
    } else {
      // Takahashi selected inverse needs a simplicial LDLT of the exact
      // Hessian at the mode; built once per fit.
      JointEvaluator eval_hat(res.theta_hat, assembly,
                              build_precision(grid, res.theta_hat.matern_v()),
                              build_precision(grid, res.theta_hat.matern_u()));
      const Eigen::SparseMatrix<double> H = eval_hat.hessian(inner.mode);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
      if (ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0.0) {
        const Eigen::VectorXd d = selected_inverse_diagonal(ldlt);
        res.latent_se_v = d.head(N).array().sqrt();
        res.latent_se_u = d.tail(N).array().sqrt();
      } else {
        res.warnings.push_back("latent SEs skipped: indefinite Hessian at mode");
      }
    }
  }

  const MaternInterpretable pv = reparam_internal_to_interpretable(res.theta_hat.matern_v());
  const MaternInterpretable pu = reparam_internal_to_interpretable(res.theta_hat.matern_u());
  res.phi_v_hat = pv.phi;
  res.sigma_v_hat = pv.sigma;
  res.phi_u_hat = pu.phi;
  res.sigma_u_hat = pu.sigma;

  res.converged = opt.step_converged && res.outer_grad_norm <= cfg.outer_grad_tol;
  if (!opt.step_converged)
    res.warnings.push_back("outer optimizer hit the iteration cap or stalled");
  else if (!res.converged)
    res.warnings.push_back("outer first-order condition not met: |g|_inf = " +
                           std::to_string(res.outer_grad_norm));

  res.std_errors =
      Eigen::VectorXd::Constant(res.layout.size(), std::numeric_limits<double>::quiet_NaN());
  if (cfg.compute_std_errors) {
    const Eigen::MatrixXd H = detail::fd_hessian(work, opt.x, res.nll_marginal, cfg.se_fd_step);
    const StdErrorResult se = std_errors(H);
    res.std_errors = se.se;
    if (!se.positive_definite) {
      res.warnings.push_back("outer Hessian not positive definite; standard errors unavailable");
    } else {
      // Delta method through phi = sqrt(8)/kappa, sigma = 1/(kappa tau sqrt(4 pi)).
      auto delta_se = [&](const std::string& lk, const std::string& lt, double phi, double sigma,
                          double& se_phi, double& se_sigma) {
        const auto it_k = std::find(res.layout.names.begin(), res.layout.names.end(), lk);
        const auto it_t = std::find(res.layout.names.begin(), res.layout.names.end(), lt);
        const int ik = static_cast<int>(it_k - res.layout.names.begin());
        const int it = static_cast<int>(it_t - res.layout.names.begin());
        se_phi = phi * std::sqrt(se.covariance(ik, ik));
        se_sigma = sigma * std::sqrt(se.covariance(ik, ik) + 2.0 * se.covariance(ik, it) +
                                     se.covariance(it, it));
      };
      delta_se("log_kappa_v", "log_tau_v", pv.phi, pv.sigma, res.se_phi_v, res.se_sigma_v);
      delta_se("log_kappa_u", "log_tau_u", pu.phi, pu.sigma, res.se_phi_u, res.se_sigma_u);
    }
  }

  res.nll_evaluations = work.evaluations();
  return res;
}

}  // namespace prefjoint
