#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "prefjoint/dataset.hpp"
#include "prefjoint/errors.hpp"
#include "prefjoint/grid.hpp"
#include "prefjoint/params.hpp"
#include "prefjoint/rng.hpp"
#include "prefjoint/spde.hpp"

namespace prefjoint {

// One synthetic realization of every process layer on the grid.
struct SyntheticTruth {
  Eigen::VectorXd v_field, u_field;   // latent GMRF draws
  Eigen::VectorXd pi_field, mu_field; // presence probability, mean biomass under presence
  Eigen::VectorXi z_field;            // presence-absence draw per node
  Eigen::VectorXd y_field;            // biomass under presence (0 where z = 0)
  Eigen::VectorXd s_field;            // biomass process, s = z * y
  HyperParams theta_true;
};

struct ScenarioConfig {
  int scenario_id = 3;  // 1..5 preset, 0 = custom preferential degrees
  double beta_prime = 1.0;
  double beta = 1.0;
  int n_s = 100;  // FID sample size
  int n_c = 100;  // FDD sample size
  std::uint64_t seed = 1;
  // Truth covariance and intercepts (defaults mirror the simulation study).
  double phi_v = 0.15;
  double sigma_v = std::sqrt(0.80);
  double phi_u = 0.20;
  double sigma_u = 1.0;
  double alpha_prime = 0.0;
  double alpha = 0.0;
  double alpha_dprime = 0.0;
  double upsilon = 1.0;
};

// Preset preferential degrees (beta', beta) per sampling scenario.
inline std::pair<double, double> preferential_degrees(int scenario_id) {
  switch (scenario_id) {
    case 1: return {0.0, 2.0};
    case 2: return {1.0, 0.5};
    case 3: return {1.0, 1.0};
    case 4: return {1.0, 2.0};
    case 5: return {2.0, 0.0};
    default:
      throw std::invalid_argument("preferential_degrees: scenario_id must be in 1..5");
  }
}

inline ScenarioConfig scenario_preset(int scenario_id) {
  ScenarioConfig cfg;
  cfg.scenario_id = scenario_id;
  std::tie(cfg.beta_prime, cfg.beta) = preferential_degrees(scenario_id);
  return cfg;
}

inline void validate(const ScenarioConfig& cfg) {
  if (cfg.scenario_id != 0) {
    auto [bp, b] = preferential_degrees(cfg.scenario_id);
    if (cfg.beta_prime != bp || cfg.beta != b)
      throw std::invalid_argument("ScenarioConfig: preferential degrees inconsistent with preset");
  }
  if (cfg.n_s < 0 || cfg.n_c < 0) throw std::invalid_argument("ScenarioConfig: negative sample size");
  if (!(cfg.upsilon > 0.0)) throw std::invalid_argument("ScenarioConfig: upsilon must be positive");
  if (!(cfg.phi_v > 0.0 && cfg.sigma_v > 0.0 && cfg.phi_u > 0.0 && cfg.sigma_u > 0.0))
    throw std::invalid_argument("ScenarioConfig: covariance truths must be positive");
}

inline HyperParams hyperparams_from_truth(const ScenarioConfig& cfg) {
  HyperParams t;
  t.alpha_prime = cfg.alpha_prime;
  t.alpha = cfg.alpha;
  t.alpha_dprime = cfg.alpha_dprime;
  t.beta_prime = cfg.beta_prime;
  t.beta = cfg.beta;
  const MaternConfig mv = reparam_interpretable_to_internal(cfg.phi_v, cfg.sigma_v);
  const MaternConfig mu = reparam_interpretable_to_internal(cfg.phi_u, cfg.sigma_u);
  t.log_kappa_v = std::log(mv.kappa);
  t.log_tau_v = std::log(mv.tau);
  t.log_kappa_u = std::log(mu.kappa);
  t.log_tau_u = std::log(mu.tau);
  t.log_upsilon = std::log(cfg.upsilon);
  return t;
}

// Exact zero-mean GMRF draw: x = Pinv L^-T D^-1/2 z for Q = P^T L D L^T P.
inline Eigen::VectorXd sample_gmrf(const SparsePrecision& Q, std::uint64_t seed) {
  const auto& f = Q.factor();
  std::mt19937_64 rng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(Q.dimension());
  for (int i = 0; i < z.size(); ++i) z[i] = gauss(rng);
  z.array() /= f.vectorD().array().sqrt();
  Eigen::VectorXd w = f.matrixU().solve(z);
  return f.permutationPinv() * w;
}

// pi = logit^-1(alpha' + v), mu = exp(alpha + u), elementwise.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> link_fields(double alpha_prime, double alpha,
                                                               const Eigen::VectorXd& v_field,
                                                               const Eigen::VectorXd& u_field) {
  if (v_field.size() != u_field.size())
    throw std::invalid_argument("link_fields: field size mismatch");
  Eigen::VectorXd pi = (1.0 / (1.0 + (-(alpha_prime + v_field.array())).exp())).matrix();
  Eigen::VectorXd mu = (alpha + u_field.array()).exp().matrix();
  return {std::move(pi), std::move(mu)};
}

struct HurdleDraw {
  Eigen::VectorXi z;
  Eigen::VectorXd y;
  Eigen::VectorXd s;
};

// z ~ Bernoulli(pi); where z = 1, y ~ Gamma(shape mu^2/ups^2, scale ups^2/mu).
inline HurdleDraw sample_hurdle(const Eigen::VectorXd& pi_field, const Eigen::VectorXd& mu_field,
                                double upsilon, std::uint64_t seed) {
  if (!(upsilon > 0.0)) throw std::invalid_argument("sample_hurdle: upsilon must be positive");
  if (pi_field.size() != mu_field.size())
    throw std::invalid_argument("sample_hurdle: field size mismatch");
  const int n = static_cast<int>(pi_field.size());
  std::mt19937_64 rng_z = make_engine(seed_mix(seed, 0x5a));
  std::mt19937_64 rng_y = make_engine(seed_mix(seed, 0x59));
  HurdleDraw d;
  d.z.resize(n);
  d.y = Eigen::VectorXd::Zero(n);
  d.s = Eigen::VectorXd::Zero(n);
  const double ups2 = upsilon * upsilon;
  for (int k = 0; k < n; ++k) {
    std::bernoulli_distribution bern(pi_field[k]);
    d.z[k] = bern(rng_z) ? 1 : 0;
    if (d.z[k] == 1) {
      const double mu = mu_field[k];
      std::gamma_distribution<double> gamma(mu * mu / ups2, ups2 / mu);
      // floor keeps y strictly positive if a tiny-shape draw underflows
      d.y[k] = std::max(gamma(rng_y), std::numeric_limits<double>::min());
      d.s[k] = d.y[k];
    }
  }
  return d;
}

// Conditioned on the count, HPP points are i.i.d. uniform over the domain.
inline std::vector<Point> sample_hpp(int n_s, const GridSpec& g, std::uint64_t seed) {
  if (n_s < 0) throw std::invalid_argument("sample_hpp: negative count");
  std::mt19937_64 rng = make_engine(seed);
  std::uniform_real_distribution<double> ux(g.x_min, g.x_max);
  std::uniform_real_distribution<double> uy(g.y_min, g.y_max);
  std::vector<Point> pts(n_s);
  for (auto& p : pts) {
    p.x = ux(rng);
    p.y = uy(rng);
  }
  return pts;
}

// Conditional-on-count IPP sampling: node cells are selected without
// replacement with probability proportional to lambda * clipped-cell area
// (successive sampling via exponential keys), then each point is jittered
// uniformly within its cell. Exhaustion of high-intensity cells is what makes
// growing FDD dimensions capture progressively lower biomass values.
inline std::vector<Point> sample_ipp(int n_c, const Eigen::VectorXd& v_field,
                                     const Eigen::VectorXd& u_field, const HyperParams& theta,
                                     const GridSpec& g, std::uint64_t seed) {
  if (n_c < 0) throw std::invalid_argument("sample_ipp: negative count");
  const int n = g.n_nodes();
  if (v_field.size() != n || u_field.size() != n)
    throw std::invalid_argument("sample_ipp: fields do not match grid");
  if (n_c > n)
    throw std::invalid_argument("sample_ipp: count exceeds the number of grid cells");

  // Selection is invariant to a constant shift of the log intensity, so
  // normalize by the max predictor before exponentiating.
  Eigen::ArrayXd pred = theta.alpha_dprime + theta.beta_prime * v_field.array() +
                        theta.beta * u_field.array();
  const double shift = pred.maxCoeff();
  Eigen::ArrayXd weight(n);
  for (int k = 0; k < n; ++k) weight[k] = std::exp(pred[k] - shift) * g.quad_weight(k);
  if (!(weight.sum() > 0.0) || !weight.isFinite().all())
    throw numerical_error("sample_ipp: degenerate intensity field");

  std::mt19937_64 rng = make_engine(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Efraimidis-Spirakis keys: the n_c smallest -log(u)/w form a weighted
  // sample without replacement.
  std::vector<std::pair<double, int>> keyed(n);
  for (int k = 0; k < n; ++k) {
    const double u01 = std::max(unit(rng), std::numeric_limits<double>::min());
    keyed[k] = {-std::log(u01) / weight[k], k};
  }
  std::partial_sort(keyed.begin(), keyed.begin() + n_c, keyed.end());

  std::vector<Point> pts(n_c);
  const double hx = 0.5 * g.dx(), hy = 0.5 * g.dy();
  for (int i = 0; i < n_c; ++i) {
    const int k = keyed[i].second;
    const double cx = g.node_x(k), cy = g.node_y(k);
    const double x0 = std::max(g.x_min, cx - hx), x1 = std::min(g.x_max, cx + hx);
    const double y0 = std::max(g.y_min, cy - hy), y1 = std::min(g.y_max, cy + hy);
    pts[i].x = x0 + unit(rng) * (x1 - x0);
    pts[i].y = y0 + unit(rng) * (y1 - y0);
  }
  return pts;
}

// End-to-end generation of one replica: GMRFs -> links -> hurdle -> HPP/IPP
// locations -> observations. z is read from the nearest node of the truth;
// y is drawn fresh from the conditional Gamma at the projected mean.
inline std::pair<SyntheticTruth, Dataset> make_scenario(const ScenarioConfig& cfg,
                                                        const GridSpec& g) {
  validate(cfg);
  SyntheticTruth truth;
  truth.theta_true = hyperparams_from_truth(cfg);
  const HyperParams& t = truth.theta_true;

  const SparsePrecision qv = build_precision(g, t.matern_v());
  const SparsePrecision qu = build_precision(g, t.matern_u());
  truth.v_field = sample_gmrf(qv, substream(cfg.seed, Stream::v));
  truth.u_field = sample_gmrf(qu, substream(cfg.seed, Stream::u));
  std::tie(truth.pi_field, truth.mu_field) =
      link_fields(cfg.alpha_prime, cfg.alpha, truth.v_field, truth.u_field);

  const std::uint64_t hurdle_seed = seed_mix(substream(cfg.seed, Stream::z),
                                             substream(cfg.seed, Stream::y));
  const HurdleDraw h = sample_hurdle(truth.pi_field, truth.mu_field, cfg.upsilon, hurdle_seed);
  truth.z_field = h.z;
  truth.y_field = h.y;
  truth.s_field = h.s;

  const std::vector<Point> fid = sample_hpp(cfg.n_s, g, substream(cfg.seed, Stream::hpp));
  const std::vector<Point> fdd =
      sample_ipp(cfg.n_c, truth.v_field, truth.u_field, t, g, substream(cfg.seed, Stream::ipp));

  std::mt19937_64 rng_obs = make_engine(substream(cfg.seed, Stream::obs));
  const double ups2 = cfg.upsilon * cfg.upsilon;
  Dataset data;
  data.obs.reserve(fid.size() + fdd.size());
  auto observe = [&](const Point& p, Source src) {
    Observation o;
    o.location = p;
    o.source = src;
    o.z = truth.z_field[nearest_node(g, p)];
    if (o.z == 1) {
      const double mu = std::exp(cfg.alpha + interpolate(g, truth.u_field, p));
      std::gamma_distribution<double> gamma(mu * mu / ups2, ups2 / mu);
      o.value = std::max(gamma(rng_obs), std::numeric_limits<double>::min());
    }
    data.obs.push_back(o);
  };
  for (const auto& p : fid) observe(p, Source::fid);
  for (const auto& p : fdd) observe(p, Source::fdd);
  data.validate();
  return {std::move(truth), std::move(data)};
}

}  // namespace prefjoint
