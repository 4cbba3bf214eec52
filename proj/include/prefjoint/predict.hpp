#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefjoint/laplace.hpp"

namespace prefjoint {

// Plug-in predicted surfaces at the latent modes, with latent-scale standard
// errors pushed through the link derivatives. SE vectors are empty when the
// fit carried no latent standard errors.
struct PredictionFields {
  Eigen::VectorXd pi_hat, mu_hat, s_hat;
  Eigen::VectorXd se_z, se_y;
  bool has_se() const { return se_z.size() > 0; }
};

inline PredictionFields predict_fields(const FitResult& fit) {
  const int N = fit.grid.n_nodes();
  if (fit.latent_modes.v.size() != N || fit.latent_modes.u.size() != N)
    throw std::invalid_argument("predict_fields: latent modes do not match grid");
  PredictionFields p;
  p.pi_hat = (1.0 / (1.0 + (-(fit.theta_hat.alpha_prime + fit.latent_modes.v.array())).exp()))
                 .matrix();
  p.mu_hat = (fit.theta_hat.alpha + fit.latent_modes.u.array()).exp().matrix();
  p.s_hat = p.pi_hat.cwiseProduct(p.mu_hat);
  if (fit.latent_se_v.size() == N && fit.latent_se_u.size() == N) {
    p.se_z = (p.pi_hat.array() * (1.0 - p.pi_hat.array()) * fit.latent_se_v.array()).matrix();
    p.se_y = (p.mu_hat.array() * fit.latent_se_u.array()).matrix();
  }
  return p;
}

struct RmseMae {
  double rmse = 0.0;
  double mae = 0.0;
};

inline RmseMae rmse_mae(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("rmse_mae: length mismatch");
  if (a.size() == 0) throw std::invalid_argument("rmse_mae: empty fields");
  const Eigen::ArrayXd d = (a - b).array();
  return {std::sqrt(d.square().mean()), d.abs().mean()};
}

// Hellinger distance between two empirical distributions over shared
// equal-width bins spanning the pooled range:
//   H = sqrt(1 - sum_i sqrt(p_i q_i))
inline double hellinger(const Eigen::VectorXd& sample_p, const Eigen::VectorXd& sample_q,
                        int n_bins = 30) {
  if (sample_p.size() == 0 || sample_q.size() == 0)
    throw std::invalid_argument("hellinger: empty sample");
  if (n_bins < 2) throw std::invalid_argument("hellinger: n_bins must be >= 2");
  const double lo = std::min(sample_p.minCoeff(), sample_q.minCoeff());
  const double hi = std::max(sample_p.maxCoeff(), sample_q.maxCoeff());
  if (!(hi > lo)) return 0.0;  // all values identical across both samples

  const double width = (hi - lo) / n_bins;
  auto bin_of = [&](double x) {
    return std::min(n_bins - 1, static_cast<int>((x - lo) / width));
  };
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n_bins), q = Eigen::VectorXd::Zero(n_bins);
  for (int i = 0; i < sample_p.size(); ++i) p[bin_of(sample_p[i])] += 1.0;
  for (int i = 0; i < sample_q.size(); ++i) q[bin_of(sample_q[i])] += 1.0;
  p /= sample_p.size();
  q /= sample_q.size();
  const double bc = (p.array() * q.array()).sqrt().sum();
  return std::sqrt(std::max(0.0, 1.0 - std::min(1.0, bc)));
}

// Quantile with midpoint interpolation on the sorted values.
inline double quantile_midpoint(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty");
  std::sort(values.begin(), values.end());
  const double pos = q * (values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  return lo == hi ? values[lo] : 0.5 * (values[lo] + values[hi]);
}

struct ReplicaSummary {
  std::string param;
  double median = 0.0, q1 = 0.0, q3 = 0.0, mean = 0.0;
};

// Median and interquartile interval (plus the mean) per parameter across
// replicas.
inline std::vector<ReplicaSummary> summarize_replicas(
    const std::map<std::string, std::vector<double>>& estimates) {
  std::vector<ReplicaSummary> out;
  out.reserve(estimates.size());
  for (const auto& [param, vals] : estimates) {
    if (vals.empty()) throw std::invalid_argument("summarize_replicas: no replicas for " + param);
    ReplicaSummary s;
    s.param = param;
    s.median = quantile_midpoint(vals, 0.5);
    s.q1 = quantile_midpoint(vals, 0.25);
    s.q3 = quantile_midpoint(vals, 0.75);
    s.mean = 0.0;
    for (const double v : vals) s.mean += v;
    s.mean /= static_cast<double>(vals.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace prefjoint
