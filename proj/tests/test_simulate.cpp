#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "prefjoint/simulate.hpp"

using namespace prefjoint;

namespace {

GridSpec grid20() { return build_grid(20, 20, Rect{0, 1, 0, 1}); }

bool interior(const GridSpec& g, int k, double margin) {
  const double x = g.node_x(k), y = g.node_y(k);
  return x >= margin && x <= g.x_max - margin && y >= margin && y <= g.y_max - margin;
}

}  // namespace

TEST_CASE("sample_gmrf is deterministic under the seed") {
  const GridSpec g = grid20();
  const SparsePrecision Q = build_precision(g, reparam_interpretable_to_internal(0.3, 1.0));
  const Eigen::VectorXd a = sample_gmrf(Q, 42);
  const Eigen::VectorXd b = sample_gmrf(Q, 42);
  const Eigen::VectorXd c = sample_gmrf(Q, 43);
  CHECK((a - b).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a - c).lpNorm<Eigen::Infinity>() > 0.0);
}

// Monte Carlo oracle: 500 draws reproduce the marginal variance and the
// lag-phi correlation of the Matern nu=1 field at interior nodes.
TEST_CASE("sample_gmrf reproduces variance and correlation") {
  const GridSpec g = grid20();
  const double phi = 6.0 * g.dx();  // lag phi is exactly 6 lattice steps
  const SparsePrecision Q = build_precision(g, reparam_interpretable_to_internal(phi, 1.0));

  const int n_draws = 500;
  std::vector<Eigen::VectorXd> draws;
  draws.reserve(n_draws);
  for (int r = 0; r < n_draws; ++r) draws.push_back(sample_gmrf(Q, 1000 + r));

  double var_acc = 0.0;
  int var_n = 0;
  for (int k = 0; k < g.n_nodes(); ++k) {
    if (!interior(g, k, 0.25)) continue;
    double m = 0.0, s2 = 0.0;
    for (const auto& d : draws) m += d[k];
    m /= n_draws;
    for (const auto& d : draws) s2 += (d[k] - m) * (d[k] - m);
    var_acc += s2 / (n_draws - 1);
    ++var_n;
  }
  const double pooled_var = var_acc / var_n;
  CHECK(pooled_var > 0.85);
  CHECK(pooled_var < 1.15);

  double rho_acc = 0.0;
  int rho_n = 0;
  for (int k = 0; k < g.n_nodes(); ++k) {
    const int b = k + 6;
    if (!interior(g, k, 0.2) || (k % g.nx) + 6 >= g.nx || !interior(g, b, 0.0)) continue;
    double ma = 0.0, mb = 0.0;
    for (const auto& d : draws) {
      ma += d[k];
      mb += d[b];
    }
    ma /= n_draws;
    mb /= n_draws;
    double cab = 0.0, va = 0.0, vb = 0.0;
    for (const auto& d : draws) {
      cab += (d[k] - ma) * (d[b] - mb);
      va += (d[k] - ma) * (d[k] - ma);
      vb += (d[b] - mb) * (d[b] - mb);
    }
    rho_acc += cab / std::sqrt(va * vb);
    ++rho_n;
  }
  const double rho = rho_acc / rho_n;
  CHECK(rho > 0.1396674740152931 - 0.05);
  CHECK(rho < 0.1396674740152931 + 0.05);
}

TEST_CASE("link_fields closed forms") {
  Eigen::VectorXd v(3), u(3);
  v << 0.0, std::log(3.0), -std::log(3.0);
  u << 0.0, 1.0, -2.0;
  const auto [pi, mu] = link_fields(0.0, 0.0, v, u);
  CHECK(pi[0] == Catch::Approx(0.5));
  CHECK(pi[1] == Catch::Approx(0.75));
  CHECK(pi[2] == Catch::Approx(0.25));
  CHECK(mu[0] == Catch::Approx(1.0));
  CHECK(mu[1] == Catch::Approx(std::exp(1.0)));
  CHECK((pi.array() > 0.0).all());
  CHECK((pi.array() < 1.0).all());
  CHECK((mu.array() > 0.0).all());
}

TEST_CASE("sample_hurdle structural zeros and moments") {
  const int n = 100000;
  SECTION("pi = 0 gives all-zero biomass") {
    const Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 1e-300);
    const Eigen::VectorXd mu = Eigen::VectorXd::Constant(n, 2.0);
    const HurdleDraw d = sample_hurdle(pi, mu, 1.0, 7);
    CHECK(d.z.sum() == 0);
    CHECK(d.s.lpNorm<Eigen::Infinity>() == 0.0);
  }
  SECTION("E[S] = E[Z] E[Y] at pi = 0.5, mu = 4") {
    const Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 0.5);
    const Eigen::VectorXd mu = Eigen::VectorXd::Constant(n, 4.0);
    const HurdleDraw d = sample_hurdle(pi, mu, 1.0, 8);
    const double mean_s = d.s.mean();
    CHECK(mean_s > 1.9);
    CHECK(mean_s < 2.1);
    // where z=1, y has mean mu and variance upsilon^2
    double ym = 0.0;
    int np = 0;
    for (int k = 0; k < n; ++k)
      if (d.z[k] == 1) {
        ym += d.y[k];
        ++np;
      }
    CHECK(ym / np == Catch::Approx(4.0).epsilon(0.02));
  }
  CHECK_THROWS_AS(sample_hurdle(Eigen::VectorXd::Constant(2, 0.5),
                                Eigen::VectorXd::Constant(2, 1.0), 0.0, 1),
                  std::invalid_argument);
}

TEST_CASE("sample_hpp uniformity and determinism") {
  const GridSpec g = build_grid(5, 5, Rect{0, 1, 0, 1});
  CHECK(sample_hpp(0, g, 1).empty());
  const auto a = sample_hpp(17, g, 5);
  const auto b = sample_hpp(17, g, 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
  }

  const auto pts = sample_hpp(10000, g, 9);
  int quadrant[4] = {0, 0, 0, 0};
  for (const auto& p : pts) quadrant[(p.x > 0.5) + 2 * (p.y > 0.5)]++;
  for (int q = 0; q < 4; ++q) {
    CHECK(quadrant[q] > 2350);  // 2500 +- 150 (3 sigma)
    CHECK(quadrant[q] < 2650);
  }
}

TEST_CASE("sample_ipp with zero degrees matches the HPP spatially") {
  const GridSpec g = grid20();
  const Eigen::VectorXd v = sample_gmrf(build_precision(g, MaternConfig{1, 10, 0.1}), 3);
  const Eigen::VectorXd u = sample_gmrf(build_precision(g, MaternConfig{1, 10, 0.1}), 4);
  HyperParams theta;  // beta' = beta = 0
  theta.alpha_dprime = 0.7;

  // two-sample chi-square over a 4x4 partition, pooled across 50 seeds
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(2, 16);
  auto bin = [](const Point& p) {
    const int bx = std::min(3, static_cast<int>(p.x * 4.0));
    const int by = std::min(3, static_cast<int>(p.y * 4.0));
    return by * 4 + bx;
  };
  for (int s = 0; s < 50; ++s) {
    for (const auto& p : sample_hpp(200, g, 100 + s)) counts(0, bin(p))++;
    for (const auto& p : sample_ipp(200, v, u, theta, g, 200 + s)) counts(1, bin(p))++;
  }
  double stat = 0.0;
  const double n0 = counts.row(0).sum(), n1 = counts.row(1).sum();
  for (int c = 0; c < 16; ++c) {
    const double tot = counts(0, c) + counts(1, c);
    const double e0 = tot * n0 / (n0 + n1), e1 = tot * n1 / (n0 + n1);
    stat += (counts(0, c) - e0) * (counts(0, c) - e0) / e0 +
            (counts(1, c) - e1) * (counts(1, c) - e1) / e1;
  }
  const boost::math::chi_squared chi2(15);
  CHECK(stat < boost::math::quantile(chi2, 0.99));  // p > 0.01
}

TEST_CASE("sample_ipp concentrates on the high-intensity quartile") {
  const GridSpec g = build_grid(60, 60, Rect{0, 1, 0, 1});
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(g.n_nodes());
  const Eigen::VectorXd u = sample_gmrf(build_precision(g, reparam_interpretable_to_internal(0.3, 1.0)), 11);
  HyperParams theta;
  theta.beta = 5.0;

  // exact selection-probability oracle from the normalized lambda field
  Eigen::ArrayXd w(g.n_nodes());
  for (int k = 0; k < g.n_nodes(); ++k) w[k] = std::exp(5.0 * u[k]) * g.quad_weight(k);
  std::vector<double> sorted_u(u.data(), u.data() + u.size());
  std::sort(sorted_u.begin(), sorted_u.end());
  const double q75 = sorted_u[static_cast<std::size_t>(0.75 * sorted_u.size())];
  double p_top = 0.0;
  for (int k = 0; k < g.n_nodes(); ++k)
    if (u[k] >= q75) p_top += w[k];
  p_top /= w.sum();
  CHECK(p_top > 0.9);  // single-draw top-quartile mass under beta = 5

  const auto pts = sample_ipp(500, v, u, theta, g, 12);
  int in_top = 0;
  for (const auto& p : pts) in_top += (u[nearest_node(g, p)] >= q75);
  CHECK(static_cast<double>(in_top) / pts.size() >= 0.80);
}

TEST_CASE("preferential degree monotonically raises sampled-site biomass field") {
  const GridSpec g = grid20();
  const SparsePrecision qu = build_precision(g, reparam_interpretable_to_internal(0.3, 1.0));
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(g.n_nodes());

  const std::vector<double> betas = {0.0, 0.5, 1.0, 2.0};
  std::vector<double> mean_u(betas.size(), 0.0);
  for (int s = 0; s < 50; ++s) {
    const Eigen::VectorXd u = sample_gmrf(qu, 500 + s);
    for (std::size_t bi = 0; bi < betas.size(); ++bi) {
      HyperParams theta;
      theta.beta = betas[bi];
      const auto pts = sample_ipp(150, v, u, theta, g, 700 + s);
      double acc = 0.0;
      for (const auto& p : pts) acc += interpolate(g, u, p);
      mean_u[bi] += acc / pts.size();
    }
  }
  for (std::size_t bi = 1; bi < betas.size(); ++bi) CHECK(mean_u[bi] > mean_u[bi - 1]);
}

TEST_CASE("larger FDD dimension captures lower biomass on the same truth") {
  const GridSpec g = build_grid(40, 40, Rect{0, 1, 0, 1});
  double mean_small = 0.0, mean_large = 0.0;
  for (int s = 0; s < 30; ++s) {
    ScenarioConfig cfg = scenario_preset(1);  // strong PS on biomass
    cfg.seed = 9000 + s;
    cfg.n_s = 10;
    cfg.n_c = 100;
    const auto [truth_a, data_a] = make_scenario(cfg, g);
    cfg.n_c = 500;
    const auto [truth_b, data_b] = make_scenario(cfg, g);
    auto site_mean = [&](const SyntheticTruth& t, const Dataset& d) {
      double acc = 0.0;
      int n = 0;
      for (const auto& o : d.obs)
        if (o.source == Source::fdd) {
          acc += t.s_field[nearest_node(g, o.location)];
          ++n;
        }
      return acc / n;
    };
    mean_small += site_mean(truth_a, data_a);
    mean_large += site_mean(truth_b, data_b);
  }
  CHECK(mean_large < mean_small);
}

TEST_CASE("scenario presets match the sampling scenarios") {
  CHECK(preferential_degrees(1) == std::pair{0.0, 2.0});
  CHECK(preferential_degrees(2) == std::pair{1.0, 0.5});
  CHECK(preferential_degrees(3) == std::pair{1.0, 1.0});
  CHECK(preferential_degrees(4) == std::pair{1.0, 2.0});
  CHECK(preferential_degrees(5) == std::pair{2.0, 0.0});
  CHECK_THROWS_AS(preferential_degrees(6), std::invalid_argument);
  const ScenarioConfig s5 = scenario_preset(5);
  CHECK(s5.beta_prime == 2.0);
  CHECK(s5.beta == 0.0);
}

TEST_CASE("make_scenario bookkeeping, determinism and invariants") {
  const GridSpec g = grid20();
  ScenarioConfig cfg = scenario_preset(3);
  cfg.n_s = 100;
  cfg.n_c = 100;
  cfg.seed = 77;

  const auto [truth, data] = make_scenario(cfg, g);
  CHECK(data.size() == 200);
  CHECK(data.count(Source::fid) == 100);
  CHECK(data.count(Source::fdd) == 100);

  // truth invariants
  for (int k = 0; k < g.n_nodes(); ++k) {
    CHECK(truth.pi_field[k] > 0.0);
    CHECK(truth.pi_field[k] < 1.0);
    CHECK(truth.mu_field[k] > 0.0);
    CHECK(truth.s_field[k] == truth.z_field[k] * truth.y_field[k]);
    if (truth.z_field[k] == 0) CHECK(truth.s_field[k] == 0.0);
  }
  const auto [pi2, mu2] = link_fields(cfg.alpha_prime, cfg.alpha, truth.v_field, truth.u_field);
  CHECK((truth.pi_field - pi2).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((truth.mu_field - mu2).lpNorm<Eigen::Infinity>() == 0.0);

  // observation invariants: y present exactly when z = 1, and positive
  for (const auto& o : data.obs) {
    if (o.z == 1) {
      REQUIRE(o.value.has_value());
      CHECK(*o.value > 0.0);
    } else {
      CHECK(!o.value.has_value());
    }
  }

  // bit-identical under the same seed
  const auto [truth_b, data_b] = make_scenario(cfg, g);
  CHECK((truth.v_field - truth_b.v_field).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((truth.s_field - truth_b.s_field).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(data_b.size() == data.size());
  for (int i = 0; i < data.size(); ++i) {
    CHECK(data.obs[i].location.x == data_b.obs[i].location.x);
    CHECK(data.obs[i].location.y == data_b.obs[i].location.y);
    CHECK(data.obs[i].z == data_b.obs[i].z);
    CHECK(data.obs[i].value.value_or(-1) == data_b.obs[i].value.value_or(-1));
  }
}
