#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "prefjoint/grid.hpp"

using namespace prefjoint;

TEST_CASE("build_grid node layout and cell area") {
  const GridSpec g = build_grid(60, 60, Rect{0, 1, 0, 1});
  CHECK(g.n_nodes() == 3600);
  CHECK(g.dx() == Catch::Approx(1.0 / 59));
  CHECK(g.dy() == Catch::Approx(1.0 / 59));
  CHECK(g.node_x(0) == 0.0);
  CHECK(g.node_x(59) == Catch::Approx(1.0));
  CHECK(g.node_y(3599) == Catch::Approx(1.0));

  const GridSpec tiny = build_grid(2, 2, Rect{0, 1, 0, 1});
  CHECK(tiny.n_nodes() == 4);
  CHECK(tiny.cell_area() == Catch::Approx(1.0));

  const GridSpec rect = build_grid(3, 2, Rect{0, 2, 0, 1});
  CHECK(rect.n_nodes() == 6);
  CHECK(rect.dx() == Catch::Approx(1.0));
  CHECK(rect.dy() == Catch::Approx(1.0));
  CHECK(rect.cell_area() == Catch::Approx(1.0));
}

TEST_CASE("build_grid rejects degenerate input") {
  CHECK_THROWS_AS(build_grid(1, 2, Rect{0, 1, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2, 1, Rect{0, 1, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2, 2, Rect{0, 0, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2, 2, Rect{0, 1, 1, 0}), std::invalid_argument);
}

TEST_CASE("quadrature weights sum to the domain area") {
  const GridSpec g = build_grid(7, 5, Rect{0, 2, -1, 1});
  CHECK(g.quad_weights().sum() == Catch::Approx(g.area()).epsilon(1e-12));
}

TEST_CASE("projection at a node is a unit row") {
  const GridSpec g = build_grid(5, 5, Rect{0, 1, 0, 1});
  const Point node{g.node_x(12), g.node_y(12)};
  const auto A = projection_matrix(g, std::vector<Point>{node});
  CHECK(A.nonZeros() == 1);
  CHECK(A.coeff(0, 12) == Catch::Approx(1.0));
}

TEST_CASE("projection on an edge midpoint splits evenly") {
  const GridSpec g = build_grid(5, 5, Rect{0, 1, 0, 1});
  const Point mid{0.5 * (g.node_x(0) + g.node_x(1)), 0.0};
  const auto A = projection_matrix(g, std::vector<Point>{mid});
  CHECK(A.nonZeros() == 2);
  CHECK(A.coeff(0, 0) == Catch::Approx(0.5));
  CHECK(A.coeff(0, 1) == Catch::Approx(0.5));
}

TEST_CASE("projection at a cell center gives four quarters") {
  const GridSpec g = build_grid(3, 3, Rect{0, 1, 0, 1});
  const Point center{0.25, 0.25};
  const auto A = projection_matrix(g, std::vector<Point>{center});
  CHECK(A.nonZeros() == 4);
  for (int k : {0, 1, 3, 4}) CHECK(A.coeff(0, k) == Catch::Approx(0.25));
}

TEST_CASE("projection rows are stochastic for random interior points") {
  const GridSpec g = build_grid(17, 13, Rect{-1, 2, 0, 5});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(g.x_min, g.x_max), uy(g.y_min, g.y_max);
  std::vector<Point> pts(500);
  for (auto& p : pts) p = {ux(rng), uy(rng)};
  const auto A = projection_matrix(g, pts);
  for (int i = 0; i < A.rows(); ++i) {
    double row_sum = 0.0;
    int nnz = 0;
    for (int k = 0; k < A.cols(); ++k) {
      const double w = A.coeff(i, k);
      if (w != 0.0) {
        ++nnz;
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
        row_sum += w;
      }
    }
    CHECK(nnz <= 4);
    CHECK(row_sum == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("projection rejects out-of-domain points with the offending index") {
  const GridSpec g = build_grid(4, 4, Rect{0, 1, 0, 1});
  std::vector<Point> pts{{0.5, 0.5}, {1.5, 0.5}};
  CHECK_THROWS_WITH(projection_matrix(g, pts), Catch::Matchers::ContainsSubstring("location 1"));
}

TEST_CASE("nearest node and interpolation agree at nodes") {
  const GridSpec g = build_grid(6, 4, Rect{0, 1, 0, 1});
  Eigen::VectorXd f(g.n_nodes());
  for (int k = 0; k < g.n_nodes(); ++k) f[k] = 3.0 * g.node_x(k) - g.node_y(k);
  for (int k : {0, 5, 7, 23}) {
    const Point p{g.node_x(k), g.node_y(k)};
    CHECK(nearest_node(g, p) == k);
    CHECK(interpolate(g, f, p) == Catch::Approx(f[k]));
  }
  // bilinear interpolation reproduces affine fields anywhere
  CHECK(interpolate(g, f, {0.37, 0.61}) == Catch::Approx(3.0 * 0.37 - 0.61));
}
