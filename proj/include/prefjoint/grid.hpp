#pragma once

#include <Eigen/SparseCore>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefjoint {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Rect {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
};

// Regular lattice over a rectangular domain, boundary nodes included.
// The same object serves as simulation grid, SPDE mesh and prediction grid.
// Node k lives at (ix, iy) with k = iy * nx + ix (row-major).
struct GridSpec {
  int nx = 0;
  int ny = 0;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;

  int n_nodes() const { return nx * ny; }
  double dx() const { return (x_max - x_min) / (nx - 1); }
  double dy() const { return (y_max - y_min) / (ny - 1); }
  double cell_area() const { return dx() * dy(); }
  double area() const { return (x_max - x_min) * (y_max - y_min); }

  double node_x(int k) const { return x_min + (k % nx) * dx(); }
  double node_y(int k) const { return y_min + (k / nx) * dy(); }

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }

  // Quadrature weight of node k: the area of its Voronoi cell clipped to the
  // domain (cell_area in the interior, half on edges, quarter at corners).
  // Weights sum exactly to area(); also the lumped mass diagonal of the SPDE.
  double quad_weight(int k) const {
    const int ix = k % nx, iy = k / nx;
    const double wx = (ix == 0 || ix == nx - 1) ? 0.5 * dx() : dx();
    const double wy = (iy == 0 || iy == ny - 1) ? 0.5 * dy() : dy();
    return wx * wy;
  }

  Eigen::VectorXd quad_weights() const {
    Eigen::VectorXd w(n_nodes());
    for (int k = 0; k < n_nodes(); ++k) w[k] = quad_weight(k);
    return w;
  }
};

inline GridSpec build_grid(int nx, int ny, const Rect& bounds) {
  if (nx < 2 || ny < 2)
    throw std::invalid_argument("build_grid: nx and ny must be >= 2, got " +
                                std::to_string(nx) + "x" + std::to_string(ny));
  if (!(bounds.x_max > bounds.x_min) || !(bounds.y_max > bounds.y_min))
    throw std::invalid_argument("build_grid: degenerate bounds");
  return GridSpec{nx, ny, bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max};
}

// Bilinear interpolation weights of a point: up to 4 (node, weight) pairs,
// weights in [0,1] summing to 1. Exact node hits collapse to a single weight.
struct BilinearStencil {
  std::array<int, 4> node{};
  std::array<double, 4> weight{};
  int size = 0;
};

inline BilinearStencil bilinear_weights(const GridSpec& g, const Point& p) {
  if (!g.contains(p.x, p.y))
    throw std::invalid_argument("bilinear_weights: point (" + std::to_string(p.x) +
                                ", " + std::to_string(p.y) + ") outside domain");
  const double fx = (p.x - g.x_min) / g.dx();
  const double fy = (p.y - g.y_min) / g.dy();
  int ix = std::min(static_cast<int>(std::floor(fx)), g.nx - 2);
  int iy = std::min(static_cast<int>(std::floor(fy)), g.ny - 2);
  ix = std::max(ix, 0);
  iy = std::max(iy, 0);
  const double tx = fx - ix;
  const double ty = fy - iy;

  const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  const int n[4] = {iy * g.nx + ix, iy * g.nx + ix + 1, (iy + 1) * g.nx + ix,
                    (iy + 1) * g.nx + ix + 1};
  BilinearStencil s;
  for (int j = 0; j < 4; ++j) {
    if (w[j] > 0.0) {
      s.node[s.size] = n[j];
      s.weight[s.size] = w[j];
      ++s.size;
    }
  }
  return s;
}

inline int nearest_node(const GridSpec& g, const Point& p) {
  if (!g.contains(p.x, p.y))
    throw std::invalid_argument("nearest_node: point outside domain");
  const int ix = std::min(g.nx - 1, std::max(0, static_cast<int>(std::lround((p.x - g.x_min) / g.dx()))));
  const int iy = std::min(g.ny - 1, std::max(0, static_cast<int>(std::lround((p.y - g.y_min) / g.dy()))));
  return iy * g.nx + ix;
}

inline double interpolate(const GridSpec& g, const Eigen::VectorXd& field, const Point& p) {
  const BilinearStencil s = bilinear_weights(g, p);
  double v = 0.0;
  for (int j = 0; j < s.size; ++j) v += s.weight[j] * field[s.node[j]];
  return v;
}

// Row-stochastic sparse projection from node fields to observation sites.
inline Eigen::SparseMatrix<double> projection_matrix(const GridSpec& g,
                                                     std::span<const Point> locations) {
  Eigen::SparseMatrix<double> A(static_cast<int>(locations.size()), g.n_nodes());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(4 * locations.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    BilinearStencil s;
    try {
      s = bilinear_weights(g, locations[i]);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("projection_matrix: location " + std::to_string(i) +
                                  " outside domain");
    }
    for (int j = 0; j < s.size; ++j)
      trips.emplace_back(static_cast<int>(i), s.node[j], s.weight[j]);
  }
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  return A;
}

}  // namespace prefjoint
