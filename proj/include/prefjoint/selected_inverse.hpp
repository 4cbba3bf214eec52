#pragma once

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <vector>

#include "prefjoint/errors.hpp"

namespace prefjoint {

// Takahashi recursion: diagonal of A^-1 from a simplicial LDL^T factor,
// computed on the sparsity pattern of L (exact, pattern is closed under the
// elimination tree). Cost is comparable to the numeric factorization.
inline Eigen::VectorXd selected_inverse_diagonal(
    const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>& ldlt) {
  const int n = static_cast<int>(ldlt.rows());
  Eigen::SparseMatrix<double> L = ldlt.matrixL();
  L.makeCompressed();
  const Eigen::VectorXd& d = ldlt.vectorD();
  if ((d.array() <= 0.0).any())
    throw numerical_error("selected_inverse_diagonal: factor is not positive definite");

  // Strictly-lower CSC view of L (unit diagonal implied by LDLT).
  std::vector<int> colp(n + 1, 0), rows;
  std::vector<double> vals;
  rows.reserve(L.nonZeros());
  vals.reserve(L.nonZeros());
  for (int c = 0; c < n; ++c) {
    colp[c] = static_cast<int>(rows.size());
    for (Eigen::SparseMatrix<double>::InnerIterator it(L, c); it; ++it) {
      if (it.row() > c) {
        rows.push_back(static_cast<int>(it.row()));
        vals.push_back(it.value());
      }
    }
  }
  colp[n] = static_cast<int>(rows.size());

  std::vector<double> zdiag(n, 0.0), zvals(rows.size(), 0.0);
  auto z_at = [&](int r, int c) -> double {  // entry (r, c) with r >= c
    if (r == c) return zdiag[r];
    const auto first = rows.begin() + colp[c], last = rows.begin() + colp[c + 1];
    const auto it = std::lower_bound(first, last, r);
    if (it != last && *it == r) return zvals[it - rows.begin()];
    return 0.0;
  };

  for (int c = n - 1; c >= 0; --c) {
    for (int idx = colp[c]; idx < colp[c + 1]; ++idx) {
      const int r = rows[idx];
      double s = 0.0;
      for (int jdx = colp[c]; jdx < colp[c + 1]; ++jdx) {
        const int k = rows[jdx];
        s += vals[jdx] * (k >= r ? z_at(k, r) : z_at(r, k));
      }
      zvals[idx] = -s;
    }
    double s = 0.0;
    for (int idx = colp[c]; idx < colp[c + 1]; ++idx) s += vals[idx] * zvals[idx];
    zdiag[c] = 1.0 / d[c] - s;
  }

  const auto& perm = ldlt.permutationP().indices();
  Eigen::VectorXd diag(n);
  for (int i = 0; i < n; ++i) diag[i] = zdiag[perm[i]];
  return diag;
}

}  // namespace prefjoint
