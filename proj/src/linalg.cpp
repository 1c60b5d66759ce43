// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fastfwd/errors.hpp"

namespace fastfwd {

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr double kJacobiTolerance = 1e-12;
constexpr int kMaxSweeps = 60;

}  // namespace

std::pair<std::vector<double>, std::vector<double>> gram_schmidt_plane(std::span<const double> u,
                                                                      std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionError("gram_schmidt_plane: lengths " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  const double nu = l2_norm(u);
  if (!(nu >= kDegenerateNorm)) {
    throw DegeneratePlaneError("gram_schmidt_plane: first direction has norm " + std::to_string(nu));
  }
  std::vector<double> e1(u.begin(), u.end());
  for (double& x : e1) x /= nu;

  std::vector<double> w(v.begin(), v.end());
  // Second pass removes the rounding left behind by the first.
  for (int pass = 0; pass < 2; ++pass) {
    const double proj = dot(w, e1);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= proj * e1[i];
  }
  const double nw = l2_norm(w);
  if (!(nw >= kDegenerateNorm)) {
    throw DegeneratePlaneError("gram_schmidt_plane: directions are parallel (residual " + std::to_string(nw) + ")");
  }
  for (double& x : w) x /= nw;
  return {std::move(e1), std::move(w)};
}

std::vector<double> singular_values(const Tensor& m) {
  if (!m.is_matrix()) throw DimensionError("singular_values: expected a matrix, got " + to_string(m.shape()));
  m.check_finite("singular_values input");

  // Work on the orientation with fewer columns; columns stored contiguously.
  const bool transpose = m.rows() < m.cols();
  const std::size_t len = transpose ? m.cols() : m.rows();
  const std::size_t ncol = transpose ? m.rows() : m.cols();
  std::vector<std::vector<double>> col(ncol, std::vector<double>(len));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (transpose) {
        col[r][c] = m.at(r, c);
      } else {
        col[c][r] = m.at(r, c);
      }
    }
  }

  double residual = 0.0;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    residual = 0.0;
    for (std::size_t i = 0; i + 1 < ncol; ++i) {
      for (std::size_t j = i + 1; j < ncol; ++j) {
        const double alpha = dot(col[i], col[i]);
        const double beta = dot(col[j], col[j]);
        const double gamma = dot(col[i], col[j]);
        if (alpha == 0.0 || beta == 0.0) continue;
        const double off = std::abs(gamma) / std::sqrt(alpha * beta);
        residual = std::max(residual, off);
        if (off < kJacobiTolerance) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < len; ++k) {
          const double a = col[i][k];
          const double b = col[j][k];
          col[i][k] = c * a - s * b;
          col[j][k] = s * a + c * b;
        }
      }
    }
    converged = residual < kJacobiTolerance;
  }
  if (!converged) {
    throw NumericError("singular_values: Jacobi sweeps did not converge, residual " + std::to_string(residual));
  }

  std::vector<double> sv(ncol);
  for (std::size_t i = 0; i < ncol; ++i) sv[i] = l2_norm(col[i]);
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace fastfwd
