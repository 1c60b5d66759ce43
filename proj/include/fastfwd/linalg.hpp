// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fastfwd/tensor.hpp"

namespace fastfwd {

// Orthonormal basis (e1, e2) of span{u, v} with e1 = u / ||u||.
// Throws DegeneratePlaneError when ||u|| or the residual of v after
// projecting out e1 falls below 1e-12.
std::pair<std::vector<double>, std::vector<double>> gram_schmidt_plane(std::span<const double> u,
                                                                      std::span<const double> v);

// Singular values of a matrix, descending, length min(rows, cols).
// One-sided Jacobi (Hestenes) rotations; columns are considered orthogonal
// once every pairwise cosine is below 1e-12. Throws NumericError (with the
// residual) if that does not happen within the sweep cap.
std::vector<double> singular_values(const Tensor& m);

// cos(a, b), or nullopt if either vector has zero norm.
std::optional<double> cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace fastfwd
