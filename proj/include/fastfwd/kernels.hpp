// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Numeric kernels behind the tape. Every kernel exists twice: a plain serial
// reference used by the tests, and an OpenMP version used by the engine.
// Parallel versions split work over independent output rows (gemm) or
// (batch, head) pairs (attention) and keep the per-element accumulation order
// of the reference, so the two agree bit for bit at any thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace fastfwd::kernels {

enum class Op { none, transpose };

// C[m x n] = op(A)[m x k] * op(B)[k x n]. A is stored as [m x k] (or [k x m]
// when transposed), B as [k x n] (or [n x k]). C is overwritten.
struct GemmDims {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
};

void gemm_reference(std::span<const double> a, Op op_a, std::span<const double> b, Op op_b, std::span<double> c,
                    GemmDims dims);
void gemm_parallel(std::span<const double> a, Op op_a, std::span<const double> b, Op op_b, std::span<double> c,
                   GemmDims dims);
// Dispatches to the parallel kernel when the problem is large enough to
// amortize a thread team.
void gemm(std::span<const double> a, Op op_a, std::span<const double> b, Op op_b, std::span<double> c,
          GemmDims dims);

// Causal multi-head self-attention over activations laid out as
// [batch * seq, heads * head_dim]; head h owns columns [h*head_dim, (h+1)*head_dim).
// `probs` holds [batch, heads, seq, seq] softmax weights (upper triangle zero).
struct AttentionDims {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;

  std::size_t model_dim() const { return heads * head_dim; }
  std::size_t activation_size() const { return batch * seq * heads * head_dim; }
  std::size_t probs_size() const { return batch * heads * seq * seq; }
};

void attention_forward_reference(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                                 std::span<double> out, std::span<double> probs, AttentionDims dims);
void attention_forward_parallel(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                                std::span<double> out, std::span<double> probs, AttentionDims dims);

// dq, dk, dv are overwritten.
void attention_backward_reference(std::span<const double> grad_out, std::span<const double> q,
                                  std::span<const double> k, std::span<const double> v,
                                  std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                                  std::span<double> dv, AttentionDims dims);
void attention_backward_parallel(std::span<const double> grad_out, std::span<const double> q,
                                 std::span<const double> k, std::span<const double> v,
                                 std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                                 std::span<double> dv, AttentionDims dims);

// sqrt(sum_i m[i][j]^2) for each column j of a row-major [rows x cols] matrix,
// summed in ascending row order.
void column_norms(std::span<const double> m, std::size_t rows, std::size_t cols, std::span<double> out);

// Analytic forward FLOP counts, shared by the tape and the per-model
// estimators. One FLOP per multiply, add, compare-free transcendental, or
// divide actually executed.
namespace flops {

constexpr std::uint64_t gemm(std::size_t m, std::size_t k, std::size_t n) {
  return 2ULL * m * k * n;
}

constexpr std::uint64_t elementwise(std::size_t n) { return n; }

// q.k (2*hd), scale (1), softmax (sub, exp, sum, divide: 4), weighted sum of v (2*hd)
// per causal (query, key) pair.
constexpr std::uint64_t attention(std::size_t batch, std::size_t seq, std::size_t heads, std::size_t head_dim) {
  const std::uint64_t pairs = static_cast<std::uint64_t>(seq) * (seq + 1) / 2;
  return static_cast<std::uint64_t>(batch) * heads * pairs * (4ULL * head_dim + 5ULL);
}

// Mean, centered square, variance, normalize, gain, bias.
constexpr std::uint64_t layer_norm(std::size_t rows, std::size_t cols) { return 8ULL * rows * cols; }

// Tanh-approximated GELU: cubic, polynomial, tanh, scaling.
constexpr std::uint64_t gelu(std::size_t n) { return 8ULL * n; }

// Max-shift, exp, sum, log per logit plus the masked mean.
constexpr std::uint64_t cross_entropy(std::size_t rows, std::size_t classes) {
  return 4ULL * rows * classes + 2ULL * rows;
}

// Difference, square, sum, then one divide.
constexpr std::uint64_t mse(std::size_t n) { return 3ULL * n + 1ULL; }

// Column norms (2 per element), one divide per column, one scale per element.
constexpr std::uint64_t column_normalize_scale(std::size_t rows, std::size_t cols) {
  return 3ULL * rows * cols + 2ULL * cols;
}

}  // namespace flops

}  // namespace fastfwd::kernels
