// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace fastfwd::kernels {

namespace {

constexpr std::uint64_t kParallelGemmThreshold = 1ULL << 15;

inline double elem_a(std::span<const double> a, Op op, std::size_t i, std::size_t p, const GemmDims& d) {
  return op == Op::none ? a[i * d.k + p] : a[p * d.m + i];
}

inline double elem_b(std::span<const double> b, Op op, std::size_t p, std::size_t j, const GemmDims& d) {
  return op == Op::none ? b[p * d.n + j] : b[j * d.k + p];
}

// One output row, accumulated axpy-style over a row-major [k x n] B. This
// touches B contiguously yet adds the same products in the same order as the
// dot-product form of gemm_reference.
template <Op OpA>
inline double a_at(const double* a, std::size_t i, std::size_t p, const GemmDims& d) {
  return OpA == Op::none ? a[i * d.k + p] : a[p * d.m + i];
}

// One output row, accumulated axpy-style over a row-major [k x n] B. This
// touches B contiguously yet adds the same products in the same order as the
// dot-product form of gemm_reference; unrolling over p keeps that order
// because each element still sees its products one at a time, p ascending.
template <Op OpA>
inline void gemm_row(const double* a, const double* b, double* __restrict c_row, std::size_t i, const GemmDims& d) {
  std::fill(c_row, c_row + d.n, 0.0);
  std::size_t p = 0;
  for (; p + 4 <= d.k; p += 4) {
    const double a0 = a_at<OpA>(a, i, p, d);
    const double a1 = a_at<OpA>(a, i, p + 1, d);
    const double a2 = a_at<OpA>(a, i, p + 2, d);
    const double a3 = a_at<OpA>(a, i, p + 3, d);
    const double* __restrict b0 = b + p * d.n;
    const double* __restrict b1 = b0 + d.n;
    const double* __restrict b2 = b1 + d.n;
    const double* __restrict b3 = b2 + d.n;
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = c_row[j];
      acc += a0 * b0[j];
      acc += a1 * b1[j];
      acc += a2 * b2[j];
      acc += a3 * b3[j];
      c_row[j] = acc;
    }
  }
  for (; p < d.k; ++p) {
    const double aip = a_at<OpA>(a, i, p, d);
    const double* __restrict b_row = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) {
      c_row[j] += aip * b_row[j];
    }
  }
}

// B as row-major [k x n]; a transposed B is copied once so every row kernel
// can run in axpy form.
const double* untransposed_b(std::span<const double> b, Op op_b, const GemmDims& d, std::vector<double>& scratch) {
  if (op_b == Op::none) return b.data();
  scratch.resize(d.k * d.n);
  for (std::size_t j = 0; j < d.n; ++j) {
    for (std::size_t p = 0; p < d.k; ++p) scratch[p * d.n + j] = b[j * d.k + p];
  }
  return scratch.data();
}

template <Op OpA>
void gemm_rows_serial(const double* a, const double* b, double* c, const GemmDims& d) {
  for (std::size_t i = 0; i < d.m; ++i) gemm_row<OpA>(a, b, c + i * d.n, i, d);
}

template <Op OpA>
void gemm_rows_parallel(const double* a, const double* b, double* c, const GemmDims& d) {
  const auto rows = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    gemm_row<OpA>(a, b, c + static_cast<std::size_t>(i) * d.n, static_cast<std::size_t>(i), d);
  }
}

}  // namespace

void gemm_reference(std::span<const double> a, Op op_a, std::span<const double> b, Op op_b, std::span<double> c,
                    GemmDims d) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) {
        acc += elem_a(a, op_a, i, p, d) * elem_b(b, op_b, p, j, d);
      }
      c[i * d.n + j] = acc;
    }
  }
}

void gemm_parallel(std::span<const double> a, Op op_a, std::span<const double> b, Op op_b, std::span<double> c,
                   GemmDims d) {
  std::vector<double> scratch;
  const double* bb = untransposed_b(b, op_b, d, scratch);
  if (op_a == Op::none) {
    gemm_rows_parallel<Op::none>(a.data(), bb, c.data(), d);
  } else {
    gemm_rows_parallel<Op::transpose>(a.data(), bb, c.data(), d);
  }
}

void gemm(std::span<const double> a, Op op_a, std::span<const double> b, Op op_b, std::span<double> c,
          GemmDims d) {
  if (flops::gemm(d.m, d.k, d.n) >= kParallelGemmThreshold && d.m > 1 && omp_get_max_threads() > 1) {
    gemm_parallel(a, op_a, b, op_b, c, d);
    return;
  }
  std::vector<double> scratch;
  const double* bb = untransposed_b(b, op_b, d, scratch);
  if (op_a == Op::none) {
    gemm_rows_serial<Op::none>(a.data(), bb, c.data(), d);
  } else {
    gemm_rows_serial<Op::transpose>(a.data(), bb, c.data(), d);
  }
}

// ---------------------------------------------------------------------------
// attention

namespace {

struct HeadView {
  std::size_t row0;  // first activation row of this batch element
  std::size_t col0;  // first column of this head
  std::size_t stride;
};

inline HeadView head_view(const AttentionDims& d, std::size_t b, std::size_t h) {
  return {b * d.seq, h * d.head_dim, d.model_dim()};
}

inline std::size_t probs_offset(const AttentionDims& d, std::size_t b, std::size_t h) {
  return (b * d.heads + h) * d.seq * d.seq;
}

void attention_forward_head(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                            std::span<double> out, std::span<double> probs, const AttentionDims& d,
                            std::size_t b, std::size_t h) {
  const HeadView hv = head_view(d, b, h);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  double* p_base = probs.data() + probs_offset(d, b, h);
  for (std::size_t t = 0; t < d.seq; ++t) {
    const double* q_row = q.data() + (hv.row0 + t) * hv.stride + hv.col0;
    double* p_row = p_base + t * d.seq;
    double mx = -INFINITY;
    for (std::size_t u = 0; u <= t; ++u) {
      const double* k_row = k.data() + (hv.row0 + u) * hv.stride + hv.col0;
      double s = 0.0;
      for (std::size_t c = 0; c < d.head_dim; ++c) {
        s += q_row[c] * k_row[c];
      }
      s *= scale;
      p_row[u] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t u = 0; u <= t; ++u) {
      p_row[u] = std::exp(p_row[u] - mx);
      z += p_row[u];
    }
    for (std::size_t u = 0; u <= t; ++u) {
      p_row[u] /= z;
    }
    std::fill(p_row + t + 1, p_row + d.seq, 0.0);

    double* o_row = out.data() + (hv.row0 + t) * hv.stride + hv.col0;
    std::fill(o_row, o_row + d.head_dim, 0.0);
    for (std::size_t u = 0; u <= t; ++u) {
      const double* v_row = v.data() + (hv.row0 + u) * hv.stride + hv.col0;
      const double p = p_row[u];
      for (std::size_t c = 0; c < d.head_dim; ++c) {
        o_row[c] += p * v_row[c];
      }
    }
  }
}

void attention_backward_head(std::span<const double> grad_out, std::span<const double> q,
                             std::span<const double> k, std::span<const double> v, std::span<const double> probs,
                             std::span<double> dq, std::span<double> dk, std::span<double> dv,
                             const AttentionDims& d, std::size_t b, std::size_t h, std::vector<double>& dp) {
  const HeadView hv = head_view(d, b, h);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  const double* p_base = probs.data() + probs_offset(d, b, h);
  auto row = [&](std::span<double> m, std::size_t t) { return m.data() + (hv.row0 + t) * hv.stride + hv.col0; };
  auto crow = [&](std::span<const double> m, std::size_t t) {
    return m.data() + (hv.row0 + t) * hv.stride + hv.col0;
  };

  for (std::size_t t = 0; t < d.seq; ++t) {
    std::fill(row(dq, t), row(dq, t) + d.head_dim, 0.0);
    std::fill(row(dk, t), row(dk, t) + d.head_dim, 0.0);
    std::fill(row(dv, t), row(dv, t) + d.head_dim, 0.0);
  }
  dp.resize(d.seq);
  for (std::size_t t = 0; t < d.seq; ++t) {
    const double* go = crow(grad_out, t);
    const double* p_row = p_base + t * d.seq;
    double row_dot = 0.0;
    for (std::size_t u = 0; u <= t; ++u) {
      const double* v_row = crow(v, u);
      double s = 0.0;
      for (std::size_t c = 0; c < d.head_dim; ++c) {
        s += go[c] * v_row[c];
      }
      dp[u] = s;
      row_dot += p_row[u] * s;
      double* dv_row = row(dv, u);
      for (std::size_t c = 0; c < d.head_dim; ++c) {
        dv_row[c] += p_row[u] * go[c];
      }
    }
    const double* q_row = crow(q, t);
    double* dq_row = row(dq, t);
    for (std::size_t u = 0; u <= t; ++u) {
      const double ds = p_row[u] * (dp[u] - row_dot) * scale;
      const double* k_row = crow(k, u);
      double* dk_row = row(dk, u);
      for (std::size_t c = 0; c < d.head_dim; ++c) {
        dq_row[c] += ds * k_row[c];
        dk_row[c] += ds * q_row[c];
      }
    }
  }
}

}  // namespace

// The reference materializes the full masked score matrix per (batch, head)
// and applies the textbook formulas; the parallel kernel streams rows.
void attention_forward_reference(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                                 std::span<double> out, std::span<double> probs, AttentionDims d) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  const std::size_t dm = d.model_dim();
  std::vector<double> scores(d.seq * d.seq);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      for (std::size_t t = 0; t < d.seq; ++t) {
        for (std::size_t u = 0; u < d.seq; ++u) {
          if (u > t) {
            scores[t * d.seq + u] = -INFINITY;
            continue;
          }
          double s = 0.0;
          for (std::size_t c = 0; c < d.head_dim; ++c) {
            s += q[(b * d.seq + t) * dm + h * d.head_dim + c] * k[(b * d.seq + u) * dm + h * d.head_dim + c];
          }
          scores[t * d.seq + u] = s * scale;
        }
      }
      double* p = probs.data() + (b * d.heads + h) * d.seq * d.seq;
      for (std::size_t t = 0; t < d.seq; ++t) {
        double mx = -INFINITY;
        for (std::size_t u = 0; u <= t; ++u) mx = std::max(mx, scores[t * d.seq + u]);
        double z = 0.0;
        for (std::size_t u = 0; u < d.seq; ++u) {
          p[t * d.seq + u] = u <= t ? std::exp(scores[t * d.seq + u] - mx) : 0.0;
          if (u <= t) z += p[t * d.seq + u];
        }
        for (std::size_t u = 0; u <= t; ++u) p[t * d.seq + u] /= z;
      }
      for (std::size_t t = 0; t < d.seq; ++t) {
        for (std::size_t c = 0; c < d.head_dim; ++c) {
          double acc = 0.0;
          for (std::size_t u = 0; u <= t; ++u) {
            acc += p[t * d.seq + u] * v[(b * d.seq + u) * dm + h * d.head_dim + c];
          }
          out[(b * d.seq + t) * dm + h * d.head_dim + c] = acc;
        }
      }
    }
  }
}

void attention_forward_parallel(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                                std::span<double> out, std::span<double> probs, AttentionDims d) {
  const auto pairs = static_cast<std::int64_t>(d.batch * d.heads);
#pragma omp parallel for schedule(static)
  for (std::int64_t bh = 0; bh < pairs; ++bh) {
    const auto b = static_cast<std::size_t>(bh) / d.heads;
    const auto h = static_cast<std::size_t>(bh) % d.heads;
    attention_forward_head(q, k, v, out, probs, d, b, h);
  }
}

void attention_backward_reference(std::span<const double> grad_out, std::span<const double> q,
                                  std::span<const double> k, std::span<const double> v,
                                  std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                                  std::span<double> dv, AttentionDims d) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  const std::size_t dm = d.model_dim();
  auto at = [&](std::size_t b, std::size_t t, std::size_t h, std::size_t c) {
    return (b * d.seq + t) * dm + h * d.head_dim + c;
  };
  std::fill(dq.begin(), dq.end(), 0.0);
  std::fill(dk.begin(), dk.end(), 0.0);
  std::fill(dv.begin(), dv.end(), 0.0);
  std::vector<double> dp(d.seq * d.seq);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      const double* p = probs.data() + (b * d.heads + h) * d.seq * d.seq;
      // dP = dO V^T restricted to the causal triangle.
      for (std::size_t t = 0; t < d.seq; ++t) {
        for (std::size_t u = 0; u <= t; ++u) {
          double s = 0.0;
          for (std::size_t c = 0; c < d.head_dim; ++c) s += grad_out[at(b, t, h, c)] * v[at(b, u, h, c)];
          dp[t * d.seq + u] = s;
        }
      }
      // dV = P^T dO, summed over queries in ascending order.
      for (std::size_t t = 0; t < d.seq; ++t) {
        for (std::size_t u = 0; u <= t; ++u) {
          for (std::size_t c = 0; c < d.head_dim; ++c) dv[at(b, u, h, c)] += p[t * d.seq + u] * grad_out[at(b, t, h, c)];
        }
      }
      // Softmax Jacobian, then dQ = dS K and dK = dS^T Q.
      for (std::size_t t = 0; t < d.seq; ++t) {
        double row_dot = 0.0;
        for (std::size_t u = 0; u <= t; ++u) row_dot += p[t * d.seq + u] * dp[t * d.seq + u];
        for (std::size_t u = 0; u <= t; ++u) {
          const double ds = p[t * d.seq + u] * (dp[t * d.seq + u] - row_dot) * scale;
          for (std::size_t c = 0; c < d.head_dim; ++c) {
            dq[at(b, t, h, c)] += ds * k[at(b, u, h, c)];
            dk[at(b, u, h, c)] += ds * q[at(b, t, h, c)];
          }
        }
      }
    }
  }
}

void attention_backward_parallel(std::span<const double> grad_out, std::span<const double> q,
                                 std::span<const double> k, std::span<const double> v,
                                 std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                                 std::span<double> dv, AttentionDims d) {
  const auto pairs = static_cast<std::int64_t>(d.batch * d.heads);
#pragma omp parallel
  {
    std::vector<double> dp;
#pragma omp for schedule(static)
    for (std::int64_t bh = 0; bh < pairs; ++bh) {
      const auto b = static_cast<std::size_t>(bh) / d.heads;
      const auto h = static_cast<std::size_t>(bh) % d.heads;
      attention_backward_head(grad_out, q, k, v, probs, dq, dk, dv, d, b, h, dp);
    }
  }
}

void column_norms(std::span<const double> m, std::size_t rows, std::size_t cols, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] += m[i * cols + j] * m[i * cols + j];
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::sqrt(out[j]);
  }
}

}  // namespace fastfwd::kernels
