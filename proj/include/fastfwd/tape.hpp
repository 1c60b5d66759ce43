// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "fastfwd/tensor.hpp"

namespace fastfwd {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

// Define-by-run reverse-mode tape. A fresh tape is built for every forward
// pass; backward() consumes it.
//
// Leaves reference caller-owned tensors (model parameters) without copying;
// those tensors must outlive the tape and stay unmodified until backward()
// returns. Every op checks its output for NaN/Inf and throws NumericError.
class Tape {
 public:
  // Called once per recorded op with the op's analytic forward FLOPs.
  using FlopsHook = std::function<void(std::string_view op, std::uint64_t flops)>;

  // With record_gradients = false no backward closures are kept and
  // backward() is a contract error.
  explicit Tape(bool record_gradients = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor& parameter);
  Var leaf(const Tensor& value);
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  // x[m x n] + bias[n] broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var tanh(Var x);
  Var gelu(Var x);
  Var sum(Var x);
  // Rows `ids` of table[v x d] -> [ids.size() x d].
  Var gather_rows(Var table, std::vector<std::size_t> ids);
  // Per-row normalization of x[m x n] with gain[n] and bias[n].
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads);
  // Mean over rows with mask > 0 of -log softmax(logits[row])[target[row]].
  // An empty mask means every row counts.
  Var cross_entropy(Var logits, std::vector<std::size_t> targets, std::vector<double> mask = {});
  Var mse(Var prediction, Var target);
  // out[i][j] = magnitude[j] * v[i][j] / ||v[:, j]||.
  Var column_normalize_scale(Var v, Var magnitude);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }

  // Seeds d(loss)/d(loss) = 1 and writes (overwrites) grad on every
  // gradient-requiring leaf tensor recorded on the tape. Clears the tape.
  void backward(Var loss);

  bool recording() const noexcept { return record_; }
  std::size_t op_count() const noexcept { return op_count_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t forward_flops() const noexcept { return forward_flops_; }
  // Engine-exact backward FLOPs of the last backward() call.
  std::uint64_t backward_flops() const noexcept { return backward_flops_; }
  void set_flops_hook(FlopsHook hook) { hook_ = std::move(hook); }

 private:
  using BackwardFn = std::function<std::uint64_t(Tape&, std::uint32_t self)>;

  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* grad_target = nullptr;
    std::vector<double> grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  Var push(std::string_view op, Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward,
           std::uint64_t flops);
  Node& node(Var v);
  const Node& node(Var v) const;
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  // Gradient buffer of an input, allocated on demand.
  std::span<double> grad_of(std::uint32_t id);
  std::span<const double> grad_out(std::uint32_t self) const { return nodes_[self].grad; }

  std::vector<Node> nodes_;
  FlopsHook hook_;
  std::uint64_t forward_flops_ = 0;
  std::uint64_t backward_flops_ = 0;
  std::size_t op_count_ = 0;
  bool record_;
};

}  // namespace fastfwd
