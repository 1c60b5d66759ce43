// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fastfwd/tape.hpp"
#include "fastfwd/tensor.hpp"

namespace fastfwd {

// A set of examples. inputs, targets (and loss_mask, when present) share
// their leading dimension, the example count.
struct Batch {
  Tensor inputs;
  Tensor targets;
  // Optional per-target-position weights (0 drops a position from the loss),
  // shaped like `targets`.
  std::optional<Tensor> loss_mask;

  std::size_t example_count() const { return inputs.shape()[0]; }
  void validate() const;
};

Batch select_examples(const Batch& all, std::span<const std::size_t> indices);

// Named parameters, kept in sorted-name order. A parameter is trainable iff
// its tensor has requires_grad set.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor value, bool trainable);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  bool is_trainable(std::string_view name) const { return at(name).requires_grad(); }
  void set_trainable(std::string_view name, bool trainable) { at(name).set_requires_grad(trainable); }
  void freeze_all();

  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t trainable_scalar_count() const;
  void clear_grads();

  std::size_t size() const { return tensors_.size(); }

 private:
  std::map<std::string, Tensor, std::less<>> tensors_;
};

enum class AdapterVariant { lora, dora };

// One adapted weight: effective = base + scale * B A (LoRA), optionally
// column-renormalized to magnitude m (DoRA).
struct AdapterSite {
  std::string base;
  AdapterVariant variant = AdapterVariant::lora;
  std::size_t rank = 0;
  double scale = 1.0;
  std::string b_name;
  std::string a_name;
  std::string m_name;  // empty for LoRA
};

// Resolves parameter names to tape values for one forward pass, composing
// adapter sites into effective weights on the way.
class ForwardContext {
 public:
  ForwardContext(Tape& tape, ParameterStore& params, const std::map<std::string, AdapterSite>& adapters);
  ForwardContext(Tape& tape, const ParameterStore& params, const std::map<std::string, AdapterSite>& adapters);

  Tape& tape() { return tape_; }
  Var param(const std::string& name);
  // Read-only tensor leaf (batch data).
  Var input(const Tensor& t) { return tape_.leaf(t); }

 private:
  Var raw(const std::string& name);

  Tape& tape_;
  ParameterStore* mutable_params_;
  const ParameterStore& params_;
  const std::map<std::string, AdapterSite>& adapters_;
  std::unordered_map<std::string, Var> cache_;
};

// The immutable part of a model: how parameters turn a batch into a loss.
class Architecture {
 public:
  virtual ~Architecture() = default;
  virtual std::string_view name() const = 0;
  virtual Var loss(ForwardContext& ctx, const Batch& batch) const = 0;
  // Analytic FLOPs of loss() on this batch shape, all weights plain.
  virtual std::uint64_t forward_flops(const Batch& batch) const = 0;
  virtual bool is_attention_matrix(std::string_view /*name*/) const { return false; }
};

struct LossEvaluation {
  double loss = 0.0;
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;  // engine-exact, 0 for evaluate()
};

// Parameters plus a shared architecture. Copying a model copies its
// parameters and adapter records; the architecture is shared.
class Model {
 public:
  Model(std::shared_ptr<const Architecture> arch, ParameterStore params);

  const Architecture& architecture() const { return *arch_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  const std::map<std::string, AdapterSite>& adapters() const { return adapters_; }
  void add_adapter(AdapterSite site);

  // Loss without gradient bookkeeping.
  LossEvaluation evaluate(const Batch& batch, const Tape::FlopsHook& hook = {}) const;
  double loss(const Batch& batch) const { return evaluate(batch).loss; }
  // Loss plus gradients on every trainable parameter.
  LossEvaluation loss_and_grad(const Batch& batch, const Tape::FlopsHook& hook = {});

 private:
  std::shared_ptr<const Architecture> arch_;
  ParameterStore params_;
  std::map<std::string, AdapterSite> adapters_;
};

}  // namespace fastfwd
