// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/model.hpp"

#include <algorithm>

#include "fastfwd/adapters.hpp"
#include "fastfwd/errors.hpp"

namespace fastfwd {

void Batch::validate() const {
  const std::size_t n = inputs.shape()[0];
  if (targets.shape()[0] != n) {
    throw DimensionError("batch inputs " + to_string(inputs.shape()) + " and targets " + to_string(targets.shape()) +
                         " disagree on example count");
  }
  if (loss_mask && loss_mask->shape() != targets.shape()) {
    throw DimensionError("loss mask " + to_string(loss_mask->shape()) + " does not match targets " +
                         to_string(targets.shape()));
  }
}

namespace {

Tensor select_rows(const Tensor& t, std::span<const std::size_t> indices) {
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  std::vector<double> data;
  data.reserve(indices.size() * row);
  for (std::size_t idx : indices) {
    if (idx >= shape[0]) throw ContractError("example index out of range");
    auto src = t.data().subspan(idx * row, row);
    data.insert(data.end(), src.begin(), src.end());
  }
  shape[0] = indices.size();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Batch select_examples(const Batch& all, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("select_examples: empty selection");
  Batch out{select_rows(all.inputs, indices), select_rows(all.targets, indices), std::nullopt};
  if (all.loss_mask) out.loss_mask = select_rows(*all.loss_mask, indices);
  return out;
}

Tensor& ParameterStore::add(const std::string& name, Tensor value, bool trainable) {
  if (tensors_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  return tensors_.emplace(name, std::move(value)).first->second;
}

bool ParameterStore::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

Tensor& ParameterStore::at(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParameterStore::at(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParameterStore::freeze_all() {
  for (auto& [name, t] : tensors_) t.set_requires_grad(false);
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors_) {
    if (t.requires_grad()) out.push_back(name);
  }
  return out;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) {
    if (t.requires_grad()) n += t.size();
  }
  return n;
}

void ParameterStore::clear_grads() {
  for (auto& [name, t] : tensors_) t.clear_grad();
}

ForwardContext::ForwardContext(Tape& tape, ParameterStore& params,
                               const std::map<std::string, AdapterSite>& adapters)
    : tape_(tape), mutable_params_(&params), params_(params), adapters_(adapters) {}

ForwardContext::ForwardContext(Tape& tape, const ParameterStore& params,
                               const std::map<std::string, AdapterSite>& adapters)
    : tape_(tape), mutable_params_(nullptr), params_(params), adapters_(adapters) {}

Var ForwardContext::raw(const std::string& name) {
  if (mutable_params_ && tape_.recording()) return tape_.leaf(mutable_params_->at(name));
  return tape_.leaf(params_.at(name));
}

Var ForwardContext::param(const std::string& name) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  Var v;
  if (auto site = adapters_.find(name); site != adapters_.end()) {
    const AdapterSite& s = site->second;
    const Var base = raw(s.base);
    const Var b = raw(s.b_name);
    const Var a = raw(s.a_name);
    const Var m = s.variant == AdapterVariant::dora ? raw(s.m_name) : Var{};
    v = compose_effective_weight(tape_, s, base, b, a, m);
  } else {
    v = raw(name);
  }
  cache_.emplace(name, v);
  return v;
}

Model::Model(std::shared_ptr<const Architecture> arch, ParameterStore params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  if (!arch_) throw ContractError("model requires an architecture");
}

void Model::add_adapter(AdapterSite site) {
  if (adapters_.contains(site.base)) throw ContractError("parameter '" + site.base + "' already adapted");
  std::string key = site.base;
  adapters_.emplace(std::move(key), std::move(site));
}

LossEvaluation Model::evaluate(const Batch& batch, const Tape::FlopsHook& hook) const {
  Tape tape(false);
  if (hook) tape.set_flops_hook(hook);
  ForwardContext ctx(tape, params_, adapters_);
  const Var loss = arch_->loss(ctx, batch);
  const Tensor& value = tape.value(loss);
  if (!value.is_scalar()) throw ContractError("architecture produced a non-scalar loss");
  return {value.item(), tape.forward_flops(), 0};
}

LossEvaluation Model::loss_and_grad(const Batch& batch, const Tape::FlopsHook& hook) {
  Tape tape(true);
  if (hook) tape.set_flops_hook(hook);
  ForwardContext ctx(tape, params_, adapters_);
  const Var loss = arch_->loss(ctx, batch);
  const double value = tape.value(loss).item();
  const std::uint64_t fwd = tape.forward_flops();
  // Trainable parameters the loss never touched still report a zero gradient.
  for (const auto& name : params_.trainable_names()) params_.at(name).zero_grad();
  tape.backward(loss);
  return {value, fwd, tape.backward_flops()};
}

}  // namespace fastfwd
