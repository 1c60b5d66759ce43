// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/optim.hpp"

#include <cmath>

#include "fastfwd/errors.hpp"

namespace fastfwd {

namespace {

void require_gradients(const ParameterStore& params, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    if (!params.at(name).has_grad()) throw ContractError("parameter '" + name + "' has no gradient");
  }
}

}  // namespace

void adam_step(ParameterStore& params, AdamState& state, FlopsLedger* ledger) {
  const auto names = params.trainable_names();
  require_gradients(params, names);
  const AdamHyperparams& hp = state.hp;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);
  for (const auto& name : names) {
    Tensor& p = params.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    if (m.size() != p.size()) throw ContractError("Adam state for '" + name + "' has the wrong size");
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
    }
  }
  if (ledger) ledger->charge(FlopsCategory::optimizer_update, kAdamFlopsPerScalar * params.trainable_scalar_count());
}

void sgd_step(ParameterStore& params, double lr) {
  const auto names = params.trainable_names();
  require_gradients(params, names);
  for (const auto& name : names) {
    Tensor& p = params.at(name);
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

}  // namespace fastfwd
