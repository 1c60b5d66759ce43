// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fastfwd/accounting.hpp"
#include "fastfwd/model.hpp"

namespace fastfwd {

struct AdamHyperparams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamHyperparams&) const = default;
};

// Moments keyed by parameter name. No weight decay, constant learning rate.
struct AdamState {
  AdamHyperparams hp;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t t = 0;

  bool operator==(const AdamState&) const = default;
};

// One bias-corrected Adam update of every trainable parameter from its
// current gradient. Charges kAdamFlopsPerScalar per trainable scalar to
// optimizer_update when a ledger is given. A trainable parameter without a
// gradient is a ContractError (and nothing is updated).
void adam_step(ParameterStore& params, AdamState& state, FlopsLedger* ledger = nullptr);

// params <- params - lr * grad. Not charged.
void sgd_step(ParameterStore& params, double lr);

}  // namespace fastfwd
