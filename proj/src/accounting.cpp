// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/accounting.hpp"

#include <numeric>

#include "fastfwd/adapters.hpp"
#include "fastfwd/errors.hpp"

namespace fastfwd {

std::string_view to_string(FlopsCategory c) {
  switch (c) {
    case FlopsCategory::forward_train:
      return "forward_train";
    case FlopsCategory::backward_train:
      return "backward_train";
    case FlopsCategory::optimizer_update:
      return "optimizer_update";
    case FlopsCategory::ff_val_forward:
      return "ff_val_forward";
    case FlopsCategory::ff_param_set:
      return "ff_param_set";
    case FlopsCategory::eval_forward:
      return "eval_forward";
  }
  return "unknown";
}

void FlopsLedger::charge(FlopsCategory category, std::uint64_t flops) {
  const auto i = static_cast<std::size_t>(category);
  if (i >= kFlopsCategoryCount) throw ContractError("unknown FLOPs category");
  counters_[i] += flops;
  total_ += flops;
}

std::uint64_t FlopsLedger::sum_of_categories() const {
  return std::accumulate(counters_.begin(), counters_.end(), std::uint64_t{0});
}

double savings(std::uint64_t baseline_total, std::uint64_t ff_total) {
  if (baseline_total == 0) throw ContractError("savings: baseline ledger is empty");
  return 1.0 - static_cast<double>(ff_total) / static_cast<double>(baseline_total);
}

double savings(const FlopsLedger& baseline, const FlopsLedger& ff) { return savings(baseline.total(), ff.total()); }

std::uint64_t forward_flops_estimate(const Model& model, const Batch& batch) {
  std::uint64_t total = model.architecture().forward_flops(batch);
  for (const auto& [base, site] : model.adapters()) total += composition_flops(model.parameters(), site);
  return total;
}

}  // namespace fastfwd
