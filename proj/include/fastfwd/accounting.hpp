// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string_view>

#include "fastfwd/model.hpp"

namespace fastfwd {

enum class FlopsCategory : std::size_t {
  forward_train,
  backward_train,
  optimizer_update,
  ff_val_forward,
  ff_param_set,
  eval_forward,
};

inline constexpr std::size_t kFlopsCategoryCount = 6;
std::string_view to_string(FlopsCategory c);

// Accounting constants.
inline constexpr std::uint64_t kAdamFlopsPerScalar = 10;
// One multiply and one add per scalar for W_t + tau * delta.
inline constexpr std::uint64_t kParamSetFlopsPerScalar = 2;
inline constexpr std::uint64_t kBackwardPerForward = 2;

// Cumulative FLOPs per category. Backward cost is charged as 2x the paired
// forward pass; the engine-exact backward count is kept on the side and is
// not part of total().
class FlopsLedger {
 public:
  void charge(FlopsCategory category, std::uint64_t flops);
  void charge_forward(std::uint64_t flops, FlopsCategory category = FlopsCategory::forward_train) {
    charge(category, flops);
  }
  // Charges kBackwardPerForward * forward_flops to backward_train.
  void charge_backward(std::uint64_t forward_flops) {
    charge(FlopsCategory::backward_train, kBackwardPerForward * forward_flops);
  }
  void record_exact_backward(std::uint64_t flops) { exact_backward_ += flops; }

  std::uint64_t get(FlopsCategory category) const { return counters_[static_cast<std::size_t>(category)]; }
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t exact_backward() const noexcept { return exact_backward_; }
  std::uint64_t sum_of_categories() const;

  bool operator==(const FlopsLedger&) const = default;

 private:
  std::array<std::uint64_t, kFlopsCategoryCount> counters_{};
  std::uint64_t total_ = 0;
  std::uint64_t exact_backward_ = 0;
};

// 1 - ff / baseline. Negative when the FF arm spent more.
double savings(const FlopsLedger& baseline, const FlopsLedger& ff);
double savings(std::uint64_t baseline_total, std::uint64_t ff_total);

// FLOPs of one forward pass of `model` on a batch shaped like `batch`,
// including adapter composition. Matches what the tape counts.
std::uint64_t forward_flops_estimate(const Model& model, const Batch& batch);

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace fastfwd
