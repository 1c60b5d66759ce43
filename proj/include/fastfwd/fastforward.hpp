// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Fast Forward schedule.
//
// After `warmup_steps` Adam steps, training repeats
//
//   interval Adam steps -> delta = W_t - W_{t-1} of the last step -> stage
//
// where a stage evaluates the tiny validation set at W_t + tau * delta for
// tau = 0, 1, 2, ... and keeps the best tau. Every probe is computed from the
// stage-entry weights (not accumulated), so the committed weights are exactly
// entry + tau* * delta. A probe that does not strictly improve on the best
// loss so far ends the stage. Adam moments are never touched by a stage.
// Once `patience` consecutive stages end with tau* = 0, stages stop for the
// rest of the run.

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "fastfwd/accounting.hpp"
#include "fastfwd/data.hpp"
#include "fastfwd/model.hpp"
#include "fastfwd/optim.hpp"

namespace fastfwd {

struct FastForwardConfig {
  bool enabled = true;
  std::size_t interval = 6;
  std::size_t warmup_steps = 6;
  std::size_t max_ff_steps = 100;
  std::size_t patience = 3;

  void validate() const;
  bool operator==(const FastForwardConfig&) const = default;
};

struct Direction {
  std::vector<double> delta;
  std::uint64_t step = 0;  // optimizer step that produced curr
};

Direction capture_direction(std::span<const double> prev, std::span<const double> curr, std::uint64_t step = 0);

// Stage-entry correlates of FF success; filled by the experiments module.
struct StageDiagnostics {
  std::optional<double> grad_norm;
  std::optional<double> cond_mean;
  std::optional<double> batch_consistency;
  std::vector<std::pair<std::string, std::optional<double>>> cond_per_matrix;
};

struct StageRecord {
  std::size_t stage = 0;
  std::uint64_t entry_step = 0;
  std::size_t tau_star = 0;
  // Validation loss at tau = 0, 1, ..., last probe. Length tau*+2 when a
  // probe failed, tau*+1 when the cap was reached.
  std::vector<double> val_losses;
  std::size_t evals = 0;
  std::uint64_t flops = 0;
  bool ended_by_cap = false;
  StageDiagnostics diagnostics;
};

// Called after every validation evaluation of a stage with (tau, loss).
using ProbeObserver = std::function<void(std::size_t tau, double loss)>;

// One line search from the current weights along `dir`. Charges every
// validation forward pass to ff_val_forward and every probe assignment
// (2 FLOPs per trainable scalar) to ff_param_set; the final revert to the
// best snapshot is a copy and is not charged. A NaN/Inf loss restores the
// entry weights and rethrows.
StageRecord fast_forward_stage(Model& model, const Direction& dir, const Batch& val, const FastForwardConfig& cfg,
                               FlopsLedger* ledger = nullptr, std::size_t stage_index = 0,
                               const ProbeObserver& observer = {});

// When to stop a run. Criteria are checked at every test evaluation.
struct StopCriterion {
  std::optional<double> target;  // fires when test loss <= target + epsilon; +inf never fires
  double epsilon = 1e-4;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> max_steps;
  // Fires when one evaluation improves on the previous by less than this.
  std::optional<double> convergence_tol;
  // Test evaluation every this many Adam steps (0: every FF interval) and,
  // when set, after every stage.
  std::size_t eval_every = 0;
  bool eval_after_stage = true;
};

StopCriterion stop_criterion_target_loss(double target, double epsilon = 1e-4);

enum class StepKind { warmup, sgd, ff_probe, ff_commit, eval };
std::string_view to_string(StepKind kind);

struct TrainLogRow {
  std::uint64_t step = 0;  // Adam steps taken so far
  StepKind kind = StepKind::sgd;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
  std::optional<double> test_loss;
  FlopsLedger flops;  // cumulative
  double wall_ms = 0.0;
};

using TrainLog = std::vector<TrainLogRow>;

enum class StopReason { target, budget, converged, hook };
std::string_view to_string(StopReason reason);

struct ScheduleOptions {
  std::size_t batch_size = 32;
  std::uint64_t data_seed = 0;
  bool wall_clock = false;  // per-row wall_ms; off keeps logs byte-stable
};

struct ScheduleHooks {
  // After each backward pass, before the Adam update; gradients are on the
  // trainable tensors.
  std::function<void(const Model&, std::uint64_t step)> after_backward;
  // Before each stage; may run extra forward/backward passes (not charged).
  std::function<StageDiagnostics(Model&, std::size_t stage)> stage_entry;
  // Replaces fast_forward_stage (used to force outcomes in policy tests).
  std::function<StageRecord(Model&, const Direction&, std::size_t stage)> stage_runner;
  // Return true to end the run after this stage.
  std::function<bool(const StageRecord&)> stop_after_stage;
};

struct ScheduleResult {
  TrainLog log;
  std::vector<StageRecord> stages;
  FlopsLedger ledger;
  StopReason reason = StopReason::budget;
  bool reached_target = false;
  std::optional<std::uint64_t> flops_at_target;
  std::optional<std::uint64_t> step_at_target;
  double final_test_loss = 0.0;
  std::uint64_t adam_steps = 0;
  std::size_t steps_per_epoch = 0;
  std::optional<std::size_t> ff_disabled_after_stage;
  double wall_ms = 0.0;
};

// Runs Adam (with Fast Forward stages when cfg.enabled) on splits.train
// until `stop` fires. ContractError when no budget or target is given.
ScheduleResult run_schedule(Model& model, AdamState& adam, const Splits& data, const FastForwardConfig& cfg,
                            const StopCriterion& stop, const ScheduleOptions& options,
                            const ScheduleHooks& hooks = {});

}  // namespace fastfwd
