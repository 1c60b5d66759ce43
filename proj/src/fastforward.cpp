// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/fastforward.hpp"

#include <cmath>
#include <limits>

#include "fastfwd/adapters.hpp"
#include "fastfwd/errors.hpp"

namespace fastfwd {

void FastForwardConfig::validate() const {
  if (interval < 1) throw ConfigError("interval", "must be at least 1");
  if (patience < 1) throw ConfigError("patience", "must be at least 1");
}

Direction capture_direction(std::span<const double> prev, std::span<const double> curr, std::uint64_t step) {
  if (prev.size() != curr.size()) {
    throw ContractError("capture_direction: snapshots of length " + std::to_string(prev.size()) + " and " +
                        std::to_string(curr.size()));
  }
  Direction dir;
  dir.step = step;
  dir.delta.resize(curr.size());
  for (std::size_t i = 0; i < curr.size(); ++i) dir.delta[i] = curr[i] - prev[i];
  return dir;
}

StageRecord fast_forward_stage(Model& model, const Direction& dir, const Batch& val, const FastForwardConfig& cfg,
                               FlopsLedger* ledger, std::size_t stage_index, const ProbeObserver& observer) {
  const std::vector<double> entry = snapshot_trainable(model);
  if (dir.delta.size() != entry.size()) {
    throw ContractError("fast_forward_stage: direction has " + std::to_string(dir.delta.size()) +
                        " entries, model has " + std::to_string(entry.size()) + " trainable scalars");
  }
  const std::uint64_t set_cost = kParamSetFlopsPerScalar * entry.size();

  StageRecord rec;
  rec.stage = stage_index;
  rec.entry_step = dir.step;

  auto evaluate = [&](std::size_t tau) {
    const LossEvaluation e = model.evaluate(val);
    if (ledger) ledger->charge(FlopsCategory::ff_val_forward, e.forward_flops);
    rec.flops += e.forward_flops;
    rec.evals += 1;
    rec.val_losses.push_back(e.loss);
    if (observer) observer(tau, e.loss);
    return e.loss;
  };

  try {
    double best = evaluate(0);
    std::vector<double> best_weights = entry;
    std::vector<double> probe(entry.size());
    std::size_t tau = 1;
    for (; tau <= cfg.max_ff_steps; ++tau) {
      const double t = static_cast<double>(tau);
      for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = entry[i] + t * dir.delta[i];
      restore_trainable(model, probe);
      if (ledger) ledger->charge(FlopsCategory::ff_param_set, set_cost);
      rec.flops += set_cost;
      const double loss = evaluate(tau);
      if (!(loss < best)) {
        restore_trainable(model, best_weights);
        break;
      }
      best = loss;
      best_weights.swap(probe);
      rec.tau_star = tau;
    }
    rec.ended_by_cap = tau > cfg.max_ff_steps;
  } catch (const NumericError&) {
    restore_trainable(model, entry);
    throw;
  }
  return rec;
}

StopCriterion stop_criterion_target_loss(double target, double epsilon) {
  StopCriterion stop;
  stop.target = target;
  stop.epsilon = epsilon;
  return stop;
}

std::string_view to_string(StepKind kind) {
  switch (kind) {
    case StepKind::warmup:
      return "warmup";
    case StepKind::sgd:
      return "sgd";
    case StepKind::ff_probe:
      return "ff_probe";
    case StepKind::ff_commit:
      return "ff_commit";
    case StepKind::eval:
      return "eval";
  }
  return "unknown";
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::target:
      return "target";
    case StopReason::budget:
      return "budget";
    case StopReason::converged:
      return "converged";
    case StopReason::hook:
      return "hook";
  }
  return "unknown";
}

namespace {

class ScheduleRun {
 public:
  ScheduleRun(Model& model, AdamState& adam, const Splits& data, const FastForwardConfig& cfg,
              const StopCriterion& stop, const ScheduleOptions& options, const ScheduleHooks& hooks)
      : model_(model),
        adam_(adam),
        data_(data),
        cfg_(cfg),
        stop_(stop),
        options_(options),
        hooks_(hooks),
        batches_(data.train, options.batch_size, options.data_seed) {}

  ScheduleResult run() {
    cfg_.validate();
    if (!stop_.max_epochs && !stop_.max_steps && !has_target() && !stop_.convergence_tol &&
        !hooks_.stop_after_stage) {
      throw ContractError("run_schedule: stop criterion has no budget, target or convergence rule");
    }
    std::uint64_t budget = std::numeric_limits<std::uint64_t>::max();
    if (stop_.max_epochs) budget = std::min<std::uint64_t>(budget, *stop_.max_epochs * batches_.steps_per_epoch());
    if (stop_.max_steps) budget = std::min<std::uint64_t>(budget, *stop_.max_steps);
    const std::size_t eval_every = stop_.eval_every ? stop_.eval_every : cfg_.interval;

    result_.steps_per_epoch = batches_.steps_per_epoch();
    bool ff_active = cfg_.enabled;
    std::size_t zero_streak = 0;
    std::vector<double> prev;

    if (evaluate_and_check()) return finish();
    while (step_ < budget) {
      const bool in_warmup = step_ < cfg_.warmup_steps;
      const bool stage_follows = ff_active && !in_warmup && step_ + 1 >= cfg_.warmup_steps + cfg_.interval &&
                                 (step_ + 1 - cfg_.warmup_steps) % cfg_.interval == 0;
      if (stage_follows) prev = snapshot_trainable(model_);

      const Batch batch = batches_.next();
      const LossEvaluation e = model_.loss_and_grad(batch);
      ledger_.charge_forward(e.forward_flops);
      ledger_.charge_backward(e.forward_flops);
      ledger_.record_exact_backward(e.backward_flops);
      if (hooks_.after_backward) hooks_.after_backward(model_, step_ + 1);
      adam_step(model_.parameters(), adam_, &ledger_);
      ++step_;
      ++version_;
      TrainLogRow row = make_row(cfg_.enabled && in_warmup ? StepKind::warmup : StepKind::sgd);
      row.train_loss = e.loss;
      log_.push_back(row);

      if (step_ % eval_every == 0 && evaluate_and_check()) return finish();

      if (!stage_follows) continue;
      const Direction dir = capture_direction(prev, snapshot_trainable(model_), step_);
      const std::size_t index = stages_.size();
      StageDiagnostics diag;
      if (hooks_.stage_entry) diag = hooks_.stage_entry(model_, index);
      StageRecord rec;
      if (hooks_.stage_runner) {
        rec = hooks_.stage_runner(model_, dir, index);
      } else {
        rec = fast_forward_stage(model_, dir, data_.val, cfg_, &ledger_, index, [this](std::size_t, double loss) {
          TrainLogRow probe = make_row(StepKind::ff_probe);
          probe.val_loss = loss;
          log_.push_back(probe);
        });
      }
      rec.diagnostics = std::move(diag);
      if (rec.tau_star > 0) ++version_;
      TrainLogRow commit = make_row(StepKind::ff_commit);
      if (!rec.val_losses.empty()) commit.val_loss = rec.val_losses[rec.tau_star];
      log_.push_back(commit);
      stages_.push_back(rec);

      zero_streak = rec.tau_star == 0 ? zero_streak + 1 : 0;
      if (zero_streak >= cfg_.patience) {
        ff_active = false;
        result_.ff_disabled_after_stage = index;
      }
      if (stop_.eval_after_stage && evaluate_and_check()) return finish();
      if (hooks_.stop_after_stage && hooks_.stop_after_stage(rec)) {
        result_.reason = StopReason::hook;
        return finish();
      }
    }
    if (evaluated_version_ != version_) evaluate_and_check();
    if (!result_.reached_target && result_.reason != StopReason::converged) result_.reason = StopReason::budget;
    return finish();
  }

 private:
  TrainLogRow make_row(StepKind kind) const {
    TrainLogRow row;
    row.step = step_;
    row.kind = kind;
    row.flops = ledger_;
    if (options_.wall_clock) row.wall_ms = clock_.elapsed_ms();
    return row;
  }

  // An infinite target never fires.
  bool has_target() const { return stop_.target && std::isfinite(*stop_.target); }

  // Test evaluation (not charged). Returns true when the run should stop.
  bool evaluate_and_check() {
    if (evaluated_version_ == version_) return false;
    const double loss = model_.loss(data_.test);
    evaluated_version_ = version_;
    TrainLogRow row = make_row(StepKind::eval);
    row.test_loss = loss;
    log_.push_back(row);
    const std::optional<double> previous = last_test_;
    last_test_ = loss;
    result_.final_test_loss = loss;
    if (has_target() && loss <= *stop_.target + stop_.epsilon) {
      result_.reached_target = true;
      result_.flops_at_target = ledger_.total();
      result_.step_at_target = step_;
      result_.reason = StopReason::target;
      return true;
    }
    if (stop_.convergence_tol && previous && *previous - loss < *stop_.convergence_tol) {
      result_.reason = StopReason::converged;
      return true;
    }
    return false;
  }

  ScheduleResult finish() {
    result_.log = std::move(log_);
    result_.stages = std::move(stages_);
    result_.ledger = ledger_;
    result_.adam_steps = step_;
    result_.wall_ms = clock_.elapsed_ms();
    return std::move(result_);
  }

  Model& model_;
  AdamState& adam_;
  const Splits& data_;
  const FastForwardConfig& cfg_;
  const StopCriterion& stop_;
  const ScheduleOptions& options_;
  const ScheduleHooks& hooks_;
  BatchIterator batches_;
  FlopsLedger ledger_;
  TrainLog log_;
  std::vector<StageRecord> stages_;
  ScheduleResult result_;
  Stopwatch clock_;
  std::uint64_t step_ = 0;
  // Bumped whenever the weights change; skips redundant test evaluations.
  std::uint64_t version_ = 1;
  std::uint64_t evaluated_version_ = 0;
  std::optional<double> last_test_;
};

}  // namespace

ScheduleResult run_schedule(Model& model, AdamState& adam, const Splits& data, const FastForwardConfig& cfg,
                            const StopCriterion& stop, const ScheduleOptions& options, const ScheduleHooks& hooks) {
  return ScheduleRun(model, adam, data, cfg, stop, options, hooks).run();
}

}  // namespace fastfwd
