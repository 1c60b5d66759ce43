// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Analyses built on the schedule: the target-loss comparison protocol,
// sweeps, loss-plane slices, gradient similarity and stage diagnostics.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fastfwd/accounting.hpp"
#include "fastfwd/data.hpp"
#include "fastfwd/fastforward.hpp"
#include "fastfwd/model.hpp"
#include "fastfwd/optim.hpp"

namespace fastfwd {

// A ready-to-train model (adapters attached if any) with its data.
struct Task {
  Model model;
  Splits data;
};

struct ProtocolConfig {
  AdamHyperparams adam;
  FastForwardConfig ff;
  ScheduleOptions schedule;
  std::size_t baseline_epochs = 5;
  std::size_t ff_max_epochs = 10;  // safety budget for the FF arm
  double epsilon = 1e-4;
  std::size_t eval_every = 0;  // 0: every FF interval
};

// Baseline Adam for baseline_epochs, then the FF arm until its test loss is
// within epsilon of the baseline's final test loss.
struct Comparison {
  ScheduleResult baseline;
  ScheduleResult ff;
  double target = 0.0;
  std::optional<double> savings;  // empty when the FF arm never reached the target
  std::vector<double> initial_weights;
  std::vector<double> baseline_weights;
  std::vector<double> ff_weights;
};

Comparison compare_protocol(const Task& task, const ProtocolConfig& cfg, const ScheduleHooks& baseline_hooks = {},
                            const ScheduleHooks& ff_hooks = {});

struct SweepRow {
  std::string key;
  std::uint64_t baseline_flops = 0;
  std::optional<std::uint64_t> ff_flops;
  std::optional<double> savings;
};

// One comparison per rank; callers pass feasible ranks only.
std::vector<SweepRow> rank_sweep(const std::function<Task(std::size_t rank)>& make_task,
                                 const std::vector<std::size_t>& ranks, const ProtocolConfig& cfg);
// {1, 2, 4, ..., 64} up to max_rank, plus max_rank itself (full rank).
std::vector<std::size_t> default_ranks(std::size_t max_rank);

struct IntervalPoint {
  std::size_t interval = 0;
  std::optional<std::size_t> tau_star;  // second stage; empty if never reached
};

std::vector<IntervalPoint> interval_sweep(const Task& task, const std::vector<std::size_t>& intervals,
                                          const ProtocolConfig& cfg);

// Validation loss at entry + tau * dir for tau = 0..steps, ignoring the stop
// rule. Weights are left at entry; evaluations are charged to eval_forward.
std::vector<double> ff_loss_curve(Model& model, const Direction& dir, const Batch& val, std::size_t steps,
                                  FlopsLedger* ledger = nullptr);

struct DurationProbe {
  std::vector<double> curve;  // tau = 0..steps at the first stage
  std::size_t stop_rule_tau = 0;
  std::size_t entry_step = 0;
};

// Trains the FF arm up to its first stage and records the full curve there.
DurationProbe ff_duration_probe(const Task& task, const ProtocolConfig& cfg, std::size_t steps = 100);

// sigma_max / sigma_min over singular values above 1e-12; empty when none.
inline constexpr double kSingularValueFloor = 1e-12;
std::optional<double> condition_number(const Tensor& m);

// Gradient probe batches: the first `count` consecutive chunks of `train`.
std::vector<Batch> probe_batches(const Batch& train, std::size_t batch_size, std::size_t count);

// grad_norm and condition numbers from the gradients currently stored on the
// trainable tensors; batch consistency from fresh per-batch gradients (this
// overwrites the stored gradients).
StageDiagnostics stage_diagnostics(Model& model, const std::vector<Batch>& probes);
double mean_pairwise_cosine(const std::vector<std::vector<double>>& vectors);

// Bounded history of flattened gradients. When full, the oldest snapshot is
// dropped.
class GradHistory {
 public:
  explicit GradHistory(std::size_t capacity = 256);

  void push(std::uint64_t step, std::vector<double> grad);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::pair<std::uint64_t, std::vector<double>>& at(std::size_t i) const { return entries_[i]; }

 private:
  std::size_t capacity_;
  std::deque<std::pair<std::uint64_t, std::vector<double>>> entries_;
};

struct SimilarityEntry {
  std::uint64_t t = 0;
  std::uint64_t s = 0;
  std::optional<double> cosine;  // empty when either gradient is zero
};

struct GradSimilarity {
  std::vector<SimilarityEntry> entries;  // every (t, s) with s < t
  // Mean over s < t of the defined cosines for each t after the first.
  std::vector<std::pair<std::uint64_t, std::optional<double>>> running_mean;
};

GradSimilarity grad_similarity_matrix(const GradHistory& hist);

struct PlaneGrid {
  std::array<std::vector<double>, 3> anchors;  // w0, w_sgd, w_ff
  std::vector<double> e1;
  std::vector<double> e2;
  double scale = 0.0;  // ||w_ff - w0||, the axis unit
  std::array<std::pair<double, double>, 3> anchor_coords;
  std::array<double, 3> anchor_losses{};        // direct evaluation at each anchor
  std::array<double, 3> anchor_plane_losses{};  // evaluation at the anchor's plane coordinates
  std::size_t resolution = 0;
  std::vector<double> a_axis;
  std::vector<double> b_axis;
  std::vector<double> loss;  // loss[i * resolution + j] at (a_axis[i], b_axis[j])

  std::vector<double> point(double a, double b) const;  // w0 + scale (a e1 + b e2)
};

// Grid over the plane through the three anchors, covering them plus
// `margin` of the coordinate span on each side. Exactly resolution^2 grid
// evaluations are charged to eval_forward; the anchor checks are not.
// Model weights are restored afterwards.
PlaneGrid loss_plane(Model& model, const Batch& eval, std::span<const double> w0, std::span<const double> w_sgd,
                     std::span<const double> w_ff, std::size_t resolution, double margin,
                     FlopsLedger* ledger = nullptr);

struct FullRankProbe {
  ScheduleResult result;
  std::vector<std::string> trainable;
  std::size_t stages = 0;
  std::size_t zero_stages = 0;
  double zero_fraction() const { return stages ? static_cast<double>(zero_stages) / stages : 0.0; }
};

// Adapter-free FF run with every parameter, or only the attention matrices,
// trainable.
FullRankProbe fullrank_probe(Task task, bool restrict_attention, const ProtocolConfig& cfg);

}  // namespace fastfwd
