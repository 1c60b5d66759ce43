// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "fastfwd/adapters.hpp"
#include "fastfwd/errors.hpp"
#include "fastfwd/linalg.hpp"

namespace fastfwd {

namespace {

StopCriterion budget_stop(std::size_t epochs, const ProtocolConfig& cfg) {
  StopCriterion stop;
  stop.max_epochs = epochs;
  stop.epsilon = cfg.epsilon;
  stop.eval_every = cfg.eval_every;
  return stop;
}

ScheduleResult train_arm(Model& model, const Splits& data, const ProtocolConfig& cfg, bool ff_enabled,
                         const StopCriterion& stop, const ScheduleHooks& hooks) {
  FastForwardConfig ff = cfg.ff;
  ff.enabled = ff_enabled;
  AdamState adam;
  adam.hp = cfg.adam;
  return run_schedule(model, adam, data, ff, stop, cfg.schedule, hooks);
}

}  // namespace

Comparison compare_protocol(const Task& task, const ProtocolConfig& cfg, const ScheduleHooks& baseline_hooks,
                            const ScheduleHooks& ff_hooks) {
  Comparison out;
  out.initial_weights = snapshot_trainable(task.model);

  Model baseline = task.model;
  out.baseline = train_arm(baseline, task.data, cfg, false, budget_stop(cfg.baseline_epochs, cfg), baseline_hooks);
  out.baseline_weights = snapshot_trainable(baseline);
  out.target = out.baseline.final_test_loss;

  Model ff = task.model;
  StopCriterion stop = budget_stop(cfg.ff_max_epochs, cfg);
  stop.target = out.target;
  out.ff = train_arm(ff, task.data, cfg, true, stop, ff_hooks);
  out.ff_weights = snapshot_trainable(ff);
  if (out.ff.reached_target) out.savings = savings(out.baseline.ledger.total(), *out.ff.flops_at_target);
  return out;
}

std::vector<std::size_t> default_ranks(std::size_t max_rank) {
  std::vector<std::size_t> out;
  for (std::size_t r = 1; r <= 64 && r <= max_rank; r *= 2) out.push_back(r);
  if (max_rank > 0 && (out.empty() || out.back() != max_rank)) out.push_back(max_rank);
  return out;
}

std::vector<SweepRow> rank_sweep(const std::function<Task(std::size_t rank)>& make_task,
                                 const std::vector<std::size_t>& ranks, const ProtocolConfig& cfg) {
  std::vector<SweepRow> rows;
  for (std::size_t rank : ranks) {
    const Comparison c = compare_protocol(make_task(rank), cfg);
    SweepRow row;
    row.key = std::to_string(rank);
    row.baseline_flops = c.baseline.ledger.total();
    row.ff_flops = c.ff.flops_at_target;
    row.savings = c.savings;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<IntervalPoint> interval_sweep(const Task& task, const std::vector<std::size_t>& intervals,
                                          const ProtocolConfig& cfg) {
  std::vector<IntervalPoint> out;
  for (std::size_t interval : intervals) {
    ProtocolConfig local = cfg;
    local.ff.interval = interval;
    Model model = task.model;
    ScheduleHooks hooks;
    hooks.stop_after_stage = [](const StageRecord& rec) { return rec.stage >= 1; };
    const ScheduleResult r =
        train_arm(model, task.data, local, true, budget_stop(local.ff_max_epochs, local), hooks);
    IntervalPoint p;
    p.interval = interval;
    if (r.stages.size() >= 2) p.tau_star = r.stages[1].tau_star;
    out.push_back(p);
  }
  return out;
}

std::vector<double> ff_loss_curve(Model& model, const Direction& dir, const Batch& val, std::size_t steps,
                                  FlopsLedger* ledger) {
  const std::vector<double> entry = snapshot_trainable(model);
  if (dir.delta.size() != entry.size()) throw ContractError("ff_loss_curve: direction length mismatch");
  std::vector<double> curve;
  std::vector<double> probe(entry.size());
  try {
    for (std::size_t tau = 0; tau <= steps; ++tau) {
      const double t = static_cast<double>(tau);
      for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = entry[i] + t * dir.delta[i];
      restore_trainable(model, probe);
      const LossEvaluation e = model.evaluate(val);
      if (ledger) ledger->charge(FlopsCategory::eval_forward, e.forward_flops);
      curve.push_back(e.loss);
    }
  } catch (...) {
    restore_trainable(model, entry);
    throw;
  }
  restore_trainable(model, entry);
  return curve;
}

DurationProbe ff_duration_probe(const Task& task, const ProtocolConfig& cfg, std::size_t steps) {
  Model model = task.model;
  DurationProbe probe;
  bool done = false;
  ScheduleHooks hooks;
  hooks.stage_runner = [&](Model& m, const Direction& dir, std::size_t stage) {
    probe.curve = ff_loss_curve(m, dir, task.data.val, steps);
    probe.entry_step = dir.step;
    // What the stop rule would have accepted on the same curve.
    probe.stop_rule_tau = 0;
    for (std::size_t tau = 1; tau < probe.curve.size(); ++tau) {
      if (!(probe.curve[tau] < probe.curve[probe.stop_rule_tau])) break;
      probe.stop_rule_tau = tau;
    }
    done = true;
    StageRecord rec;
    rec.stage = stage;
    rec.entry_step = dir.step;
    return rec;
  };
  hooks.stop_after_stage = [](const StageRecord&) { return true; };
  train_arm(model, task.data, cfg, true, budget_stop(cfg.ff_max_epochs, cfg), hooks);
  if (!done) throw ContractError("ff_duration_probe: the run ended before its first stage");
  return probe;
}

std::optional<double> condition_number(const Tensor& m) {
  const auto sv = singular_values(m);
  double hi = 0.0;
  double lo = 0.0;
  bool any = false;
  for (double s : sv) {
    if (s <= kSingularValueFloor) continue;
    if (!any) {
      hi = lo = s;
      any = true;
    }
    hi = std::max(hi, s);
    lo = std::min(lo, s);
  }
  if (!any) return std::nullopt;
  return hi / lo;
}

std::vector<Batch> probe_batches(const Batch& train, std::size_t batch_size, std::size_t count) {
  if (batch_size == 0 || count == 0) throw ContractError("probe_batches: sizes must be positive");
  if (batch_size * count > train.example_count()) {
    throw ContractError("probe_batches: need " + std::to_string(batch_size * count) + " examples, have " +
                        std::to_string(train.example_count()));
  }
  std::vector<Batch> out;
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t i = 0; i < batch_size; ++i) idx[i] = b * batch_size + i;
    out.push_back(select_examples(train, idx));
  }
  return out;
}

double mean_pairwise_cosine(const std::vector<std::vector<double>>& vectors) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      if (auto c = cosine_similarity(vectors[i], vectors[j])) {
        sum += *c;
        ++n;
      }
    }
  }
  if (n == 0) throw NumericError("mean_pairwise_cosine: no defined pair");
  return sum / static_cast<double>(n);
}

StageDiagnostics stage_diagnostics(Model& model, const std::vector<Batch>& probes) {
  StageDiagnostics d;
  const std::vector<double> grads = snapshot_gradients(model);
  d.grad_norm = l2_norm(grads);
  const ParameterStore& params = model.parameters();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& name : params.trainable_names()) {
    const Tensor& p = params.at(name);
    if (!p.is_matrix()) continue;
    std::optional<double> c;
    if (p.has_grad()) c = condition_number(Tensor(p.shape(), std::vector<double>(p.grad().begin(), p.grad().end())));
    if (c) {
      sum += *c;
      ++n;
    }
    d.cond_per_matrix.emplace_back(name, c);
  }
  if (n > 0) d.cond_mean = sum / static_cast<double>(n);
  if (probes.size() >= 2) {
    std::vector<std::vector<double>> per_batch;
    for (const Batch& b : probes) {
      model.loss_and_grad(b);
      per_batch.push_back(snapshot_gradients(model));
    }
    try {
      d.batch_consistency = mean_pairwise_cosine(per_batch);
    } catch (const NumericError&) {
      d.batch_consistency.reset();
    }
  }
  return d;
}

GradHistory::GradHistory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("GradHistory capacity must be positive");
}

void GradHistory::push(std::uint64_t step, std::vector<double> grad) {
  if (!entries_.empty()) {
    if (step <= entries_.back().first) throw ContractError("GradHistory: steps must strictly increase");
    if (grad.size() != entries_.back().second.size()) throw ContractError("GradHistory: snapshot length changed");
  }
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.emplace_back(step, std::move(grad));
}

GradSimilarity grad_similarity_matrix(const GradHistory& hist) {
  GradSimilarity out;
  std::vector<double> norms(hist.size());
  for (std::size_t i = 0; i < hist.size(); ++i) norms[i] = l2_norm(hist.at(i).second);
  for (std::size_t t = 1; t < hist.size(); ++t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < t; ++s) {
      SimilarityEntry e{hist.at(t).first, hist.at(s).first, std::nullopt};
      if (norms[t] > 0.0 && norms[s] > 0.0) {
        const double c = dot(hist.at(t).second, hist.at(s).second) / (norms[t] * norms[s]);
        e.cosine = std::clamp(c, -1.0, 1.0);
        sum += *e.cosine;
        ++n;
      }
      out.entries.push_back(e);
    }
    out.running_mean.emplace_back(hist.at(t).first,
                                  n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt);
  }
  return out;
}

std::vector<double> PlaneGrid::point(double a, double b) const {
  const auto& w0 = anchors[0];
  std::vector<double> w(w0.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] + scale * (a * e1[i] + b * e2[i]);
  return w;
}

PlaneGrid loss_plane(Model& model, const Batch& eval, std::span<const double> w0, std::span<const double> w_sgd,
                     std::span<const double> w_ff, std::size_t resolution, double margin, FlopsLedger* ledger) {
  if (w0.size() != w_sgd.size() || w0.size() != w_ff.size()) throw ContractError("loss_plane: anchor lengths differ");
  if (resolution < 2) throw ContractError("loss_plane: resolution must be at least 2");
  if (!(margin >= 0.0)) throw ContractError("loss_plane: margin must be non-negative");
  const std::vector<double> original = snapshot_trainable(model);
  if (original.size() != w0.size()) throw ContractError("loss_plane: anchors do not match the trainable set");

  PlaneGrid g;
  g.anchors = {std::vector<double>(w0.begin(), w0.end()), std::vector<double>(w_sgd.begin(), w_sgd.end()),
               std::vector<double>(w_ff.begin(), w_ff.end())};
  std::vector<double> u(w0.size()), v(w0.size());
  for (std::size_t i = 0; i < w0.size(); ++i) {
    u[i] = w_sgd[i] - w0[i];
    v[i] = w_ff[i] - w0[i];
  }
  std::tie(g.e1, g.e2) = gram_schmidt_plane(u, v);
  g.scale = l2_norm(v);
  g.anchor_coords[0] = {0.0, 0.0};
  g.anchor_coords[1] = {dot(u, g.e1) / g.scale, dot(u, g.e2) / g.scale};
  g.anchor_coords[2] = {dot(v, g.e1) / g.scale, dot(v, g.e2) / g.scale};

  auto axis = [&](auto coord) {
    double lo = 0.0, hi = 0.0;
    for (const auto& c : g.anchor_coords) {
      lo = std::min(lo, coord(c));
      hi = std::max(hi, coord(c));
    }
    const double pad = margin * (hi - lo);
    lo -= pad;
    hi += pad;
    std::vector<double> ax(resolution);
    for (std::size_t i = 0; i < resolution; ++i) {
      ax[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
    }
    return ax;
  };
  g.a_axis = axis([](const std::pair<double, double>& c) { return c.first; });
  g.b_axis = axis([](const std::pair<double, double>& c) { return c.second; });
  g.resolution = resolution;

  try {
    for (std::size_t k = 0; k < 3; ++k) {
      restore_trainable(model, g.anchors[k]);
      g.anchor_losses[k] = model.loss(eval);
      restore_trainable(model, g.point(g.anchor_coords[k].first, g.anchor_coords[k].second));
      g.anchor_plane_losses[k] = model.loss(eval);
    }
    g.loss.reserve(resolution * resolution);
    for (double a : g.a_axis) {
      for (double b : g.b_axis) {
        restore_trainable(model, g.point(a, b));
        const LossEvaluation e = model.evaluate(eval);
        if (ledger) ledger->charge(FlopsCategory::eval_forward, e.forward_flops);
        g.loss.push_back(e.loss);
      }
    }
  } catch (...) {
    restore_trainable(model, original);
    throw;
  }
  restore_trainable(model, original);
  return g;
}

FullRankProbe fullrank_probe(Task task, bool restrict_attention, const ProtocolConfig& cfg) {
  if (!task.model.adapters().empty()) throw ContractError("fullrank_probe expects a model without adapters");
  ParameterStore& params = task.model.parameters();
  if (restrict_attention) {
    params.freeze_all();
    for (const auto& name : params.names()) {
      if (task.model.architecture().is_attention_matrix(name)) params.set_trainable(name, true);
    }
    if (params.trainable_names().empty()) {
      throw ConfigError("restrict_attention", "model '" + std::string(task.model.architecture().name()) +
                                                  "' has no attention matrices");
    }
  } else {
    for (const auto& name : params.names()) params.set_trainable(name, true);
  }
  FullRankProbe out;
  out.trainable = params.trainable_names();
  out.result = train_arm(task.model, task.data, cfg, true, budget_stop(cfg.baseline_epochs, cfg), {});
  out.stages = out.result.stages.size();
  for (const auto& s : out.result.stages) out.zero_stages += s.tau_star == 0 ? 1 : 0;
  return out;
}

}  // namespace fastfwd
