// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>

#include "fastfwd/adapters.hpp"
#include "fastfwd/config.hpp"
#include "fastfwd/errors.hpp"
#include "fastfwd/experiments.hpp"
#include "fastfwd/io.hpp"

namespace fastfwd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Invocation {
  std::string command;
  fs::path config_path;
  RunConfig cfg;
  fs::path out_dir;
  bool quiet = false;
};

// Files written by a command, hashed into the manifest.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  fs::path path(const std::string& name) {
    names_.push_back(name);
    return dir_ / name;
  }
  void csv(const std::string& name, const CsvSchema& schema, const std::vector<CsvRow>& rows) {
    write_csv(path(name), schema, rows);
  }
  void json_file(const std::string& name, const json& j) { write_text(path(name), j.dump(2) + "\n"); }

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt_json(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(nullptr); }

json ledger_json(const FlopsLedger& l) {
  json j;
  for (std::size_t i = 0; i < kFlopsCategoryCount; ++i) {
    const auto c = static_cast<FlopsCategory>(i);
    j[std::string(to_string(c))] = l.get(c);
  }
  j["total"] = l.total();
  j["exact_backward_side"] = l.exact_backward();
  return j;
}

// Wall time only with [run] wall_clock, so summaries stay byte-stable.
json result_json(const ScheduleResult& r, bool wall_clock) {
  std::size_t zero = 0;
  for (const auto& s : r.stages) zero += s.tau_star == 0 ? 1 : 0;
  json j;
  j["flops"] = ledger_json(r.ledger);
  j["final_test_loss"] = r.final_test_loss;
  j["adam_steps"] = r.adam_steps;
  j["steps_per_epoch"] = r.steps_per_epoch;
  j["stop_reason"] = std::string(to_string(r.reason));
  j["reached_target"] = r.reached_target;
  j["flops_at_target"] = opt_json(r.flops_at_target);
  j["step_at_target"] = opt_json(r.step_at_target);
  j["stages"] = r.stages.size();
  j["zero_tau_stages"] = zero;
  j["ff_disabled_after_stage"] =
      r.ff_disabled_after_stage ? json(*r.ff_disabled_after_stage) : json(nullptr);
  if (wall_clock) j["wall_ms"] = r.wall_ms;
  return j;
}

// ---------------------------------------------------------------------------
// subcommands

void cmd_train(const Invocation& inv, Outputs& out, std::ostream& log) {
  const RunConfig& cfg = inv.cfg;
  Task task = build_task(cfg);
  const ProtocolConfig p = protocol_config(cfg);
  AdamState adam;
  adam.hp = p.adam;
  StopCriterion stop;
  stop.max_epochs = cfg.stop.epochs;
  stop.target = cfg.stop.target;
  stop.epsilon = cfg.stop.epsilon;
  stop.eval_every = cfg.stop.eval_every;
  const ScheduleResult r = run_schedule(task.model, adam, task.data, cfg.ff, stop, p.schedule);
  out.csv("trainlog.csv", kTrainLogSchema, trainlog_rows(r.log));
  out.csv("stages.csv", kStagesSchema, stage_rows(r.stages));
  if (!task.model.adapters().empty()) save_adapter_checkpoint(task.model, cfg.adapter, out.path("adapter.ckpt"));
  json s;
  s["fast_forward"] = cfg.ff.enabled;
  s["run"] = result_json(r, cfg.wall_clock);
  out.json_file("summary.json", s);
  if (!inv.quiet) {
    log << "train: " << r.adam_steps << " Adam steps, " << r.stages.size() << " FF stages, test loss "
        << format_csv_number(r.final_test_loss) << ", FLOPs " << r.ledger.total() << "\n";
  }
}

void cmd_compare(const Invocation& inv, Outputs& out, std::ostream& log) {
  const Task task = build_task(inv.cfg);
  const Comparison c = compare_protocol(task, protocol_config(inv.cfg));
  out.csv("trainlog_baseline.csv", kTrainLogSchema, trainlog_rows(c.baseline.log));
  out.csv("trainlog_ff.csv", kTrainLogSchema, trainlog_rows(c.ff.log));
  out.csv("stages.csv", kStagesSchema, stage_rows(c.ff.stages));
  json s;
  s["target_test_loss"] = c.target;
  s["epsilon"] = inv.cfg.stop.epsilon;
  s["baseline"] = result_json(c.baseline, inv.cfg.wall_clock);
  s["ff"] = result_json(c.ff, inv.cfg.wall_clock);
  s["savings"] = opt_json(c.savings);
  out.json_file("summary.json", s);
  if (!inv.quiet) {
    log << "compare: target " << format_csv_number(c.target) << ", baseline FLOPs " << c.baseline.ledger.total()
        << ", FF FLOPs " << (c.ff.flops_at_target ? std::to_string(*c.ff.flops_at_target) : "n/a") << ", savings "
        << (c.savings ? format_csv_number(*c.savings) : "n/a") << "\n";
  }
}

void cmd_sweep_rank(const Invocation& inv, Outputs& out, std::ostream& log) {
  const std::size_t max_rank = max_adapter_rank(inv.cfg);
  std::vector<std::size_t> ranks = inv.cfg.experiment.ranks;
  if (ranks.empty()) ranks = default_ranks(max_rank);
  for (std::size_t r : ranks) {
    if (r > max_rank) {
      throw ConfigError("experiment.ranks", "rank " + std::to_string(r) + " exceeds the largest feasible rank " +
                                                std::to_string(max_rank));
    }
  }
  const auto rows = rank_sweep(
      [&](std::size_t rank) {
        RunConfig c = inv.cfg;
        c.adapter.rank = rank;
        return build_task(c);
      },
      ranks, protocol_config(inv.cfg));
  out.csv("sweep.csv", kSweepSchema, sweep_rows(rows));
  if (!inv.quiet) {
    for (const auto& r : rows) {
      log << "rank " << r.key << ": savings " << (r.savings ? format_csv_number(*r.savings) : "n/a") << "\n";
    }
  }
}

void cmd_sweep_interval(const Invocation& inv, Outputs& out, std::ostream& log) {
  const Task task = build_task(inv.cfg);
  const auto points = interval_sweep(task, inv.cfg.experiment.intervals, protocol_config(inv.cfg));
  std::vector<CsvRow> rows;
  for (const auto& p : points) {
    rows.push_back({static_cast<std::uint64_t>(p.interval),
                    p.tau_star ? CsvCell(static_cast<std::uint64_t>(*p.tau_star)) : CsvCell(std::monostate{})});
  }
  out.csv("intervals.csv", {"interval", "tau_star"}, rows);
  if (!inv.quiet) log << "sweep-interval: " << points.size() << " intervals\n";
}

void cmd_plane(const Invocation& inv, Outputs& out, std::ostream& log) {
  const Task task = build_task(inv.cfg);
  const Comparison c = compare_protocol(task, protocol_config(inv.cfg));
  Model model = task.model;
  FlopsLedger ledger;
  const PlaneGrid g = loss_plane(model, task.data.test, c.initial_weights, c.baseline_weights, c.ff_weights,
                                 inv.cfg.experiment.plane_resolution, inv.cfg.experiment.plane_margin, &ledger);
  out.csv("plane.csv", kPlaneSchema, plane_rows(g));
  json a = json::array();
  const char* names[] = {"w0", "w_sgd", "w_ff"};
  for (std::size_t k = 0; k < 3; ++k) {
    a.push_back({{"name", names[k]},
                 {"a", g.anchor_coords[k].first},
                 {"b", g.anchor_coords[k].second},
                 {"loss", g.anchor_losses[k]},
                 {"plane_loss", g.anchor_plane_losses[k]}});
  }
  json s;
  s["anchors"] = a;
  s["scale"] = g.scale;
  s["resolution"] = g.resolution;
  s["margin"] = inv.cfg.experiment.plane_margin;
  s["eval_flops"] = ledger.get(FlopsCategory::eval_forward);
  out.json_file("plane_anchors.json", s);
  if (!inv.quiet) log << "plane: " << g.loss.size() << " cells, axis unit " << format_csv_number(g.scale) << "\n";
}

void cmd_grad_sim(const Invocation& inv, Outputs& out, std::ostream& log) {
  const Task task = build_task(inv.cfg);
  GradHistory base_hist(inv.cfg.experiment.grad_history);
  GradHistory ff_hist(inv.cfg.experiment.grad_history);
  ScheduleHooks base_hooks;
  base_hooks.after_backward = [&](const Model& m, std::uint64_t step) { base_hist.push(step, snapshot_gradients(m)); };
  ScheduleHooks ff_hooks;
  ff_hooks.after_backward = [&](const Model& m, std::uint64_t step) { ff_hist.push(step, snapshot_gradients(m)); };
  compare_protocol(task, protocol_config(inv.cfg), base_hooks, ff_hooks);
  const GradSimilarity ff_sim = grad_similarity_matrix(ff_hist);
  const GradSimilarity base_sim = grad_similarity_matrix(base_hist);
  out.csv("gradsim.csv", kGradSimSchema, gradsim_rows(ff_sim));
  out.csv("gradsim_baseline.csv", kGradSimSchema, gradsim_rows(base_sim));
  std::vector<CsvRow> means;
  for (const auto& [name, sim] : {std::pair{"ff", &ff_sim}, std::pair{"baseline", &base_sim}}) {
    for (const auto& [t, m] : sim->running_mean) {
      means.push_back({std::string(name), t, m ? CsvCell(*m) : CsvCell(std::monostate{})});
    }
  }
  out.csv("gradsim_mean.csv", {"arm", "t", "mean_cosine"}, means);
  if (!inv.quiet) log << "grad-sim: " << ff_hist.size() << " FF and " << base_hist.size() << " baseline snapshots\n";
}

void cmd_ff_probe(const Invocation& inv, Outputs& out, std::ostream& log) {
  const Task task = build_task(inv.cfg);
  const ProtocolConfig p = protocol_config(inv.cfg);
  const DurationProbe probe = ff_duration_probe(task, p, inv.cfg.experiment.probe_steps);
  std::vector<CsvRow> rows;
  for (std::size_t tau = 0; tau < probe.curve.size(); ++tau) {
    rows.push_back({static_cast<std::uint64_t>(tau), probe.curve[tau]});
  }
  out.csv("ff_probe.csv", {"tau", "val_loss"}, rows);

  // tau* across the stages of an ordinary FF run.
  Model model = task.model;
  AdamState adam;
  adam.hp = p.adam;
  StopCriterion stop;
  stop.max_epochs = inv.cfg.stop.epochs;
  stop.eval_every = p.eval_every;
  const ScheduleResult r = run_schedule(model, adam, task.data, p.ff, stop, p.schedule);
  out.csv("stages.csv", kStagesSchema, stage_rows(r.stages));

  std::size_t argmin = 0;
  for (std::size_t tau = 1; tau < probe.curve.size(); ++tau) {
    if (probe.curve[tau] < probe.curve[argmin]) argmin = tau;
  }
  json s;
  s["entry_step"] = probe.entry_step;
  s["stop_rule_tau"] = probe.stop_rule_tau;
  s["curve_argmin_tau"] = argmin;
  s["steps"] = inv.cfg.experiment.probe_steps;
  out.json_file("summary.json", s);
  if (!inv.quiet) {
    log << "ff-probe: stop rule tau* " << probe.stop_rule_tau << ", curve minimum at tau " << argmin << "\n";
  }
}

void cmd_fullrank_probe(const Invocation& inv, Outputs& out, std::ostream& log) {
  RunConfig cfg = inv.cfg;
  cfg.adapter_enabled = false;
  const FullRankProbe probe = fullrank_probe(build_task(cfg), cfg.experiment.restrict_attention, protocol_config(cfg));
  out.csv("trainlog.csv", kTrainLogSchema, trainlog_rows(probe.result.log));
  out.csv("stages.csv", kStagesSchema, stage_rows(probe.result.stages));
  json s;
  s["restrict_attention"] = cfg.experiment.restrict_attention;
  s["trainable"] = probe.trainable;
  s["stages"] = probe.stages;
  s["zero_tau_stages"] = probe.zero_stages;
  s["zero_tau_fraction"] = probe.zero_fraction();
  s["run"] = result_json(probe.result, cfg.wall_clock);
  out.json_file("summary.json", s);
  if (!inv.quiet) {
    log << "fullrank-probe: " << probe.zero_stages << " of " << probe.stages << " stages with tau* = 0\n";
  }
}

void cmd_diagnostics(const Invocation& inv, Outputs& out, std::ostream& log) {
  const RunConfig& cfg = inv.cfg;
  Task task = build_task(cfg);
  const ProtocolConfig p = protocol_config(cfg);
  const std::vector<Batch> probes = probe_batches(task.data.train, cfg.batch_size, cfg.experiment.consistency_batches);
  ScheduleHooks hooks;
  hooks.stage_entry = [&](Model& m, std::size_t) { return stage_diagnostics(m, probes); };
  AdamState adam;
  adam.hp = p.adam;
  StopCriterion stop;
  stop.max_epochs = cfg.stop.epochs;
  stop.eval_every = p.eval_every;
  const ScheduleResult r = run_schedule(task.model, adam, task.data, p.ff, stop, p.schedule, hooks);
  out.csv("stages.csv", kStagesSchema, stage_rows(r.stages));
  out.csv("trainlog.csv", kTrainLogSchema, trainlog_rows(r.log));
  std::vector<CsvRow> cond;
  for (const auto& s : r.stages) {
    for (const auto& [name, c] : s.diagnostics.cond_per_matrix) {
      cond.push_back({static_cast<std::uint64_t>(s.stage), name, c ? CsvCell(*c) : CsvCell(std::monostate{})});
    }
  }
  out.csv("condition_numbers.csv", {"stage", "parameter", "cond"}, cond);
  if (!inv.quiet) log << "diagnostics: " << r.stages.size() << " stages\n";
}

using Command = void (*)(const Invocation&, Outputs&, std::ostream&);

const std::map<std::string, std::pair<Command, const char*>>& commands() {
  static const std::map<std::string, std::pair<Command, const char*>> table = {
      {"train", {cmd_train, "Train one arm (baseline or Fast Forward, per config)"}},
      {"compare", {cmd_compare, "Baseline vs Fast Forward under the target-loss protocol"}},
      {"sweep-rank", {cmd_sweep_rank, "Compare arms across adapter ranks"}},
      {"sweep-interval", {cmd_sweep_interval, "tau* of the second stage per FF interval"}},
      {"plane", {cmd_plane, "Test loss on the plane through W0, W_SGD and W_FF"}},
      {"grad-sim", {cmd_grad_sim, "Cosine similarity between gradients over training"}},
      {"ff-probe", {cmd_ff_probe, "Validation loss over 0..N simulated steps at the first stage"}},
      {"fullrank-probe", {cmd_fullrank_probe, "Adapter-free FF run (all or attention-only parameters)"}},
      {"diagnostics", {cmd_diagnostics, "Gradient norm, condition number and batch consistency per stage"}},
  };
  return table;
}

void write_manifest(const Invocation& inv, Outputs& out) {
  const SeedSet seeds = derive_seeds(inv.cfg.seed);
  json files = json::object();
  for (const auto& name : out.names()) files[name] = sha256_file(out.dir() / name);
  const std::string config_text = serialize_config(inv.cfg);
  json m;
  m["command"] = inv.command;
  m["config_path"] = inv.config_path.string();
  m["config"] = config_text;
  m["config_sha256"] = sha256_hex(config_text);
  m["seed"] = inv.cfg.seed;
  m["seeds"] = {{"init", seeds.init}, {"data_order", seeds.data_order}, {"split", seeds.split}};
  m["files"] = files;
  write_text(out.dir() / "manifest.json", m.dump(2) + "\n");
}

int run_command(const Invocation& inv, std::ostream& out) {
  std::error_code ec;
  fs::create_directories(inv.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + inv.out_dir.string() + ": " + ec.message());
  Outputs outputs(inv.out_dir);
  commands().at(inv.command).first(inv, outputs, out);
  write_manifest(inv, outputs);
  if (!inv.quiet) out << "wrote " << inv.out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fast Forward low-rank finetuning experiments", "fastfwd"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  for (const auto& [name, entry] : commands()) {
    CLI::App* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_path, "Run configuration file")->required();
    sub->add_option("--seed", seed, "Override [task] seed");
    sub->add_option("--out", out_dir, "Output directory (default: $FASTFWD_OUT/<command> or out/<command>)");
    sub->add_flag("--quiet", quiet, "Suppress progress output");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    Invocation inv;
    inv.command = app.get_subcommands().front()->get_name();
    inv.config_path = config_path;
    inv.quiet = quiet;
    inv.cfg = parse_config(config_path);
    if (seed) inv.cfg.seed = *seed;
    if (!out_dir.empty()) {
      inv.out_dir = out_dir;
    } else {
      const char* root = std::getenv("FASTFWD_OUT");
      inv.out_dir = fs::path(root && *root ? root : "out") / inv.command;
    }
    return run_command(inv, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ContractError& e) {
    err << "contract error: " << e.what() << "\n";
    return kExitContract;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fastfwd
