// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fastfwd/errors.hpp"

namespace fastfwd {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::synthetic:
      return "synthetic";
    case TaskKind::mlp:
      return "mlp";
    case TaskKind::char_lm:
      return "char_lm";
  }
  return "synthetic";
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Values --------------------------------------------------------------------

std::uint64_t parse_uint(std::string_view v, const std::string& key) {
  std::uint64_t x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return x;
}

double parse_real(std::string_view v, const std::string& key) {
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a number, got '" + std::string(v) + "'");
  }
  return x;
}

bool parse_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + std::string(v) + "'");
}

std::string format_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct Value {
  std::function<void(RunConfig&, std::string_view, const std::string&)> parse;
  std::function<std::string(const RunConfig&)> format;
};

template <class Get>
Value uint_value(Get get) {
  return {[get](RunConfig& c, std::string_view v, const std::string& key) {
            get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(parse_uint(v, key));
          },
          [get](const RunConfig& c) { return std::to_string(get(c)); }};
}

template <class Get>
Value real_value(Get get) {
  return {[get](RunConfig& c, std::string_view v, const std::string& key) { get(c) = parse_real(v, key); },
          [get](const RunConfig& c) { return format_real(get(c)); }};
}

template <class Get>
Value optional_real_value(Get get) {
  return {[get](RunConfig& c, std::string_view v, const std::string& key) {
            if (v == "none" || v.empty()) {
              get(c).reset();
            } else {
              get(c) = parse_real(v, key);
            }
          },
          [get](const RunConfig& c) { return get(c) ? format_real(*get(c)) : std::string("none"); }};
}

template <class Get>
Value bool_value(Get get) {
  return {[get](RunConfig& c, std::string_view v, const std::string& key) { get(c) = parse_bool(v, key); },
          [get](const RunConfig& c) { return std::string(get(c) ? "true" : "false"); }};
}

template <class Get>
Value string_value(Get get) {
  return {[get](RunConfig& c, std::string_view v, const std::string&) { get(c) = std::string(v); },
          [get](const RunConfig& c) { return get(c); }};
}

template <class Get>
Value uint_list_value(Get get) {
  return {[get](RunConfig& c, std::string_view v, const std::string& key) {
            std::vector<std::size_t> out;
            for (auto item : split_list(v)) out.push_back(static_cast<std::size_t>(parse_uint(item, key)));
            get(c) = std::move(out);
          },
          [get](const RunConfig& c) {
            std::string s;
            for (std::size_t x : get(c)) s += (s.empty() ? "" : ",") + std::to_string(x);
            return s;
          }};
}

struct Field {
  std::string section;
  std::string key;
  Value value;
  std::string full() const { return section + "." + key; }
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&f](std::string section, std::string key, Value v) {
      f.push_back(Field{std::move(section), std::move(key), std::move(v)});
    };
    add("task", "kind",
        {[](RunConfig& c, std::string_view v, const std::string& key) {
           if (v == "synthetic") {
             c.task = TaskKind::synthetic;
           } else if (v == "mlp") {
             c.task = TaskKind::mlp;
           } else if (v == "char_lm") {
             c.task = TaskKind::char_lm;
           } else {
             throw ConfigError(key, "expected synthetic, mlp or char_lm, got '" + std::string(v) + "'");
           }
         },
         [](const RunConfig& c) { return std::string(to_string(c.task)); }});
    add("task", "seed", uint_value([](auto& c) -> auto& { return c.seed; }));

    add("synthetic", "d", uint_value([](auto& c) -> auto& { return c.synthetic.d; }));
    add("synthetic", "k", uint_value([](auto& c) -> auto& { return c.synthetic.k; }));
    add("synthetic", "true_rank", uint_value([](auto& c) -> auto& { return c.synthetic.true_rank; }));
    add("synthetic", "noise_std", real_value([](auto& c) -> auto& { return c.synthetic.noise_std; }));
    add("synthetic", "examples", uint_value([](auto& c) -> auto& { return c.synthetic.examples; }));
    add("synthetic", "test_count", uint_value([](auto& c) -> auto& { return c.synthetic.test_count; }));

    add("mlp", "in_dim", uint_value([](auto& c) -> auto& { return c.mlp.in_dim; }));
    add("mlp", "hidden_dim", uint_value([](auto& c) -> auto& { return c.mlp.hidden_dim; }));
    add("mlp", "classes", uint_value([](auto& c) -> auto& { return c.mlp.classes; }));
    add("mlp", "examples", uint_value([](auto& c) -> auto& { return c.mlp.examples; }));
    add("mlp", "test_count", uint_value([](auto& c) -> auto& { return c.mlp.test_count; }));

    add("char_lm", "corpus", string_value([](auto& c) -> auto& { return c.char_lm.corpus; }));
    add("char_lm", "vocab_size", uint_value([](auto& c) -> auto& { return c.char_lm.model.vocab_size; }));
    add("char_lm", "embed_dim", uint_value([](auto& c) -> auto& { return c.char_lm.model.embed_dim; }));
    add("char_lm", "layer_count", uint_value([](auto& c) -> auto& { return c.char_lm.model.layer_count; }));
    add("char_lm", "head_count", uint_value([](auto& c) -> auto& { return c.char_lm.model.head_count; }));
    add("char_lm", "context_length", uint_value([](auto& c) -> auto& { return c.char_lm.model.context_length; }));
    add("char_lm", "test_count", uint_value([](auto& c) -> auto& { return c.char_lm.test_count; }));
    add("char_lm", "pretrain_steps", uint_value([](auto& c) -> auto& { return c.char_lm.pretrain_steps; }));
    add("char_lm", "pretrain_lr", real_value([](auto& c) -> auto& { return c.char_lm.pretrain_lr; }));

    add("adapter", "enabled", bool_value([](auto& c) -> auto& { return c.adapter_enabled; }));
    add("adapter", "variant",
        {[](RunConfig& c, std::string_view v, const std::string& key) {
           try {
             c.adapter.variant = parse_adapter_variant(v);
           } catch (const ConfigError& e) {
             throw ConfigError(key, "expected lora or dora, got '" + std::string(v) + "'");
           }
         },
         [](const RunConfig& c) { return std::string(to_string(c.adapter.variant)); }});
    add("adapter", "rank", uint_value([](auto& c) -> auto& { return c.adapter.rank; }));
    add("adapter", "alpha", optional_real_value([](auto& c) -> auto& { return c.adapter.alpha; }));
    add("adapter", "targets",
        {[](RunConfig& c, std::string_view v, const std::string&) {
           c.adapter.targets.clear();
           if (v == "attention") {
             c.adapter.selector = TargetSelector::attention;
           } else if (v == "all_2d") {
             c.adapter.selector = TargetSelector::all_2d;
           } else {
             c.adapter.selector = TargetSelector::explicit_list;
             for (auto item : split_list(v)) c.adapter.targets.emplace_back(item);
           }
         },
         [](const RunConfig& c) {
           if (c.adapter.selector != TargetSelector::explicit_list) return std::string(to_string(c.adapter.selector));
           std::string s;
           for (const auto& t : c.adapter.targets) s += (s.empty() ? "" : ",") + t;
           return s;
         }});
    add("adapter", "init_std", real_value([](auto& c) -> auto& { return c.adapter.init_std; }));

    add("optimizer", "lr", real_value([](auto& c) -> auto& { return c.adam.lr; }));
    add("optimizer", "beta1", real_value([](auto& c) -> auto& { return c.adam.beta1; }));
    add("optimizer", "beta2", real_value([](auto& c) -> auto& { return c.adam.beta2; }));
    add("optimizer", "eps", real_value([](auto& c) -> auto& { return c.adam.eps; }));
    add("optimizer", "batch_size", uint_value([](auto& c) -> auto& { return c.batch_size; }));

    add("fastforward", "enabled", bool_value([](auto& c) -> auto& { return c.ff.enabled; }));
    add("fastforward", "interval", uint_value([](auto& c) -> auto& { return c.ff.interval; }));
    add("fastforward", "warmup_steps", uint_value([](auto& c) -> auto& { return c.ff.warmup_steps; }));
    add("fastforward", "max_ff_steps", uint_value([](auto& c) -> auto& { return c.ff.max_ff_steps; }));
    add("fastforward", "patience", uint_value([](auto& c) -> auto& { return c.ff.patience; }));
    add("fastforward", "val_count", uint_value([](auto& c) -> auto& { return c.val_count; }));

    add("stop", "epochs", uint_value([](auto& c) -> auto& { return c.stop.epochs; }));
    add("stop", "ff_max_epochs", uint_value([](auto& c) -> auto& { return c.stop.ff_max_epochs; }));
    add("stop", "epsilon", real_value([](auto& c) -> auto& { return c.stop.epsilon; }));
    add("stop", "target", optional_real_value([](auto& c) -> auto& { return c.stop.target; }));
    add("stop", "eval_every", uint_value([](auto& c) -> auto& { return c.stop.eval_every; }));

    add("run", "wall_clock", bool_value([](auto& c) -> auto& { return c.wall_clock; }));

    add("experiment", "ranks", uint_list_value([](auto& c) -> auto& { return c.experiment.ranks; }));
    add("experiment", "intervals", uint_list_value([](auto& c) -> auto& { return c.experiment.intervals; }));
    add("experiment", "plane_resolution", uint_value([](auto& c) -> auto& { return c.experiment.plane_resolution; }));
    add("experiment", "plane_margin", real_value([](auto& c) -> auto& { return c.experiment.plane_margin; }));
    add("experiment", "probe_steps", uint_value([](auto& c) -> auto& { return c.experiment.probe_steps; }));
    add("experiment", "grad_history", uint_value([](auto& c) -> auto& { return c.experiment.grad_history; }));
    add("experiment", "consistency_batches",
        uint_value([](auto& c) -> auto& { return c.experiment.consistency_batches; }));
    add("experiment", "restrict_attention",
        bool_value([](auto& c) -> auto& { return c.experiment.restrict_attention; }));
    return f;
  }();
  return table;
}

void require(bool ok, const char* key, const std::string& message) {
  if (!ok) throw ConfigError(key, message);
}

}  // namespace

void validate_config(const RunConfig& c) {
  const auto& s = c.synthetic;
  require(s.d >= 1 && s.k >= 1, "synthetic.d", "dimensions must be positive");
  require(s.true_rank >= 1 && s.true_rank <= std::min(s.d, s.k), "synthetic.true_rank", "must be in [1, min(d, k)]");
  require(s.noise_std >= 0.0, "synthetic.noise_std", "must be non-negative");
  require(s.examples >= 64, "synthetic.examples", "must be at least 64");
  require(s.test_count >= 1, "synthetic.test_count", "must be positive");
  require(c.mlp.in_dim >= 1 && c.mlp.hidden_dim >= 1, "mlp.hidden_dim", "dimensions must be positive");
  require(c.mlp.classes >= 2, "mlp.classes", "must be at least 2");
  require(c.mlp.test_count >= 1, "mlp.test_count", "must be positive");
  require(c.char_lm.test_count >= 1, "char_lm.test_count", "must be positive");
  require(c.char_lm.pretrain_lr > 0.0, "char_lm.pretrain_lr", "must be positive");
  if (c.task == TaskKind::char_lm) {
    CharLmConfig probe = c.char_lm.model;
    if (probe.vocab_size == 0) probe.vocab_size = 2;
    try {
      probe.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("char_lm." + e.key(), std::string(e.what()).substr(e.key().size() + 2));
    }
  }
  require(c.adapter.rank >= 1, "adapter.rank", "must be at least 1");
  require(!c.adapter.alpha || *c.adapter.alpha > 0.0, "adapter.alpha", "must be positive");
  require(c.adapter.selector != TargetSelector::explicit_list || !c.adapter.targets.empty(), "adapter.targets",
          "empty target list");
  require(c.adapter.init_std >= 0.0, "adapter.init_std", "must be non-negative");
  require(c.adam.lr > 0.0, "optimizer.lr", "must be positive");
  require(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0, "optimizer.beta1", "must be in [0, 1)");
  require(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0, "optimizer.beta2", "must be in [0, 1)");
  require(c.adam.eps > 0.0, "optimizer.eps", "must be positive");
  require(c.batch_size >= 1, "optimizer.batch_size", "must be positive");
  require(c.ff.interval >= 1, "fastforward.interval", "must be at least 1");
  require(c.ff.patience >= 1, "fastforward.patience", "must be at least 1");
  require(c.val_count >= 1, "fastforward.val_count", "must be positive");
  require(c.stop.epochs >= 1, "stop.epochs", "must be at least 1");
  require(c.stop.ff_max_epochs >= 1, "stop.ff_max_epochs", "must be at least 1");
  require(c.stop.epsilon >= 0.0, "stop.epsilon", "must be non-negative");
  for (std::size_t r : c.experiment.ranks) require(r >= 1, "experiment.ranks", "ranks must be positive");
  for (std::size_t i : c.experiment.intervals) require(i >= 1, "experiment.intervals", "intervals must be positive");
  require(c.experiment.plane_resolution >= 2, "experiment.plane_resolution", "must be at least 2");
  require(c.experiment.plane_margin >= 0.0, "experiment.plane_margin", "must be non-negative");
  require(c.experiment.probe_steps >= 1, "experiment.probe_steps", "must be positive");
  require(c.experiment.grad_history >= 1, "experiment.grad_history", "must be positive");
  require(c.experiment.consistency_batches >= 2, "experiment.consistency_batches", "must be at least 2");
}

RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == section;
      if (!known) throw ConfigError(section, "unknown section (line " + std::to_string(line_no) + ")");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(key, "key outside any section (line " + std::to_string(line_no) + ")");
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.section == section && f.key == key) field = &f;
    }
    if (!field) throw ConfigError(section + "." + key, "unknown key (line " + std::to_string(line_no) + ")");
    field->value.parse(cfg, value, field->full());
  }
  std::filesystem::path corpus(cfg.char_lm.corpus);
  if (corpus.is_relative() && !base_dir.empty()) corpus = base_dir / corpus;
  if (!cfg.char_lm.corpus.empty()) cfg.char_lm.corpus = std::filesystem::absolute(corpus).lexically_normal().string();
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_config_text(buf.str(), dir);
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.value.format(cfg) + "\n";
  }
  return out;
}

namespace {

std::uint64_t next_seed(std::uint64_t& state) { return splitmix64(state); }

void pretrain(Model& model, const Splits& data, const RunConfig& cfg, std::uint64_t seed) {
  AdamState adam;
  adam.hp = cfg.adam;
  adam.hp.lr = cfg.char_lm.pretrain_lr;
  BatchIterator batches(data.train, cfg.batch_size, seed);
  for (std::size_t s = 0; s < cfg.char_lm.pretrain_steps; ++s) {
    model.loss_and_grad(batches.next());
    adam_step(model.parameters(), adam);
  }
  model.parameters().clear_grads();
}

Task build_base_task(const RunConfig& cfg) {
  const SeedSet seeds = derive_seeds(cfg.seed);
  std::uint64_t split_state = seeds.split;
  const std::uint64_t gen_seed = next_seed(split_state);
  const std::uint64_t split_seed = next_seed(split_state);
  switch (cfg.task) {
    case TaskKind::synthetic: {
      const auto& s = cfg.synthetic;
      SyntheticTask t = make_synthetic_lowrank(s.d, s.k, s.true_rank, s.noise_std, s.examples, gen_seed);
      return Task{std::move(t.model), split_dataset(t.data, s.test_count, cfg.val_count, split_seed)};
    }
    case TaskKind::mlp: {
      const auto& m = cfg.mlp;
      Model model = make_mlp(m.in_dim, m.hidden_dim, m.classes, seeds.init);
      const Batch all = make_classification_data(m.in_dim, m.classes, m.examples, gen_seed);
      return Task{std::move(model), split_dataset(all, m.test_count, cfg.val_count, split_seed)};
    }
    case TaskKind::char_lm: {
      const auto& c = cfg.char_lm;
      TextCorpus corpus = load_text_corpus(c.corpus, c.model.context_length, c.test_count, cfg.val_count, split_seed);
      CharLmConfig lm = c.model;
      if (lm.vocab_size == 0) lm.vocab_size = corpus.tokenizer.vocab_size();
      if (lm.vocab_size < corpus.tokenizer.vocab_size()) {
        throw ConfigError("char_lm.vocab_size", "corpus has " + std::to_string(corpus.tokenizer.vocab_size()) +
                                                    " distinct bytes, more than " + std::to_string(lm.vocab_size));
      }
      Task task{make_char_lm(lm, seeds.init), std::move(corpus.splits)};
      if (c.pretrain_steps > 0) {
        std::uint64_t order_state = seeds.data_order;
        pretrain(task.model, task.data, cfg, next_seed(order_state) ^ 0x5eedULL);
      }
      return task;
    }
  }
  throw ConfigError("task.kind", "unsupported task");
}

}  // namespace

Task build_task(const RunConfig& cfg) {
  validate_config(cfg);
  Task task = build_base_task(cfg);
  if (cfg.adapter_enabled) {
    std::uint64_t state = derive_seeds(cfg.seed).init;
    task.model = attach(std::move(task.model), cfg.adapter, next_seed(state));
  }
  return task;
}

std::size_t max_adapter_rank(const RunConfig& cfg) {
  RunConfig bare = cfg;
  bare.adapter_enabled = false;
  bare.char_lm.pretrain_steps = 0;
  const Task task = build_task(bare);
  std::size_t best = 0;
  bool first = true;
  for (const auto& name : select_targets(task.model, cfg.adapter)) {
    const Tensor& w = task.model.parameters().at(name);
    const std::size_t r = std::min(w.rows(), w.cols());
    best = first ? r : std::min(best, r);
    first = false;
  }
  return best;
}

ProtocolConfig protocol_config(const RunConfig& cfg) {
  ProtocolConfig p;
  p.adam = cfg.adam;
  p.ff = cfg.ff;
  p.schedule.batch_size = cfg.batch_size;
  p.schedule.data_seed = derive_seeds(cfg.seed).data_order;
  p.schedule.wall_clock = cfg.wall_clock;
  p.baseline_epochs = cfg.stop.epochs;
  p.ff_max_epochs = cfg.stop.ff_max_epochs;
  p.epsilon = cfg.stop.epsilon;
  p.eval_every = cfg.stop.eval_every;
  return p;
}

}  // namespace fastfwd
