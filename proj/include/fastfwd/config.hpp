// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run configuration: a sectioned key = value text file.
//
//   # comment
//   [fastforward]
//   interval = 6
//
// Lists are comma separated; optional values accept "none". Every key is
// listed (with its default) by `serialize_config(RunConfig{})`. Unknown
// sections or keys, malformed values and constraint violations raise
// ConfigError naming "section.key".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fastfwd/adapters.hpp"
#include "fastfwd/experiments.hpp"
#include "fastfwd/fastforward.hpp"
#include "fastfwd/optim.hpp"
#include "fastfwd/zoo.hpp"

namespace fastfwd {

enum class TaskKind { synthetic, mlp, char_lm };
std::string_view to_string(TaskKind kind);

struct SyntheticConfig {
  std::size_t d = 32;
  std::size_t k = 32;
  std::size_t true_rank = 4;
  double noise_std = 0.1;
  std::size_t examples = 1024;
  std::size_t test_count = 128;
  bool operator==(const SyntheticConfig&) const = default;
};

struct MlpConfig {
  std::size_t in_dim = 16;
  std::size_t hidden_dim = 64;
  std::size_t classes = 4;
  std::size_t examples = 1024;
  std::size_t test_count = 128;
  bool operator==(const MlpConfig&) const = default;
};

struct CharLmTaskConfig {
  std::string corpus = "data/tiny_corpus.txt";  // relative paths resolve against the config file
  CharLmConfig model{0, 32, 2, 4, 32};           // vocab_size 0: size of the corpus alphabet
  std::size_t test_count = 64;
  std::size_t pretrain_steps = 0;  // full-parameter Adam before adapters attach; charged to no arm
  double pretrain_lr = 3e-3;
  bool operator==(const CharLmTaskConfig&) const = default;
};

struct StopConfig {
  std::size_t epochs = 5;         // baseline budget
  std::size_t ff_max_epochs = 10;  // FF-arm safety budget
  double epsilon = 1e-4;
  std::optional<double> target;  // `train` only
  std::size_t eval_every = 0;    // 0: every FF interval
  bool operator==(const StopConfig&) const = default;
};

struct ExperimentConfig {
  std::vector<std::size_t> ranks;  // empty: powers of two up to 64 plus full rank
  std::vector<std::size_t> intervals{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t plane_resolution = 21;
  double plane_margin = 0.25;
  std::size_t probe_steps = 100;
  std::size_t grad_history = 256;
  std::size_t consistency_batches = 4;
  bool restrict_attention = false;
  bool operator==(const ExperimentConfig&) const = default;
};

struct RunConfig {
  TaskKind task = TaskKind::synthetic;
  std::uint64_t seed = 0;
  SyntheticConfig synthetic;
  MlpConfig mlp;
  CharLmTaskConfig char_lm;
  bool adapter_enabled = true;
  AdapterSpec adapter;
  AdamHyperparams adam;
  std::size_t batch_size = 32;
  FastForwardConfig ff;
  std::size_t val_count = kDefaultValCount;
  StopConfig stop;
  bool wall_clock = false;
  ExperimentConfig experiment;

  bool operator==(const RunConfig&) const = default;
};

// `base_dir` anchors relative paths (the corpus); they are stored absolute.
RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig parse_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);
void validate_config(const RunConfig& cfg);

// Builds the model (adapted when enabled) and its splits. Pure in cfg.
Task build_task(const RunConfig& cfg);
// Largest rank every selected adapter target admits.
std::size_t max_adapter_rank(const RunConfig& cfg);
ProtocolConfig protocol_config(const RunConfig& cfg);

}  // namespace fastfwd
