// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Low-rank reparameterizations of frozen base weights.
//
// For a base weight W0 of shape [d x k] (layers compute x W, so columns are
// output features) a LoRA site trains B [d x r] and A [r x k]:
//
//   W = W0 + (alpha / r) B A
//
// A DoRA site additionally trains a per-column magnitude m [k]:
//
//   V = W0 + (alpha / r) B A,   W[:, j] = m[j] * V[:, j] / ||V[:, j]||_2
//
// with no epsilon in the norm; a zero column is a NumericError. B starts at
// zero, A ~ N(0, init_std), m = column norms of W0, so the effective weight
// equals W0 bit for bit at attach time.
//
// Adapter tensors are named "<site>.lora_B", "<site>.lora_A" and
// "<site>.dora_m". The flat trainable vector used by snapshot/restore walks
// trainable parameters in sorted-name order, each in row-major order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fastfwd/model.hpp"

namespace fastfwd {

enum class TargetSelector { attention, all_2d, explicit_list };

struct AdapterSpec {
  std::size_t rank = 8;
  std::optional<double> alpha;  // defaults to rank, i.e. a multiplier of 1
  TargetSelector selector = TargetSelector::attention;
  std::vector<std::string> targets;  // used by explicit_list
  AdapterVariant variant = AdapterVariant::lora;
  double init_std = 0.02;

  double scale() const { return alpha.value_or(static_cast<double>(rank)) / static_cast<double>(rank); }
  bool operator==(const AdapterSpec&) const = default;
};

std::string_view to_string(AdapterVariant v);
std::string_view to_string(TargetSelector s);
AdapterVariant parse_adapter_variant(std::string_view text);
TargetSelector parse_target_selector(std::string_view text);

// Names of the base parameters `spec` selects, sorted. Throws ConfigError if
// nothing matches and ContractError if an explicitly named parameter is not
// a matrix (or does not exist).
std::vector<std::string> select_targets(const Model& model, const AdapterSpec& spec);

// Freezes every parameter of `model` and injects one adapter site per
// selected weight. The returned model trains exactly the adapter tensors.
Model attach(Model model, const AdapterSpec& spec, std::uint64_t seed);

// Builds the effective weight of `site` on the tape. `magnitude` is ignored
// for LoRA sites.
Var compose_effective_weight(Tape& tape, const AdapterSite& site, Var base, Var b, Var a, Var magnitude);
std::uint64_t composition_flops(const ParameterStore& params, const AdapterSite& site);

// Materialized effective weight of the site adapting `base_name`.
Tensor effective_weight(const Model& model, const std::string& base_name);

std::size_t trainable_size(const Model& model);
std::vector<double> snapshot_trainable(const Model& model);
void restore_trainable(Model& model, std::span<const double> flat);
// Gradients in snapshot order; parameters without a gradient contribute zeros.
std::vector<double> snapshot_gradients(const Model& model);

// Text checkpoint of every adapter tensor (see README for the layout).
// Values are written as hexadecimal floats, so loading is bit-exact.
void save_adapter_checkpoint(const Model& model, const AdapterSpec& spec, const std::filesystem::path& path);
// Loads into a model already attached with a matching spec.
void load_adapter_checkpoint(Model& model, const std::filesystem::path& path);

}  // namespace fastfwd
