// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Training problems. Every builder is deterministic in its seed.
//
//   synthetic_lowrank  y = x (W0 + U V) + noise, loss = MSE, one weight "weight"
//   mlp                tanh MLP classifier, loss = cross-entropy
//   char_lm            pre-norm decoder-only transformer, next-token loss
//   quadratic          0.5 * sum_i c_i (w_i - t_i)^2, data-free (analysis oracle)

#include <cstdint>
#include <memory>
#include <vector>

#include "fastfwd/model.hpp"

namespace fastfwd {

struct SyntheticTask {
  Model model;
  Batch data;     // all n examples; split with split_dataset
  Tensor true_b;  // [d x true_rank]
  Tensor true_a;  // [true_rank x k], true_b * true_a is the perturbation
};

// Base W0 ~ N(0, 1/sqrt(d)), U ~ N(0, 1/sqrt(d)), V ~ N(0, 1), x ~ N(0, 1).
// Targets are computed with the same kernels the adapted forward pass uses,
// so an adapter holding (U, V) at unit scale reproduces them exactly.
SyntheticTask make_synthetic_lowrank(std::size_t d, std::size_t k, std::size_t true_rank, double noise_std,
                                     std::size_t n, std::uint64_t seed);

Model make_mlp(std::size_t in_dim, std::size_t hidden_dim, std::size_t classes, std::uint64_t seed);
// Gaussian clusters, one per class; targets are [n x 1] class ids.
Batch make_classification_data(std::size_t in_dim, std::size_t classes, std::size_t n, std::uint64_t seed);

struct CharLmConfig {
  std::size_t vocab_size = 32;
  std::size_t embed_dim = 32;
  std::size_t layer_count = 2;
  std::size_t head_count = 4;
  std::size_t context_length = 32;

  void validate() const;  // ConfigError naming the offending field
  bool operator==(const CharLmConfig&) const = default;
};

// Parameters: tok_emb, pos_emb, blocks.<l>.{ln1,ln2}.{gain,bias},
// blocks.<l>.attn.{q,k,v,o}, blocks.<l>.mlp.{fc1,fc2}.{weight,bias},
// ln_f.{gain,bias}, lm_head (untied). Batches hold token ids: inputs and
// targets are [n x T] with T <= context_length.
Model make_char_lm(const CharLmConfig& cfg, std::uint64_t seed);
const CharLmConfig& char_lm_config(const Model& model);
// Logits [n*T x vocab] for the given batch (targets unused).
Tensor char_lm_logits(const Model& model, const Batch& batch);

// center and curvature have equal length n; curvature entries must be > 0.
// The single parameter "w" starts at `start`.
Model make_quadratic(std::vector<double> center, std::vector<double> curvature, std::vector<double> start);
// Placeholder batch accepted by the quadratic model.
Batch quadratic_batch();

}  // namespace fastfwd
