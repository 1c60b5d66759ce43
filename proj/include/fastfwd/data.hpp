// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fastfwd/model.hpp"

namespace fastfwd {

inline constexpr std::size_t kDefaultValCount = 32;

// Sub-seeds expanded from one master seed with SplitMix64, in this order.
struct SeedSet {
  std::uint64_t init = 0;        // model and adapter initialization
  std::uint64_t data_order = 0;  // per-epoch batch shuffling
  std::uint64_t split = 0;       // train/val/test assignment and data generation
};
std::uint64_t splitmix64(std::uint64_t& state);
SeedSet derive_seeds(std::uint64_t master);

// Endless minibatch stream over `train`. Each epoch visits a fresh
// permutation drawn from (seed, epoch); a trailing partial batch is dropped.
class BatchIterator {
 public:
  BatchIterator(const Batch& train, std::size_t batch_size, std::uint64_t seed);

  Batch next();
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const Batch* train_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t steps_per_epoch_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

struct Splits {
  Batch train;
  Batch val;
  Batch test;
};

// Random permutation of the examples; the first test_count go to test, the
// next val_count to val, the rest to train. ContractError unless at least
// one training example remains.
Splits split_dataset(const Batch& all, std::size_t test_count, std::size_t val_count, std::uint64_t seed);

// Byte-level tokenizer over the distinct bytes of a text, in byte order.
class CharTokenizer {
 public:
  explicit CharTokenizer(std::string_view text);

  std::size_t vocab_size() const { return alphabet_.size(); }
  std::vector<std::size_t> encode(std::string_view text) const;  // ContractError on unknown bytes
  std::string decode(std::span<const std::size_t> ids) const;

 private:
  std::string alphabet_;
  std::array<int, 256> index_{};
};

struct TextCorpus {
  CharTokenizer tokenizer;
  Splits splits;
  std::size_t window_count = 0;
};

// Cuts the file into non-overlapping windows of context_length inputs; the
// target row is the input row shifted by one token, so consecutive windows
// share one boundary token. IoError when the file is missing or empty,
// ContractError when there are too few windows for the splits.
TextCorpus load_text_corpus(const std::filesystem::path& path, std::size_t context_length, std::size_t test_count,
                            std::size_t val_count, std::uint64_t seed);
// Same, from text in memory.
TextCorpus make_text_corpus(std::string_view text, std::size_t context_length, std::size_t test_count,
                            std::size_t val_count, std::uint64_t seed);

}  // namespace fastfwd
