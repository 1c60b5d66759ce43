// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fastfwd/errors.hpp"

namespace fastfwd {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SeedSet derive_seeds(std::uint64_t master) {
  std::uint64_t state = master;
  SeedSet s;
  s.init = splitmix64(state);
  s.data_order = splitmix64(state);
  s.split = splitmix64(state);
  return s;
}

namespace {

void permute(std::vector<std::size_t>& order, Rng& rng) {
  // Fisher-Yates with explicit draws: std::shuffle's use of the engine is
  // implementation-defined and would tie results to one standard library.
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
}

}  // namespace

BatchIterator::BatchIterator(const Batch& train, std::size_t batch_size, std::uint64_t seed)
    : train_(&train), batch_size_(batch_size), seed_(seed) {
  train.validate();
  if (batch_size == 0) throw ContractError("batch size must be positive");
  if (batch_size > train.example_count()) {
    throw ContractError("batch size " + std::to_string(batch_size) + " exceeds " +
                        std::to_string(train.example_count()) + " training examples");
  }
  steps_per_epoch_ = train.example_count() / batch_size;
  order_.resize(train.example_count());
  reshuffle();
}

void BatchIterator::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::uint64_t state = seed_ ^ (0x9e3779b97f4a7c15ULL * (epoch_ + 1));
  Rng rng(splitmix64(state));
  permute(order_, rng);
  cursor_ = 0;
}

Batch BatchIterator::next() {
  if (cursor_ == steps_per_epoch_) {
    ++epoch_;
    reshuffle();
  }
  const std::span<const std::size_t> idx(order_);
  return select_examples(*train_, idx.subspan(batch_size_ * cursor_++, batch_size_));
}

Splits split_dataset(const Batch& all, std::size_t test_count, std::size_t val_count, std::uint64_t seed) {
  all.validate();
  const std::size_t n = all.example_count();
  if (test_count == 0 || val_count == 0) throw ContractError("split_dataset: test and val counts must be positive");
  if (test_count + val_count >= n) {
    throw ContractError("split_dataset: " + std::to_string(n) + " examples cannot hold test " +
                        std::to_string(test_count) + " + val " + std::to_string(val_count) + " + train >= 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  permute(order, rng);
  const std::span<const std::size_t> all_idx(order);
  return Splits{select_examples(all, all_idx.subspan(test_count + val_count)),
                select_examples(all, all_idx.subspan(test_count, val_count)),
                select_examples(all, all_idx.subspan(0, test_count))};
}

CharTokenizer::CharTokenizer(std::string_view text) {
  std::array<bool, 256> seen{};
  for (char c : text) seen[static_cast<unsigned char>(c)] = true;
  index_.fill(-1);
  for (int b = 0; b < 256; ++b) {
    if (!seen[b]) continue;
    index_[b] = static_cast<int>(alphabet_.size());
    alphabet_.push_back(static_cast<char>(b));
  }
}

std::vector<std::size_t> CharTokenizer::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const int id = index_[static_cast<unsigned char>(c)];
    if (id < 0) throw ContractError("tokenizer: byte " + std::to_string(static_cast<unsigned char>(c)) + " not in vocabulary");
    ids.push_back(static_cast<std::size_t>(id));
  }
  return ids;
}

std::string CharTokenizer::decode(std::span<const std::size_t> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= alphabet_.size()) throw ContractError("tokenizer: id " + std::to_string(id) + " out of range");
    out.push_back(alphabet_[id]);
  }
  return out;
}

TextCorpus make_text_corpus(std::string_view text, std::size_t context_length, std::size_t test_count,
                            std::size_t val_count, std::uint64_t seed) {
  if (context_length < 2) throw ContractError("context_length must be at least 2");
  if (text.empty()) throw IoError("corpus is empty");
  CharTokenizer tok(text);
  const auto ids = tok.encode(text);
  const std::size_t windows = (ids.size() - 1) / context_length;
  if (windows == 0) throw ContractError("corpus shorter than one window");
  Tensor inputs(Shape{windows, context_length});
  Tensor targets(Shape{windows, context_length});
  for (std::size_t w = 0; w < windows; ++w) {
    for (std::size_t t = 0; t < context_length; ++t) {
      inputs.at(w, t) = static_cast<double>(ids[w * context_length + t]);
      targets.at(w, t) = static_cast<double>(ids[w * context_length + t + 1]);
    }
  }
  const Batch all{std::move(inputs), std::move(targets), std::nullopt};
  return TextCorpus{std::move(tok), split_dataset(all, test_count, val_count, seed), windows};
}

TextCorpus load_text_corpus(const std::filesystem::path& path, std::size_t context_length, std::size_t test_count,
                            std::size_t val_count, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.empty()) throw IoError("corpus " + path.string() + " is empty");
  return make_text_corpus(text, context_length, test_count, val_count, seed);
}

}  // namespace fastfwd
