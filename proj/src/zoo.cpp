// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastfwd/zoo.hpp"

#include <cmath>
#include <string>

#include "fastfwd/errors.hpp"
#include "fastfwd/kernels.hpp"

namespace fastfwd {

namespace {

namespace fl = kernels::flops;

std::vector<std::size_t> as_ids(std::span<const double> values, std::size_t limit, const char* what) {
  std::vector<std::size_t> ids(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(limit)) {
      throw ContractError(std::string(what) + ": id " + std::to_string(v) + " outside [0, " + std::to_string(limit) +
                          ")");
    }
    ids[i] = static_cast<std::size_t>(v);
  }
  return ids;
}

// ---------------------------------------------------------------------------

class SyntheticLowRank final : public Architecture {
 public:
  std::string_view name() const override { return "synthetic_lowrank"; }

  Var loss(ForwardContext& ctx, const Batch& batch) const override {
    Tape& t = ctx.tape();
    const Var pred = t.matmul(ctx.input(batch.inputs), ctx.param("weight"));
    return t.mse(pred, ctx.input(batch.targets));
  }

  std::uint64_t forward_flops(const Batch& batch) const override {
    const std::size_t n = batch.inputs.rows();
    const std::size_t d = batch.inputs.cols();
    const std::size_t k = batch.targets.cols();
    return fl::gemm(n, d, k) + fl::mse(n * k);
  }
};

class Mlp final : public Architecture {
 public:
  Mlp(std::size_t hidden, std::size_t classes) : hidden_(hidden), classes_(classes) {}

  std::string_view name() const override { return "mlp"; }

  Var loss(ForwardContext& ctx, const Batch& batch) const override {
    Tape& t = ctx.tape();
    Var h = t.add_bias(t.matmul(ctx.input(batch.inputs), ctx.param("fc1.weight")), ctx.param("fc1.bias"));
    h = t.tanh(h);
    const Var logits = t.add_bias(t.matmul(h, ctx.param("fc2.weight")), ctx.param("fc2.bias"));
    std::vector<double> mask;
    if (batch.loss_mask) mask.assign(batch.loss_mask->data().begin(), batch.loss_mask->data().end());
    return t.cross_entropy(logits, as_ids(batch.targets.data(), classes_, "mlp target"), std::move(mask));
  }

  std::uint64_t forward_flops(const Batch& batch) const override {
    const std::size_t n = batch.inputs.rows();
    const std::size_t in = batch.inputs.cols();
    return fl::gemm(n, in, hidden_) + fl::elementwise(n * hidden_) * 2 + fl::gemm(n, hidden_, classes_) +
           fl::elementwise(n * classes_) + fl::cross_entropy(n, classes_);
  }


 private:
  std::size_t hidden_;
  std::size_t classes_;
};

class CharLm final : public Architecture {
 public:
  explicit CharLm(CharLmConfig cfg) : cfg_(cfg) {}

  std::string_view name() const override { return "char_lm"; }
  const CharLmConfig& config() const { return cfg_; }

  Var logits(ForwardContext& ctx, const Batch& batch) const {
    const std::size_t n = batch.inputs.rows();
    const std::size_t seq = batch.inputs.cols();
    if (seq > cfg_.context_length) {
      throw ContractError("sequence length " + std::to_string(seq) + " exceeds context length " +
                          std::to_string(cfg_.context_length));
    }
    Tape& t = ctx.tape();
    std::vector<std::size_t> positions(n * seq);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % seq;
    Var x = t.add(t.gather_rows(ctx.param("tok_emb"), as_ids(batch.inputs.data(), cfg_.vocab_size, "token")),
                  t.gather_rows(ctx.param("pos_emb"), std::move(positions)));
    for (std::size_t l = 0; l < cfg_.layer_count; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      const Var h = t.layer_norm(x, ctx.param(p + "ln1.gain"), ctx.param(p + "ln1.bias"));
      const Var q = t.matmul(h, ctx.param(p + "attn.q"));
      const Var k = t.matmul(h, ctx.param(p + "attn.k"));
      const Var v = t.matmul(h, ctx.param(p + "attn.v"));
      const Var a = t.causal_attention(q, k, v, n, seq, cfg_.head_count);
      x = t.add(x, t.matmul(a, ctx.param(p + "attn.o")));
      const Var h2 = t.layer_norm(x, ctx.param(p + "ln2.gain"), ctx.param(p + "ln2.bias"));
      Var f = t.add_bias(t.matmul(h2, ctx.param(p + "mlp.fc1.weight")), ctx.param(p + "mlp.fc1.bias"));
      f = t.gelu(f);
      f = t.add_bias(t.matmul(f, ctx.param(p + "mlp.fc2.weight")), ctx.param(p + "mlp.fc2.bias"));
      x = t.add(x, f);
    }
    const Var h = t.layer_norm(x, ctx.param("ln_f.gain"), ctx.param("ln_f.bias"));
    return t.matmul(h, ctx.param("lm_head"));
  }

  Var loss(ForwardContext& ctx, const Batch& batch) const override {
    const Var z = logits(ctx, batch);
    std::vector<double> mask;
    if (batch.loss_mask) mask.assign(batch.loss_mask->data().begin(), batch.loss_mask->data().end());
    return ctx.tape().cross_entropy(z, as_ids(batch.targets.data(), cfg_.vocab_size, "target"), std::move(mask));
  }

  std::uint64_t forward_flops(const Batch& batch) const override {
    const std::size_t n = batch.inputs.rows();
    const std::size_t seq = batch.inputs.cols();
    const std::size_t rows = n * seq;
    const std::size_t d = cfg_.embed_dim;
    const std::size_t ff = 4 * d;
    std::uint64_t per_layer = fl::layer_norm(rows, d) + 4 * fl::gemm(rows, d, d) +
                              fl::attention(n, seq, cfg_.head_count, d / cfg_.head_count) +
                              fl::elementwise(rows * d) + fl::layer_norm(rows, d) + fl::gemm(rows, d, ff) +
                              fl::elementwise(rows * ff) + fl::gelu(rows * ff) + fl::gemm(rows, ff, d) +
                              fl::elementwise(rows * d) + fl::elementwise(rows * d);
    return fl::elementwise(rows * d) + cfg_.layer_count * per_layer + fl::layer_norm(rows, d) +
           fl::gemm(rows, d, cfg_.vocab_size) + fl::cross_entropy(rows, cfg_.vocab_size);
  }

  bool is_attention_matrix(std::string_view name) const override {
    if (!name.starts_with("blocks.")) return false;
    const auto dot = name.find('.', 7);
    if (dot == std::string_view::npos) return false;
    const auto rest = name.substr(dot + 1);
    return rest == "attn.q" || rest == "attn.k" || rest == "attn.v" || rest == "attn.o";
  }

 private:
  CharLmConfig cfg_;
};

class Quadratic final : public Architecture {
 public:
  Quadratic(Tensor center, Tensor curvature) : center_(std::move(center)), curvature_(std::move(curvature)) {}

  std::string_view name() const override { return "quadratic"; }

  Var loss(ForwardContext& ctx, const Batch& /*batch*/) const override {
    Tape& t = ctx.tape();
    const Var diff = t.sub(ctx.param("w"), t.leaf(center_));
    const Var weighted = t.mul(t.mul(diff, diff), t.leaf(curvature_));
    return t.scale(t.sum(weighted), 0.5);
  }

  std::uint64_t forward_flops(const Batch& /*batch*/) const override {
    const std::size_t n = center_.size();
    return 4 * fl::elementwise(n) + fl::elementwise(1);
  }

 private:
  Tensor center_;
  Tensor curvature_;
};

}  // namespace

SyntheticTask make_synthetic_lowrank(std::size_t d, std::size_t k, std::size_t true_rank, double noise_std,
                                     std::size_t n, std::uint64_t seed) {
  if (d == 0 || k == 0 || true_rank == 0 || true_rank > std::min(d, k)) {
    throw ContractError("synthetic task needs 1 <= true_rank <= min(d, k)");
  }
  if (n < 64) throw ContractError("synthetic task needs at least 64 examples");
  if (!(noise_std >= 0.0)) throw ContractError("noise_std must be non-negative");
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor w0 = Tensor::randn(Shape{d, k}, s, rng);
  Tensor u = Tensor::randn(Shape{d, true_rank}, s, rng);
  Tensor v = Tensor::randn(Shape{true_rank, k}, 1.0, rng);
  Tensor x = Tensor::randn(Shape{n, d}, 1.0, rng);

  Tensor p(Shape{d, k});
  kernels::gemm(u.data(), kernels::Op::none, v.data(), kernels::Op::none, p.data(), {d, true_rank, k});
  Tensor w(Shape{d, k});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] + p[i];
  Tensor y(Shape{n, k});
  kernels::gemm(x.data(), kernels::Op::none, w.data(), kernels::Op::none, y.data(), {n, d, k});
  if (noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_std);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += noise(rng);
  }

  ParameterStore params;
  params.add("weight", std::move(w0), true);
  return SyntheticTask{Model(std::make_shared<SyntheticLowRank>(), std::move(params)),
                       Batch{std::move(x), std::move(y), std::nullopt}, std::move(u), std::move(v)};
}

Model make_mlp(std::size_t in_dim, std::size_t hidden_dim, std::size_t classes, std::uint64_t seed) {
  if (in_dim == 0 || hidden_dim == 0 || classes < 2) throw ContractError("mlp needs positive dims and >= 2 classes");
  Rng rng(seed);
  ParameterStore params;
  params.add("fc1.weight", Tensor::randn(Shape{in_dim, hidden_dim}, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng),
             true);
  params.add("fc1.bias", Tensor(Shape{hidden_dim}), true);
  params.add("fc2.weight",
             Tensor::randn(Shape{hidden_dim, classes}, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng), true);
  params.add("fc2.bias", Tensor(Shape{classes}), true);
  return Model(std::make_shared<Mlp>(hidden_dim, classes), std::move(params));
}

Batch make_classification_data(std::size_t in_dim, std::size_t classes, std::size_t n, std::uint64_t seed) {
  if (in_dim == 0 || classes < 2 || n == 0) throw ContractError("classification data needs positive sizes");
  Rng rng(seed);
  const Tensor centers = Tensor::randn(Shape{classes, in_dim}, 1.0, rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor x(Shape{n, in_dim});
  Tensor y(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(rng() % classes);
    y[i] = static_cast<double>(c);
    for (std::size_t j = 0; j < in_dim; ++j) x.at(i, j) = centers.at(c, j) + noise(rng);
  }
  return Batch{std::move(x), std::move(y), std::nullopt};
}

void CharLmConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size", "must be at least 2");
  if (embed_dim == 0) throw ConfigError("embed_dim", "must be positive");
  if (layer_count == 0) throw ConfigError("layer_count", "must be positive");
  if (head_count == 0) throw ConfigError("head_count", "must be positive");
  if (embed_dim % head_count != 0) throw ConfigError("head_count", "must divide embed_dim");
  if (context_length < 2) throw ConfigError("context_length", "must be at least 2");
}

Model make_char_lm(const CharLmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  constexpr double kInitStd = 0.02;
  const std::size_t d = cfg.embed_dim;
  Rng rng(seed);
  ParameterStore params;
  // Insertion order fixes the RNG stream; the store itself is name-sorted.
  params.add("tok_emb", Tensor::randn(Shape{cfg.vocab_size, d}, kInitStd, rng), true);
  params.add("pos_emb", Tensor::randn(Shape{cfg.context_length, d}, kInitStd, rng), true);
  for (std::size_t l = 0; l < cfg.layer_count; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    params.add(p + "ln1.gain", Tensor(Shape{d}, 1.0), true);
    params.add(p + "ln1.bias", Tensor(Shape{d}), true);
    for (const char* m : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      params.add(p + m, Tensor::randn(Shape{d, d}, kInitStd, rng), true);
    }
    params.add(p + "ln2.gain", Tensor(Shape{d}, 1.0), true);
    params.add(p + "ln2.bias", Tensor(Shape{d}), true);
    params.add(p + "mlp.fc1.weight", Tensor::randn(Shape{d, 4 * d}, kInitStd, rng), true);
    params.add(p + "mlp.fc1.bias", Tensor(Shape{4 * d}), true);
    params.add(p + "mlp.fc2.weight", Tensor::randn(Shape{4 * d, d}, kInitStd, rng), true);
    params.add(p + "mlp.fc2.bias", Tensor(Shape{d}), true);
  }
  params.add("ln_f.gain", Tensor(Shape{d}, 1.0), true);
  params.add("ln_f.bias", Tensor(Shape{d}), true);
  params.add("lm_head", Tensor::randn(Shape{d, cfg.vocab_size}, kInitStd, rng), true);
  return Model(std::make_shared<CharLm>(cfg), std::move(params));
}

namespace {

const CharLm& as_char_lm(const Model& model) {
  const auto* arch = dynamic_cast<const CharLm*>(&model.architecture());
  if (!arch) throw ContractError("model '" + std::string(model.architecture().name()) + "' is not a char-LM");
  return *arch;
}

}  // namespace

const CharLmConfig& char_lm_config(const Model& model) { return as_char_lm(model).config(); }

Tensor char_lm_logits(const Model& model, const Batch& batch) {
  const CharLm& arch = as_char_lm(model);
  Tape tape(false);
  ForwardContext ctx(tape, model.parameters(), model.adapters());
  return tape.value(arch.logits(ctx, batch));
}

Model make_quadratic(std::vector<double> center, std::vector<double> curvature, std::vector<double> start) {
  const std::size_t n = center.size();
  if (n == 0 || curvature.size() != n || start.size() != n) {
    throw ContractError("quadratic: center, curvature and start must share a positive length");
  }
  for (double c : curvature) {
    if (!(c > 0.0)) throw ContractError("quadratic: curvature must be positive");
  }
  ParameterStore params;
  params.add("w", Tensor(Shape{n}, std::move(start)), true);
  return Model(std::make_shared<Quadratic>(Tensor(Shape{n}, std::move(center)), Tensor(Shape{n}, std::move(curvature))),
               std::move(params));
}

Batch quadratic_batch() { return Batch{Tensor(Shape{1, 1}), Tensor(Shape{1, 1}), std::nullopt}; }

}  // namespace fastfwd
