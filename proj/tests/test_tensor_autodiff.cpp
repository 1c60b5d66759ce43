// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "fastfwd/adapters.hpp"
#include "fastfwd/data.hpp"
#include "fastfwd/errors.hpp"
#include "fastfwd/kernels.hpp"
#include "fastfwd/linalg.hpp"
#include "fastfwd/tape.hpp"
#include "fastfwd/zoo.hpp"
#include "support.hpp"

using namespace fastfwd;
using fastfwd::testing::finite_difference_check;
using fastfwd::testing::random_tensor;
using fastfwd::testing::randomize_parameters;

namespace {

constexpr double kRelTol = 1e-4;
constexpr double kStep = 1e-5;

// Builds a scalar from leaves; every op test contracts its output with a
// fixed random tensor so that all output partials are exercised.
using Graph = std::function<Var(Tape&, std::vector<Var>&)>;

double op_grad_error(std::vector<Tensor> inputs, const Graph& graph) {
  for (auto& t : inputs) t.set_requires_grad(true);
  auto run = [&](bool record) {
    Tape tape(record);
    std::vector<Var> leaves;
    for (auto& t : inputs) leaves.push_back(tape.leaf(t));
    const Var out = graph(tape, leaves);
    const double value = tape.value(out).item();
    if (record) tape.backward(out);
    return value;
  };
  for (auto& t : inputs) t.zero_grad();
  run(true);
  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> ad(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double w = t[i];
      t[i] = w + kStep;
      const double up = run(false);
      t[i] = w - kStep;
      const double down = run(false);
      t[i] = w;
      const double fd = (up - down) / (2 * kStep);
      worst = std::max(worst, std::abs(ad[i] - fd) / (std::abs(fd) + 1e-8));
    }
  }
  return worst;
}

Var contract(Tape& tape, Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tape.sum(tape.mul(x, tape.constant(random_tensor(rng, tape.shape(x)))));
}

}  // namespace

TEST_CASE("tensor construction and shape checks") {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6);
  CHECK(element_count({2, 3, 4}) == 24);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK(Tensor::identity(3).at(2, 2) == 1.0);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK_THROWS_AS(m.item(), ContractError);
}

TEST_CASE("bitwise equality distinguishes signed zero and NaN payloads") {
  Tensor a(Shape{2}, std::vector<double>{0.0, 1.0});
  Tensor b(Shape{2}, std::vector<double>{-0.0, 1.0});
  CHECK_FALSE(bitwise_equal(a, b));
  Tensor c = a;
  CHECK(bitwise_equal(a, c));
  Tensor n1(Shape{1}, std::vector<double>{std::nan("")});
  Tensor n2 = n1;
  CHECK(bitwise_equal(n1, n2));
}

TEST_CASE("matmul value against a hand computation") {
  Tape tape;
  const Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const Var b = tape.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  const Tensor& c = tape.value(tape.matmul(a, b));
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
  CHECK_THROWS_AS(tape.matmul(a, tape.constant(Tensor(Shape{3, 2}))), DimensionError);
}

TEST_CASE("every op matches central differences on random inputs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    const std::size_t m = 2 + seed % 3, n = 3 + seed % 2, k = 2 + (seed + 1) % 3;

    CHECK(op_grad_error({random_tensor(rng, {m, k}), random_tensor(rng, {k, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.matmul(v[0], v[1]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.add(v[0], v[1]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.sub(v[0], v[1]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.mul(v[0], v[1]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.scale(v[0], -1.7), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {n})},
                        [&](Tape& t, auto& v) { return contract(t, t.add_bias(v[0], v[1]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.tanh(v[0]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return contract(t, t.gelu(v[0]), seed); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {5, n})}, [&](Tape& t, auto& v) {
            return contract(t, t.gather_rows(v[0], {4, 0, 4, 2}), seed);
          }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {n}), random_tensor(rng, {n})},
                        [&](Tape& t, auto& v) { return contract(t, t.layer_norm(v[0], v[1], v[2]), seed); }) <
          kRelTol);
    const std::size_t batch = 2, seq = 3, heads = 2, dm = 4;
    CHECK(op_grad_error({random_tensor(rng, {batch * seq, dm}), random_tensor(rng, {batch * seq, dm}),
                         random_tensor(rng, {batch * seq, dm})},
                        [&](Tape& t, auto& v) {
                          return contract(t, t.causal_attention(v[0], v[1], v[2], batch, seq, heads), seed);
                        }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {4, 5})}, [&](Tape& t, auto& v) {
            return t.cross_entropy(v[0], {1, 4, 0, 1}, {1.0, 0.5, 0.0, 2.0});
          }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {m, n})},
                        [&](Tape& t, auto& v) { return t.mse(v[0], v[1]); }) < kRelTol);
    CHECK(op_grad_error({random_tensor(rng, {m, n}), random_tensor(rng, {n})}, [&](Tape& t, auto& v) {
            return contract(t, t.column_normalize_scale(v[0], v[1]), seed);
          }) < kRelTol);
  }
}

TEST_CASE("gradients accumulate across reused leaves") {
  Tensor x(Shape{3}, std::vector<double>{1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  Tape tape;
  const Var v = tape.leaf(x);
  tape.backward(tape.sum(tape.mul(v, v)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == -4.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("non-recording tapes refuse backward") {
  Tensor x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  Tape tape(false);
  const Var s = tape.sum(tape.leaf(x));
  CHECK_THROWS_AS(tape.backward(s), ContractError);
}

TEST_CASE("causal attention ignores future positions") {
  std::mt19937_64 rng(3);
  const std::size_t seq = 4, dm = 4;
  Tensor q = random_tensor(rng, {seq, dm}), k = random_tensor(rng, {seq, dm}), v = random_tensor(rng, {seq, dm});
  Tape tape(false);
  const Tensor before = tape.value(tape.causal_attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), 1, seq, 2));
  for (std::size_t c = 0; c < dm; ++c) {
    k.at(seq - 1, c) += 3.0;
    v.at(seq - 1, c) -= 2.0;
  }
  Tape tape2(false);
  const Tensor after = tape2.value(tape2.causal_attention(tape2.leaf(q), tape2.leaf(k), tape2.leaf(v), 1, seq, 2));
  for (std::size_t i = 0; i + 1 < seq; ++i) {
    for (std::size_t c = 0; c < dm; ++c) CHECK(before.at(i, c) == after.at(i, c));
  }
}

constexpr std::string_view kText = "abcdefgh hgfedcba abba cafe bead face deaf";

// Gradient check on every zoo model at a random parameter point, all
// parameters trainable. The ratio is taken per leaf (L2 over the tensor).
TEST_CASE("zoo models pass the finite-difference gradient check") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    SUBCASE("synthetic low-rank regression") {
      auto task = make_synthetic_lowrank(6, 5, 2, 0.1, 64, seed);
      task.model.parameters().set_trainable("weight", true);
      randomize_parameters(task.model, 0.5, seed + 100);
      std::vector<std::size_t> idx{0, 3, 5, 9, 17};
      const Batch b = select_examples(task.data, idx);
      const auto r = finite_difference_check(task.model, b, kStep);
      INFO(r.where, " elementwise ", r.where_elementwise);
      CHECK(r.worst < kRelTol);
    }
    SUBCASE("mlp classifier") {
      Model model = make_mlp(5, 7, 3, seed);
      for (const auto& n : model.parameters().names()) model.parameters().set_trainable(n, true);
      randomize_parameters(model, 0.5, seed + 200);
      const Batch b = make_classification_data(5, 3, 6, seed);
      const auto r = finite_difference_check(model, b, kStep);
      INFO(r.where, " elementwise ", r.where_elementwise);
      CHECK(r.worst < kRelTol);
    }
    SUBCASE("char transformer") {
      const CharLmConfig cfg{16, 16, 2, 2, 8};
      Model model = make_char_lm(cfg, seed);
      for (const auto& n : model.parameters().names()) model.parameters().set_trainable(n, true);
      randomize_parameters(model, 0.4, seed + 300);
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<int> token(0, 15);
      Batch b{Tensor(Shape{2, 8}), Tensor(Shape{2, 8}), std::nullopt};
      for (std::size_t i = 0; i < 16; ++i) {
        b.inputs[i] = token(rng);
        b.targets[i] = token(rng);
      }
      const auto r = finite_difference_check(model, b, kStep);
      INFO(r.where, " elementwise ", r.where_elementwise);
      CHECK(r.worst < kRelTol);
    }
    SUBCASE("char transformer with LoRA and DoRA adapters") {
      for (auto variant : {AdapterVariant::lora, AdapterVariant::dora}) {
        const auto corpus = make_text_corpus(kText, 6, 1, 1, seed);
        CharLmConfig cfg{corpus.tokenizer.vocab_size(), 8, 1, 2, 6};
        AdapterSpec spec;
        spec.rank = 2;
        spec.alpha = 3.0;
        spec.variant = variant;
        Model model = attach(make_char_lm(cfg, seed), spec, seed);
        randomize_parameters(model, 0.4, seed + 400);
        const auto r = finite_difference_check(model, corpus.splits.train, kStep);
        INFO(to_string(variant), " ", r.where, " elementwise ", r.where_elementwise);
        CHECK(r.worst < kRelTol);
      }
    }
    SUBCASE("synthetic with DoRA on all matrices") {
      auto task = make_synthetic_lowrank(6, 5, 2, 0.1, 64, seed);
      AdapterSpec spec;
      spec.rank = 3;
      spec.selector = TargetSelector::all_2d;
      spec.variant = AdapterVariant::dora;
      Model model = attach(std::move(task.model), spec, seed);
      randomize_parameters(model, 0.5, seed + 500, true);
      std::vector<std::size_t> idx{1, 2, 8};
      const auto r = finite_difference_check(model, select_examples(task.data, idx), kStep);
      INFO(r.where, " elementwise ", r.where_elementwise);
      CHECK(r.worst < kRelTol);
    }
  }
}

TEST_CASE("serial and parallel gemm are bit-identical for all transpose modes") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 37);
  for (int trial = 0; trial < 60; ++trial) {
    const kernels::GemmDims d{dim(rng), dim(rng), dim(rng)};
    const auto op_a = trial % 2 ? kernels::Op::transpose : kernels::Op::none;
    const auto op_b = (trial / 2) % 2 ? kernels::Op::transpose : kernels::Op::none;
    const auto a = testing::random_vector(rng, d.m * d.k);
    const auto b = testing::random_vector(rng, d.k * d.n);
    std::vector<double> c_ref(d.m * d.n, 7.0), c_par(d.m * d.n, -7.0), c_def(d.m * d.n, 1.0);
    kernels::gemm_reference(a, op_a, b, op_b, c_ref, d);
    kernels::gemm_parallel(a, op_a, b, op_b, c_par, d);
    kernels::gemm(a, op_a, b, op_b, c_def, d);
    CHECK(bitwise_equal(c_ref, c_par));
    CHECK(bitwise_equal(c_ref, c_def));
  }
}

TEST_CASE("serial and parallel attention kernels are bit-identical") {
  std::mt19937_64 rng(12);
  for (std::size_t trial = 0; trial < 10; ++trial) {
    const kernels::AttentionDims d{1 + trial % 3, 1 + trial % 5, 1 + trial % 2, 2 + trial % 3};
    const auto q = testing::random_vector(rng, d.activation_size());
    const auto k = testing::random_vector(rng, d.activation_size());
    const auto v = testing::random_vector(rng, d.activation_size());
    const auto g = testing::random_vector(rng, d.activation_size());
    std::vector<double> o1(d.activation_size()), o2(d.activation_size());
    std::vector<double> p1(d.probs_size()), p2(d.probs_size());
    kernels::attention_forward_reference(q, k, v, o1, p1, d);
    kernels::attention_forward_parallel(q, k, v, o2, p2, d);
    CHECK(bitwise_equal(o1, o2));
    CHECK(bitwise_equal(p1, p2));
    std::vector<double> dq1(d.activation_size()), dk1(d.activation_size()), dv1(d.activation_size());
    std::vector<double> dq2(d.activation_size()), dk2(d.activation_size()), dv2(d.activation_size());
    kernels::attention_backward_reference(g, q, k, v, p1, dq1, dk1, dv1, d);
    kernels::attention_backward_parallel(g, q, k, v, p2, dq2, dk2, dv2, d);
    CHECK(bitwise_equal(dq1, dq2));
    CHECK(bitwise_equal(dk1, dk2));
    CHECK(bitwise_equal(dv1, dv2));
  }
}

TEST_CASE("flop formulas") {
  CHECK(kernels::flops::gemm(3, 4, 5) == 120);
  // One query row per key it can see: seq=2 gives 3 pairs.
  CHECK(kernels::flops::attention(1, 2, 1, 4) == 3 * (16 + 5));
}

TEST_CASE("gram-schmidt plane is orthonormal and spans the inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto u = testing::random_vector(rng, 9);
    const auto v = testing::random_vector(rng, 9);
    auto [e1, e2] = gram_schmidt_plane(u, v);
    CHECK(dot(e1, e1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dot(e2, e2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(dot(e1, e2)) < 1e-12);
    // v lies in span(e1, e2)
    const double a = dot(v, e1), b = dot(v, e2);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - a * e1[i] - b * e2[i]) < 1e-10);
  }
  std::vector<double> u{1, 2, 3}, w{2, 4, 6}, z{0, 0, 0};
  CHECK_THROWS_AS(gram_schmidt_plane(u, w), DegeneratePlaneError);
  CHECK_THROWS_AS(gram_schmidt_plane(z, u), DegeneratePlaneError);
}

TEST_CASE("singular values of known matrices") {
  const auto s = singular_values(Tensor::matrix({{3, 0}, {0, -4}, {0, 0}}));
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(4.0));
  CHECK(s[1] == doctest::Approx(3.0));
  // rank one: outer product of (1,2) and (3,4,5) has sigma = |u||v|
  const auto r1 = singular_values(Tensor::matrix({{3, 4, 5}, {6, 8, 10}}));
  CHECK(r1[0] == doctest::Approx(std::sqrt(5.0) * std::sqrt(50.0)));
  CHECK(std::abs(r1[1]) < 1e-10);
}

TEST_CASE("singular values are invariant to transposition and match the Frobenius norm") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t r = 2 + trial % 4, c = 3 + trial % 3;
    Tensor m = random_tensor(rng, {r, c});
    Tensor mt(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) mt.at(j, i) = m.at(i, j);
    const auto s1 = singular_values(m);
    const auto s2 = singular_values(mt);
    REQUIRE(s1.size() == s2.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-10));
      if (i > 0) CHECK(s1[i - 1] >= s1[i]);
      sq += s1[i] * s1[i];
    }
    CHECK(sq == doctest::Approx(dot(m.data(), m.data())).epsilon(1e-10));
  }
}

TEST_CASE("cosine similarity") {
  std::vector<double> a{1, 0}, b{0, 2}, c{-3, 0}, z{0, 0};
  CHECK(*cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(*cosine_similarity(a, c) == doctest::Approx(-1.0));
  CHECK_FALSE(cosine_similarity(a, z).has_value());
}
