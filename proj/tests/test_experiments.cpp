// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fastfwd/adapters.hpp"
#include "fastfwd/errors.hpp"
#include "fastfwd/experiments.hpp"
#include "fastfwd/kernels.hpp"
#include "fastfwd/linalg.hpp"
#include "fastfwd/zoo.hpp"
#include "support.hpp"

using namespace fastfwd;

namespace {

// Splits of dummy rows for models that ignore their batch.
Splits dummy_splits(std::size_t train_rows) {
  return Splits{Batch{Tensor(Shape{train_rows, 1}), Tensor(Shape{train_rows, 1}), std::nullopt}, quadratic_batch(),
                quadratic_batch()};
}

Task synthetic_task(std::uint64_t seed, std::size_t rank = 2, std::size_t d = 8) {
  auto t = make_synthetic_lowrank(d, d, 2, 0.1, 256, seed);
  AdapterSpec spec;
  spec.rank = rank;
  spec.selector = TargetSelector::all_2d;
  return Task{attach(std::move(t.model), spec, seed), split_dataset(t.data, 32, 32, seed)};
}

ProtocolConfig small_protocol() {
  ProtocolConfig cfg;
  cfg.adam.lr = 3e-3;
  cfg.schedule.batch_size = 16;
  cfg.baseline_epochs = 2;
  cfg.ff_max_epochs = 4;
  return cfg;
}

double quadratic_value(const std::vector<double>& w, const std::vector<double>& c, const std::vector<double>& k) {
  long double acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += 0.5L * k[i] * (w[i] - c[i]) * (w[i] - c[i]);
  return static_cast<double>(acc);
}

}  // namespace

TEST_CASE("loss plane on a quadratic matches the closed form") {
  const std::vector<double> center{1.0, -2.0, 0.5, 3.0}, curv{1.0, 2.0, 0.5, 4.0};
  Model q = make_quadratic(center, curv, {0.0, 0.0, 0.0, 0.0});
  const std::vector<double> w0{0.0, 0.0, 0.0, 0.0}, w_sgd{0.4, -0.3, 0.1, 0.8}, w_ff{0.9, -1.5, 0.2, 2.0};
  const std::vector<double> before{7.0, 7.0, 7.0, 7.0};
  restore_trainable(q, before);
  FlopsLedger ledger;
  const PlaneGrid g = loss_plane(q, quadratic_batch(), w0, w_sgd, w_ff, 11, 0.25, &ledger);
  CHECK(snapshot_trainable(q) == before);
  CHECK(g.loss.size() == 121);
  CHECK(g.scale == doctest::Approx(l2_norm(std::vector<double>{0.9, -1.5, 0.2, 2.0})));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(g.anchor_plane_losses[k] - g.anchor_losses[k]) < 1e-6);
    CHECK(g.anchor_losses[k] == doctest::Approx(quadratic_value(g.anchors[k], center, curv)).epsilon(1e-14));
  }
  // W_sgd lies on the first axis; W_ff is one axis unit from W0
  CHECK(std::abs(g.anchor_coords[1].second) < 1e-15);
  CHECK(std::hypot(g.anchor_coords[2].first, g.anchor_coords[2].second) == doctest::Approx(1.0).epsilon(1e-14));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) {
    const std::size_t a = rng() % 11, b = rng() % 11;
    const auto w = g.point(g.a_axis[a], g.b_axis[b]);
    CHECK(g.loss[a * 11 + b] == doctest::Approx(quadratic_value(w, center, curv)).epsilon(1e-12));
  }
  // grid covers the anchors plus the margin
  for (const auto& c : g.anchor_coords) {
    CHECK(g.a_axis.front() < c.first + 1e-12);
    CHECK(g.a_axis.back() > c.first - 1e-12);
    CHECK(g.b_axis.front() < c.second + 1e-12);
    CHECK(g.b_axis.back() > c.second - 1e-12);
  }
  CHECK(ledger.get(FlopsCategory::eval_forward) == 121 * q.evaluate(quadratic_batch()).forward_flops);
}

TEST_CASE("loss plane: resolution 3 charges exactly nine evaluations") {
  Model q = make_quadratic({1.0, 1.0}, {1.0, 1.0}, {0.0, 0.0});
  FlopsLedger ledger;
  loss_plane(q, quadratic_batch(), std::vector<double>{0, 0}, std::vector<double>{1, 0}, std::vector<double>{0, 1}, 3,
             0.25, &ledger);
  CHECK(ledger.get(FlopsCategory::eval_forward) == 9 * q.evaluate(quadratic_batch()).forward_flops);
  CHECK(ledger.total() == ledger.get(FlopsCategory::eval_forward));
}

TEST_CASE("loss plane: anchors on a trained adapter model") {
  Task t = synthetic_task(0);
  const auto c = compare_protocol(t, small_protocol());
  Model m = t.model;
  const PlaneGrid g =
      loss_plane(m, t.data.test, c.initial_weights, c.baseline_weights, c.ff_weights, 5, 0.25, nullptr);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(g.anchor_plane_losses[k] - g.anchor_losses[k]) < 1e-6);
  CHECK(g.anchor_losses[0] == m.loss(t.data.test));
}

TEST_CASE("loss plane rejects collinear anchors") {
  Model q = make_quadratic({1.0, 1.0}, {1.0, 1.0}, {0.0, 0.0});
  CHECK_THROWS_AS(loss_plane(q, quadratic_batch(), std::vector<double>{0, 0}, std::vector<double>{1, 1},
                             std::vector<double>{2, 2}, 3, 0.25),
                  DegeneratePlaneError);
}

TEST_CASE("gradient similarity: hand cases") {
  GradHistory h;
  h.push(1, {1.0, 0.0});
  h.push(2, {1.0, 1.0});
  h.push(3, {0.0, 5.0});
  h.push(4, {0.0, 0.0});
  h.push(5, {2.0, 0.0});
  const auto sim = grad_similarity_matrix(h);
  REQUIRE(sim.entries.size() == 10);
  auto find = [&](std::uint64_t t, std::uint64_t s) {
    for (const auto& e : sim.entries)
      if (e.t == t && e.s == s) return e.cosine;
    FAIL("missing entry");
    return std::optional<double>{};
  };
  CHECK(std::abs(*find(2, 1) - 0.70710678118654752) < 1e-9);
  CHECK(std::abs(*find(3, 1)) < 1e-15);
  CHECK(*find(5, 1) == doctest::Approx(1.0));
  CHECK_FALSE(find(4, 1).has_value());
  CHECK_FALSE(find(5, 4).has_value());
  // running mean at t = 5 averages the three defined cosines
  const auto& last = sim.running_mean.back();
  CHECK(last.first == 5);
  CHECK(*last.second == doctest::Approx((1.0 + 0.70710678118654752 + 0.0) / 3.0));
  // t = 4 has no defined comparison; the first snapshot has no row
  REQUIRE(sim.running_mean.size() == 4);
  CHECK(sim.running_mean[2].first == 4);
  CHECK_FALSE(sim.running_mean[2].second.has_value());
}

TEST_CASE("gradient similarity matches a brute-force oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    GradHistory h(12);
    const std::size_t n = 3 + trial;
    for (std::uint64_t t = 1; t <= 20; ++t) h.push(t * 3, testing::random_vector(rng, n));
    CHECK(h.size() == 12);
    CHECK(h.at(0).first == 9 * 3);
    const auto sim = grad_similarity_matrix(h);
    CHECK(sim.entries.size() == 12 * 11 / 2);
    for (const auto& e : sim.entries) {
      REQUIRE(e.cosine.has_value());
      CHECK(*e.cosine >= -1.0);
      CHECK(*e.cosine <= 1.0);
      const auto* gt = &h.at(0).second;
      const auto* gs = gt;
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (h.at(i).first == e.t) gt = &h.at(i).second;
        if (h.at(i).first == e.s) gs = &h.at(i).second;
      }
      long double d = 0, a = 0, b = 0;
      for (std::size_t i = 0; i < n; ++i) {
        d += static_cast<long double>((*gt)[i]) * (*gs)[i];
        a += static_cast<long double>((*gt)[i]) * (*gt)[i];
        b += static_cast<long double>((*gs)[i]) * (*gs)[i];
      }
      CHECK(std::abs(*e.cosine - static_cast<double>(d / std::sqrt(a * b))) < 1e-12);
    }
  }
}

TEST_CASE("gradient history contract") {
  GradHistory h(2);
  h.push(1, {1.0});
  CHECK_THROWS_AS(h.push(1, {1.0}), ContractError);
  CHECK_THROWS_AS(h.push(2, {1.0, 2.0}), ContractError);
  h.push(2, {2.0});
  h.push(3, {3.0});
  CHECK(h.size() == 2);
  CHECK(h.at(0).first == 2);
  CHECK_THROWS_AS(GradHistory(0), ContractError);
}

TEST_CASE("condition numbers") {
  CHECK(*condition_number(Tensor::matrix({{4, 0}, {0, 1}})) == doctest::Approx(4.0));
  CHECK_FALSE(condition_number(Tensor(Shape{3, 2})).has_value());
  // rank-deficient: only sigma > 1e-12 count
  CHECK(*condition_number(Tensor::matrix({{1, 2}, {2, 4}})) == doctest::Approx(1.0));
  // 2x2 eigen oracle: sigma^2 are the eigenvalues of M^T M
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = testing::random_tensor(rng, {2, 2});
    const double a = m[0] * m[0] + m[2] * m[2], b = m[0] * m[1] + m[2] * m[3], d = m[1] * m[1] + m[3] * m[3];
    const double tr = a + d, det = a * d - b * b;
    const double disc = std::sqrt(tr * tr / 4 - det);
    const double l1 = tr / 2 + disc, l2 = tr / 2 - disc;
    CHECK(std::abs(*condition_number(m) - std::sqrt(l1 / l2)) < 1e-8 * std::sqrt(l1 / l2));
    const auto sv = singular_values(m);
    CHECK(std::abs(sv[0] - std::sqrt(l1)) < 1e-8);
    CHECK(std::abs(sv[1] - std::sqrt(l2)) < 1e-8);
  }
}

TEST_CASE("stage diagnostics") {
  SUBCASE("identical probe batches are perfectly consistent") {
    Task t = synthetic_task(1);
    std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
    const Batch b = select_examples(t.data.train, idx);
    t.model.loss_and_grad(b);
    const auto d = stage_diagnostics(t.model, {b, b, b, b});
    CHECK(*d.batch_consistency == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*d.grad_norm > 0.0);
    // B's gradient at B = 0 is rank limited, A's is zero
    CHECK(d.cond_per_matrix.size() == 2);
  }
  SUBCASE("zero gradient has norm 0 and no condition number") {
    auto task = make_synthetic_lowrank(4, 3, 1, 0.0, 64, 2);
    Batch exact = task.data;
    exact.targets = Tensor(Shape{64, 3});
    kernels::gemm(exact.inputs.data(), kernels::Op::none, task.model.parameters().at("weight").data(),
                  kernels::Op::none, exact.targets.data(), {64, 4, 3});
    task.model.parameters().set_trainable("weight", true);
    task.model.loss_and_grad(exact);
    const auto d = stage_diagnostics(task.model, {});
    CHECK(*d.grad_norm == 0.0);
    CHECK_FALSE(d.cond_mean.has_value());
    REQUIRE(d.cond_per_matrix.size() == 1);
    CHECK_FALSE(d.cond_per_matrix[0].second.has_value());
    CHECK_FALSE(d.batch_consistency.has_value());
  }
  SUBCASE("mean pairwise cosine") {
    CHECK(mean_pairwise_cosine({{1, 0}, {0, 1}, {1, 1}}) ==
          doctest::Approx((0.0 + 0.70710678118654752 * 2) / 3.0));
    CHECK_THROWS_AS(mean_pairwise_cosine({{0, 0}, {1, 0}}), NumericError);
  }
  SUBCASE("probe batches need enough data") {
    Task t = synthetic_task(1);
    CHECK(probe_batches(t.data.train, 16, 4).size() == 4);
    CHECK_THROWS_AS(probe_batches(t.data.train, 100, 4), ContractError);
  }
}

TEST_CASE("default ranks") {
  CHECK(default_ranks(32) == std::vector<std::size_t>{1, 2, 4, 8, 16, 32});
  CHECK(default_ranks(20) == std::vector<std::size_t>{1, 2, 4, 8, 16, 20});
  CHECK(default_ranks(200) == std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64, 200});
}

TEST_CASE("rank sweep of one rank is a single comparison") {
  const auto cfg = small_protocol();
  const auto rows = rank_sweep([](std::size_t r) { return synthetic_task(2, r); }, {4}, cfg);
  REQUIRE(rows.size() == 1);
  const auto c = compare_protocol(synthetic_task(2, 4), cfg);
  CHECK(rows[0].key == "4");
  CHECK(rows[0].baseline_flops == c.baseline.ledger.total());
  CHECK(rows[0].ff_flops == c.ff.flops_at_target);
  CHECK(rows[0].savings == c.savings);
}

TEST_CASE("compare protocol bookkeeping") {
  const auto cfg = small_protocol();
  const Task t = synthetic_task(3);
  const auto c = compare_protocol(t, cfg);
  CHECK(c.target == c.baseline.final_test_loss);
  CHECK(c.baseline.stages.empty());
  CHECK(c.baseline.adam_steps == cfg.baseline_epochs * c.baseline.steps_per_epoch);
  if (c.ff.reached_target) {
    REQUIRE(c.savings.has_value());
    CHECK(*c.savings == doctest::Approx(1.0 - static_cast<double>(*c.ff.flops_at_target) /
                                                  static_cast<double>(c.baseline.ledger.total())));
    CHECK(*c.ff.flops_at_target == c.ff.ledger.total());
  } else {
    CHECK_FALSE(c.savings.has_value());
  }
  // the task's model is not modified
  CHECK(bitwise_equal(snapshot_trainable(t.model), c.initial_weights));
}

TEST_CASE("interval sweep {6} reproduces the default schedule's second stage") {
  const auto cfg = small_protocol();
  const Task t = synthetic_task(4);
  const auto pts = interval_sweep(t, {6}, cfg);
  REQUIRE(pts.size() == 1);
  Model m = t.model;
  AdamState st;
  st.hp = cfg.adam;
  StopCriterion stop;
  stop.max_epochs = cfg.ff_max_epochs;
  ScheduleHooks hooks;
  hooks.stop_after_stage = [](const StageRecord& r) { return r.stage == 1; };
  const auto r = run_schedule(m, st, t.data, cfg.ff, stop, cfg.schedule, hooks);
  REQUIRE(r.stages.size() == 2);
  CHECK(pts[0].tau_star == r.stages[1].tau_star);
  const auto all = interval_sweep(t, {1, 2, 3}, cfg);
  for (const auto& p : all) CHECK(p.tau_star.has_value());
}

TEST_CASE("duration probe on a quadratic is exactly unimodal") {
  Model q = make_quadratic({0.6, -0.4}, {1.0, 2.0}, {0.0, 0.0});
  Task t{q, dummy_splits(64)};
  ProtocolConfig cfg;
  cfg.adam.lr = 0.01;
  cfg.schedule.batch_size = 8;
  const auto probe = ff_duration_probe(t, cfg, 100);
  REQUIRE(probe.curve.size() == 101);
  CHECK(probe.entry_step == 12);
  const std::size_t argmin =
      static_cast<std::size_t>(std::min_element(probe.curve.begin(), probe.curve.end()) - probe.curve.begin());
  CHECK(argmin > 0);
  CHECK(argmin < 100);
  for (std::size_t i = 1; i <= argmin; ++i) CHECK(probe.curve[i] < probe.curve[i - 1]);
  for (std::size_t i = argmin + 1; i < probe.curve.size(); ++i) CHECK(probe.curve[i] > probe.curve[i - 1]);
  CHECK(probe.stop_rule_tau == argmin);

  // the tau = 0 entry is the stage-entry validation loss, and the real stop
  // rule at the same point accepts the curve's minimiser
  Model m = q;
  AdamState st;
  st.hp = cfg.adam;
  StopCriterion stop;
  stop.max_epochs = cfg.ff_max_epochs;
  ScheduleHooks hooks;
  hooks.stop_after_stage = [](const StageRecord&) { return true; };
  const auto r = run_schedule(m, st, t.data, cfg.ff, stop, cfg.schedule, hooks);
  REQUIRE(r.stages.size() == 1);
  CHECK(r.stages[0].val_losses[0] == probe.curve[0]);
  CHECK(r.stages[0].tau_star == argmin);
}

TEST_CASE("ff loss curve restores the model and charges evaluations") {
  Model q = make_quadratic({5.0}, {1.0}, {0.0});
  Direction dir;
  dir.delta = {1.0};
  FlopsLedger l;
  const auto curve = ff_loss_curve(q, dir, quadratic_batch(), 7, &l);
  CHECK(curve == std::vector<double>{12.5, 8.0, 4.5, 2.0, 0.5, 0.0, 0.5, 2.0});
  CHECK(q.parameters().at("w")[0] == 0.0);
  CHECK(l.get(FlopsCategory::eval_forward) == 8 * q.evaluate(quadratic_batch()).forward_flops);
}

TEST_CASE("full-rank probe") {
  const auto corpus = make_text_corpus(
      "the cat sat on the mat and the dog sat on the log while the bird sang in the tree by the sea", 8, 2, 2, 0);
  const Model lm = make_char_lm(CharLmConfig{corpus.tokenizer.vocab_size(), 8, 1, 2, 8}, 0);
  ProtocolConfig cfg;
  cfg.schedule.batch_size = 2;
  cfg.baseline_epochs = 4;
  SUBCASE("restricting to attention trains exactly Q/K/V/O") {
    const auto p = fullrank_probe(Task{lm, corpus.splits}, true, cfg);
    CHECK(p.trainable == std::vector<std::string>{"blocks.0.attn.k", "blocks.0.attn.o", "blocks.0.attn.q",
                                                  "blocks.0.attn.v"});
    CHECK(p.stages == p.result.stages.size());
    CHECK(p.zero_stages <= p.stages);
  }
  SUBCASE("all parameters") {
    const auto p = fullrank_probe(Task{lm, corpus.splits}, false, cfg);
    CHECK(p.trainable.size() == lm.parameters().size());
  }
  SUBCASE("max_ff_steps = 0 equals plain Adam") {
    ProtocolConfig zero = cfg;
    zero.ff.max_ff_steps = 0;
    zero.ff.patience = 1000;
    const auto p = fullrank_probe(Task{lm, corpus.splits}, false, zero);
    Model m = lm;
    for (const auto& n : m.parameters().names()) m.parameters().set_trainable(n, true);
    AdamState st;
    st.hp = cfg.adam;
    FastForwardConfig off;
    off.enabled = false;
    StopCriterion stop;
    stop.max_epochs = cfg.baseline_epochs;
    const auto r = run_schedule(m, st, corpus.splits, off, stop, cfg.schedule);
    std::vector<double> a, b;
    for (const auto& row : p.result.log)
      if (row.train_loss) a.push_back(*row.train_loss);
    for (const auto& row : r.log)
      if (row.train_loss) b.push_back(*row.train_loss);
    CHECK(a == b);
  }
  SUBCASE("contract violations") {
    AdapterSpec spec;
    CHECK_THROWS_AS(fullrank_probe(Task{attach(lm, spec, 0), corpus.splits}, false, cfg), ContractError);
    auto task = make_synthetic_lowrank(4, 4, 1, 0.1, 64, 0);
    CHECK_THROWS_AS(fullrank_probe(Task{task.model, split_dataset(task.data, 8, 8, 0)}, true, cfg), ConfigError);
  }
}
