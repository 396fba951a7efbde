#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tcprune/accounting.hpp"
#include "tcprune/criterion.hpp"
#include "tcprune/data.hpp"
#include "tcprune/driver.hpp"
#include "tcprune/model_zoo.hpp"
#include "tcprune/params.hpp"
#include "tcprune/surgery.hpp"
#include "tcprune/uda_loss.hpp"

using namespace tcprune;

namespace {

// Tiny oriented-bar task shared by the driver tests. Mild shift, fast to
// train on a single core.
DomainPair tiny_data(int classes = 3, std::int64_t n = 48, std::uint64_t seed = 5) {
  GenSpec spec;
  spec.classes = classes;
  spec.n_source = n;
  spec.n_target = n;
  spec.height = 8;
  spec.width = 8;
  spec.channels = 1;
  spec.base_noise = 0.02f;
  spec.shift.brightness = 0.1f;
  spec.shift.noise_sigma = 0.02f;
  return generate_synthetic_domains(spec, seed);
}

PruneConfig tiny_config() {
  PruneConfig cfg;
  cfg.k = 2;
  cfg.iters = 4;
  cfg.flops_target = 0.5;
  cfg.short_ft_epochs = 1;
  cfg.long_ft_epochs = 1;
  cfg.base_ft_epochs = 2;
  cfg.batch = 16;
  cfg.seed = 11;
  cfg.mmd.bandwidth = MmdBandwidth::Fixed;
  cfg.mmd.fixed_sigma = 2.0;
  return cfg;
}

}  // namespace

TEST_CASE("method names round-trip; unknown names are config errors") {
  for (Method m : {Method::Tcp, Method::TcpNoDa, Method::TwoStage, Method::Random})
    CHECK(method_from_name(method_name(m)) == m);
  CHECK(method_from_name("tcp") == Method::Tcp);
  CHECK(method_from_name("tcp_no_da") == Method::TcpNoDa);
  CHECK(method_from_name("two_stage") == Method::TwoStage);
  CHECK(method_from_name("random") == Method::Random);
  CHECK_THROWS_AS(method_from_name("magnitude"), config_error);
}

TEST_CASE("config validation rejects out-of-range knobs") {
  PruneConfig ok = tiny_config();
  ok.validate();

  auto reject = [&](auto mutate) {
    PruneConfig bad = tiny_config();
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), config_error);
  };
  reject([](PruneConfig& c) { c.k = 0; });
  reject([](PruneConfig& c) { c.iters = 0; });
  reject([](PruneConfig& c) { c.flops_target = 0.0; });
  reject([](PruneConfig& c) { c.flops_target = 1.5; });
  reject([](PruneConfig& c) { c.accuracy_floor = -0.1; });
  reject([](PruneConfig& c) { c.accuracy_floor = 1.1; });
  reject([](PruneConfig& c) { c.short_ft_epochs = -1; });
  reject([](PruneConfig& c) { c.lr_hi = 0.0; });
  reject([](PruneConfig& c) { c.lr_lo = 2.0 * c.lr_hi; });
  reject([](PruneConfig& c) { c.momentum = 1.0; });
  reject([](PruneConfig& c) { c.momentum = -0.1; });
  reject([](PruneConfig& c) { c.batch = 0; });
  reject([](PruneConfig& c) { c.floor_per_layer = 0; });
  reject([](PruneConfig& c) { c.target_val_fraction = 0.0; });
  reject([](PruneConfig& c) { c.target_val_fraction = 1.0; });
  reject([](PruneConfig& c) { c.score_batches = -1; });
  reject([](PruneConfig& c) { c.base_beta = -0.5; });
}

TEST_CASE("target split is deterministic and partitions the domain") {
  DomainPair data = tiny_data(3, 50, 21);
  TargetSplit a = split_target(data, 0.2, 7);
  TargetSplit b = split_target(data, 0.2, 7);
  CHECK(a.val_x.values == b.val_x.values);
  CHECK(a.val_y == b.val_y);
  CHECK(a.train_x.values == b.train_x.values);

  CHECK(a.val_x.dim(0) == 10);
  CHECK(a.train_x.dim(0) == 40);
  CHECK(a.val_y.size() == 10);

  TargetSplit c = split_target(data, 0.2, 8);
  CHECK(a.val_x.values != c.val_x.values);  // the split follows the seed

  // Every target example lands in exactly one side: match rows by content.
  std::multiset<float> all_pixels(data.target_x.values.begin(), data.target_x.values.end());
  std::multiset<float> split_pixels(a.val_x.values.begin(), a.val_x.values.end());
  split_pixels.insert(a.train_x.values.begin(), a.train_x.values.end());
  CHECK(all_pixels == split_pixels);

  // Extreme fractions still leave both sides nonempty.
  TargetSplit lo = split_target(data, 0.001, 1);
  CHECK(lo.val_x.dim(0) == 1);
  TargetSplit hi = split_target(data, 0.999, 1);
  CHECK(hi.train_x.dim(0) == 1);
}

TEST_CASE("base training: empty budget is a no-op, same seed is bit-stable") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  PruneConfig cfg = tiny_config();
  TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);

  SUBCASE("zero epochs") {
    cfg.base_ft_epochs = 0;
    ParameterStore p = init_params<float>(g, cfg.seed);
    ParameterStore orig = p;
    TrainLog log = train_base(g, p, data, split, cfg, 0.3);
    for (const auto& name : p.names()) CHECK(p.at(name).values == orig.at(name).values);
    CHECK(log.epoch_loss.empty());
    CHECK(log.best_epoch == -1);
  }

  SUBCASE("determinism across runs") {
    ParameterStore p1 = init_params<float>(g, cfg.seed);
    ParameterStore p2 = init_params<float>(g, cfg.seed);
    TrainLog l1 = train_base(g, p1, data, split, cfg, 0.3);
    TrainLog l2 = train_base(g, p2, data, split, cfg, 0.3);
    for (const auto& name : p1.names()) CHECK(p1.at(name).values == p2.at(name).values);
    CHECK(l1.epoch_loss == l2.epoch_loss);
    CHECK(l1.best_val_acc == l2.best_val_acc);
    CHECK(l1.best_epoch == l2.best_epoch);
    CHECK(l1.epoch_loss.size() == 2);
  }
}

TEST_CASE("base training masters a separable identical-domain task") {
  // No covariate shift, clean bars, two classes: the sanity bar is high
  // accuracy on target validation within a small budget.
  GenSpec spec;
  spec.classes = 2;
  spec.n_source = 96;
  spec.n_target = 96;
  spec.height = 8;
  spec.width = 8;
  spec.base_noise = 0.01f;
  DomainPair data = generate_synthetic_domains(spec, 3);

  ModelGraph g = build_arch("toy", {1, 8, 8}, 2);
  PruneConfig cfg = tiny_config();
  cfg.base_ft_epochs = 15;
  cfg.seed = 4;
  TargetSplit split = split_target(data, 0.25, cfg.seed);
  ParameterStore p = init_params<float>(g, cfg.seed);
  TrainLog log = train_base(g, p, data, split, cfg, 0.0);
  CHECK(log.best_val_acc > 0.95);
  // Training loss went somewhere useful along the way.
  CHECK(log.epoch_loss.front() > log.epoch_loss.back());
}

TEST_CASE("divergent training reports a numeric error naming the epoch") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  PruneConfig cfg = tiny_config();
  cfg.lr_hi = 1e10;   // guaranteed blow-up
  cfg.lr_lo = 1e10;
  cfg.base_ft_epochs = 3;
  TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);
  ParameterStore p = init_params<float>(g, cfg.seed);
  try {
    train_base(g, p, data, split, cfg, 0.3);
    CHECK(false);
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("one pruning iteration: cut size, accounting, structure, ramp") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  PruneConfig cfg = tiny_config();
  TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);

  PruneState state;
  state.graph = g;
  state.params = init_params<float>(g, cfg.seed);
  state.baseline_flops = count_flops(g);
  state.baseline_params = count_params(state.params);
  SgdOptimizer opt(static_cast<float>(cfg.lr_hi), static_cast<float>(cfg.momentum));

  ScoreTable captured;
  IterationHooks hooks;
  hooks.on_scores = [&](const ScoreTable& t) { captured = t; };

  prune_iteration(state, opt, data, split, cfg, &hooks);

  REQUIRE(state.rows.size() == 1);
  const PruneRow& row = state.rows[0];
  CHECK(state.iteration == 1);
  CHECK(row.iteration == 0);
  CHECK(row.removed.size() == 2);
  CHECK(row.flops < state.baseline_flops);
  CHECK(row.flops == count_flops(state.graph));
  CHECK(row.params == count_params(state.params));
  CHECK(row.flops_down ==
        doctest::Approx(1.0 - double(row.flops) / double(state.baseline_flops)));
  CHECK(row.beta == 0.0);  // the ramp starts at zero
  CHECK(state.beta_trace == std::vector<double>{0.0});
  CHECK(validate_structure(state.graph, state.params).empty());

  // The removed channels are the k cheapest by an independent re-ranking of
  // the captured table.
  CHECK(captured.batches > 0);
  RankResult want = rank_channels(captured, g, {}, cfg.k, cfg.floor_per_layer);
  CHECK(row.removed == want.removed);

  // Optimizer state was sliced alongside the parameters.
  for (const auto& [name, v] : opt.velocity())
    CHECK(v.shape == state.params.at(name).shape);

  // A second iteration moves the ramp to beta(1, iters) and keeps cutting.
  prune_iteration(state, opt, data, split, cfg, nullptr);
  CHECK(state.rows.size() == 2);
  CHECK(state.rows[1].flops < state.rows[0].flops);
  CHECK(state.beta_trace[1] == doctest::Approx(beta_schedule(1, cfg.iters)).epsilon(1e-15));
}

TEST_CASE("iterating to exhaustion raises the stop flag instead of failing") {
  DomainPair data = tiny_data();
  ModelGraph g = build_toy_two_conv({1, 8, 8}, 3, 3, 3, 6);
  PruneConfig cfg = tiny_config();
  cfg.k = 50;  // far more than the prunable pool
  cfg.short_ft_epochs = 0;
  TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);

  PruneState state;
  state.graph = g;
  state.params = init_params<float>(g, cfg.seed);
  state.baseline_flops = count_flops(g);
  state.baseline_params = count_params(state.params);
  SgdOptimizer opt(0.01f, 0.9f);

  prune_iteration(state, opt, data, split, cfg, nullptr);
  // Floor keeps one channel in conv1, one in conv2, one unit in fc_repr.
  REQUIRE(state.rows.size() == 1);
  CHECK(state.rows[0].removed.size() < 50);
  for (const auto& lid : state.graph.prunable_layer_ids())
    CHECK(state.graph.at(lid).out_channels == 1);

  prune_iteration(state, opt, data, split, cfg, nullptr);
  CHECK(state.stop);
  CHECK(state.stop_reason == "exhausted");
  CHECK(state.rows.size() == 1);  // no second row once nothing is removable
}

TEST_CASE("run with a vacuous flops target returns the base model untouched") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  ParameterStore base = init_params<float>(g, 31);
  PruneConfig cfg = tiny_config();
  cfg.flops_target = 1.0;

  RunResult r = run(Method::Tcp, g, base, data, cfg);
  CHECK(r.report.rows.empty());
  CHECK(r.report.stop_reason == "flops_target");
  for (const auto& name : base.names())
    CHECK(r.params.at(name).values == base.at(name).values);
  CHECK(count_flops(r.graph) == count_flops(g));
  CHECK(r.report.baseline_flops == count_flops(g));
  CHECK(r.report.final_acc == r.report.baseline_acc);
}

TEST_CASE("full runs: budget stop, monotone flops, coherent report") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  ParameterStore base = init_params<float>(g, 41);
  PruneConfig cfg = tiny_config();
  cfg.flops_target = 0.05;  // unreachable before the iteration budget
  cfg.iters = 3;

  RunResult r = run(Method::Tcp, g, base, data, cfg);
  CHECK(r.report.method == "tcp");
  CHECK(r.report.stop_reason == "iter_budget");
  CHECK(r.report.rows.size() == 3);
  std::int64_t prev = r.report.baseline_flops;
  int removed_total = 0;
  for (const auto& row : r.report.rows) {
    CHECK(row.flops < prev);
    prev = row.flops;
    removed_total += static_cast<int>(row.removed.size());
  }
  CHECK(removed_total == 3 * cfg.k);  // no truncation at this scale
  CHECK(r.report.rows.back().flops == count_flops(r.graph));
  CHECK(!r.report.config_hash.empty());
  CHECK(validate_structure(r.graph, r.params).empty());

  // Per-layer survivor counts describe the final graph.
  for (const auto& [layer, n] : r.report.final_channels)
    CHECK(r.graph.at(layer).out_channels == n);

  // The beta trace is the analytic ramp, exactly.
  for (std::size_t i = 0; i < r.report.rows.size(); ++i)
    CHECK(r.report.rows[i].beta ==
          beta_schedule(static_cast<int>(i), cfg.iters));
}

TEST_CASE("method variants differ exactly where the design says they differ") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  ParameterStore base = init_params<float>(g, 51);
  PruneConfig cfg = tiny_config();
  cfg.iters = 2;
  cfg.flops_target = 0.01;

  RunResult tcp = run(Method::Tcp, g, base, data, cfg);
  RunResult noda = run(Method::TcpNoDa, g, base, data, cfg);
  RunResult twos = run(Method::TwoStage, g, base, data, cfg);

  // Iteration 0 selections coincide: the ramp is zero there, so scores match.
  REQUIRE(!tcp.report.rows.empty());
  REQUIRE(!noda.report.rows.empty());
  CHECK(tcp.report.rows[0].removed == noda.report.rows[0].removed);
  CHECK(tcp.report.rows[0].removed == twos.report.rows[0].removed);

  // The no-adaptation and staged pipelines keep beta at zero during pruning.
  for (const auto& row : noda.report.rows) CHECK(row.beta == 0.0);
  for (const auto& row : twos.report.rows) CHECK(row.beta == 0.0);
  // The ramped pipeline leaves zero after the first iteration.
  CHECK(tcp.report.rows[1].beta > 0.0);
}

TEST_CASE("random selection is seed-reproducible and respects the floor") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  ParameterStore base = init_params<float>(g, 61);
  PruneConfig cfg = tiny_config();
  cfg.iters = 3;
  cfg.flops_target = 0.01;

  RunResult a = run(Method::Random, g, base, data, cfg);
  RunResult b = run(Method::Random, g, base, data, cfg);
  REQUIRE(a.report.rows.size() == b.report.rows.size());
  for (std::size_t i = 0; i < a.report.rows.size(); ++i)
    CHECK(a.report.rows[i].removed == b.report.rows[i].removed);

  cfg.seed = 62;
  RunResult c = run(Method::Random, g, base, data, cfg);
  bool any_diff = c.report.rows.size() != a.report.rows.size();
  for (std::size_t i = 0; !any_diff && i < a.report.rows.size(); ++i)
    any_diff = a.report.rows[i].removed != c.report.rows[i].removed;
  CHECK(any_diff);

  // No layer ever dips below the floor.
  for (const auto& [layer, n] : a.report.final_channels) CHECK(n >= cfg.floor_per_layer);
}

TEST_CASE("accuracy floor stops a run after two consecutive violations") {
  DomainPair data = tiny_data();
  ModelGraph g = build_arch("toy", {1, 8, 8}, 3);
  ParameterStore base = init_params<float>(g, 71);
  PruneConfig cfg = tiny_config();
  // An untrained model never reaches the (legal) ceiling floor of 1.0, so
  // every iteration violates it; zero fine-tune budget keeps it untrained.
  cfg.accuracy_floor = 1.0;
  cfg.short_ft_epochs = 0;
  cfg.long_ft_epochs = 0;
  cfg.iters = 8;
  cfg.flops_target = 0.01;

  RunResult r = run(Method::Tcp, g, base, data, cfg);
  CHECK(r.report.stop_reason == "accuracy_floor");
  CHECK(r.report.rows.size() == 2);
}
