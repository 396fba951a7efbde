#include "tcprune/driver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tcprune/runcfg.hpp"
#include "tcprune/surgery.hpp"

namespace tcprune {

Method method_from_name(const std::string& name) {
  if (name == "tcp") return Method::Tcp;
  if (name == "tcp_no_da") return Method::TcpNoDa;
  if (name == "two_stage") return Method::TwoStage;
  if (name == "random") return Method::Random;
  throw config_error("unknown method '" + name +
                     "' (expected tcp, tcp_no_da, two_stage, or random)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::Tcp: return "tcp";
    case Method::TcpNoDa: return "tcp_no_da";
    case Method::TwoStage: return "two_stage";
    case Method::Random: return "random";
  }
  return "?";
}

void PruneConfig::validate() const {
  if (k < 1) throw config_error("k must be at least 1");
  if (iters < 1) throw config_error("iters must be at least 1");
  if (!(flops_target > 0 && flops_target <= 1))
    throw config_error("flops_target must lie in (0,1]");
  if (accuracy_floor && !(*accuracy_floor >= 0 && *accuracy_floor <= 1))
    throw config_error("accuracy_floor must lie in [0,1]");
  if (short_ft_epochs < 0 || long_ft_epochs < 0 || base_ft_epochs < 0)
    throw config_error("epoch budgets cannot be negative");
  if (!(lr_hi > 0) || !(lr_lo > 0) || lr_lo > lr_hi)
    throw config_error("learning rate endpoints must satisfy 0 < lr_lo <= lr_hi");
  if (!(momentum >= 0 && momentum < 1)) throw config_error("momentum must lie in [0,1)");
  if (batch < 1) throw config_error("batch size must be at least 1");
  if (floor_per_layer < 1) throw config_error("per-layer channel floor must be at least 1");
  if (!(target_val_fraction > 0 && target_val_fraction < 1))
    throw config_error("target validation fraction must lie in (0,1)");
  if (score_batches < 0) throw config_error("score_batches cannot be negative");
  if (!(base_beta >= 0)) throw config_error("base_beta cannot be negative");
}

TargetSplit split_target(const DomainPair& data, double val_fraction, std::uint64_t seed) {
  const std::int64_t N = data.target_x.dim(0);
  if (N < 2) throw config_error("target domain too small to split");
  std::int64_t val_n = static_cast<std::int64_t>(std::llround(val_fraction * double(N)));
  val_n = std::clamp<std::int64_t>(val_n, 1, N - 1);

  std::vector<std::int64_t> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, "target_split"));
  std::shuffle(order.begin(), order.end(), rng);

  const std::int64_t C = data.target_x.dim(1), H = data.target_x.dim(2),
                     W = data.target_x.dim(3);
  const auto& labels = data.target_labels_for_eval();

  TargetSplit split;
  split.val_x = Tensor({val_n, C, H, W});
  split.val_y.resize(static_cast<std::size_t>(val_n));
  split.train_x = Tensor({N - val_n, C, H, W});
  for (std::int64_t i = 0; i < N; ++i) {
    const std::int64_t src = order[static_cast<std::size_t>(i)];
    if (i < val_n) {
      std::copy_n(data.target_x.data() + src * C * H * W, C * H * W,
                  split.val_x.data() + i * C * H * W);
      split.val_y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    } else {
      std::copy_n(data.target_x.data() + src * C * H * W, C * H * W,
                  split.train_x.data() + (i - val_n) * C * H * W);
    }
  }
  return split;
}

namespace {

template <class M>
void add_grads(std::map<std::string, Tensor>& into, M&& from) {
  for (auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, std::move(g));
    } else {
      auto& dst = it->second.values;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.values[i];
    }
  }
}

// One joint epoch over paired source/target batches. Returns per-epoch mean
// losses; throws numeric_error the moment a loss stops being finite.
LossBreakdown train_epoch(const ModelGraph& graph, ParameterStore& params, SgdOptimizer& opt,
                          BatchStream& src, BatchStream& tgt, std::int64_t epoch, double beta,
                          const PruneConfig& cfg) {
  src.start_epoch(epoch);
  tgt.start_epoch(epoch);
  const std::int64_t pairs = std::min(src.batches_per_epoch(), tgt.batches_per_epoch());

  const LayerSpec* repr = graph.representation_layer();
  if (!repr) throw structural_error("graph has no representation layer");
  const std::string out_id = graph.output_layer().id;

  ForwardOptions opts;
  opts.record = true;
  opts.bn_mode = BnMode::Train;
  opts.update_running = true;

  Tensor sx, tx;
  std::vector<std::int32_t> sy, ty_unused;
  LossBreakdown sums;
  for (std::int64_t b = 0; b < pairs; ++b) {
    if (!src.next(sx, sy) || !tgt.next(tx, ty_unused))
      throw structural_error("batch stream exhausted before the paired batch count");

    ActivationTrace strace;
    Tensor logits = forward_pass(graph, params, sx, opts, &strace, &params);
    auto ce = cross_entropy(logits, sy, true);

    double mmd_value = 0;
    std::map<std::string, Tensor> sseeds, tseeds;
    sseeds.emplace(out_id, std::move(ce.grad_logits));

    ActivationTrace ttrace;
    if (beta > 0) {
      forward_pass(graph, params, tx, opts, &ttrace, &params);
      auto mmd = mmd_loss(strace.at(repr->id), ttrace.at(repr->id), cfg.mmd, true);
      mmd_value = mmd.value;
      for (auto& v : mmd.grad_source.values) v *= static_cast<float>(beta);
      for (auto& v : mmd.grad_target.values) v *= static_cast<float>(beta);
      // The representation can coincide with the classifier output (the
      // residual zoo member adapts its logits), so accumulate rather than
      // insert: a plain emplace would silently drop the second seed.
      accumulate_seed(sseeds, repr->id, std::move(mmd.grad_source));
      tseeds.emplace(repr->id, std::move(mmd.grad_target));
    }

    const double total = ce.value + beta * mmd_value;
    if (!std::isfinite(total))
      throw numeric_error("training diverged (non-finite loss) at epoch " +
                          std::to_string(epoch) + ", batch " + std::to_string(b) +
                          "; parameters retain the last finite state");

    GradientSet grads = backward_pass(graph, params, strace, sseeds);
    if (!tseeds.empty()) {
      GradientSet tgrads = backward_pass(graph, params, ttrace, tseeds);
      add_grads(grads.param_grads, std::move(tgrads.param_grads));
    }
    opt.step(params, grads);

    sums.cls += ce.value;
    sums.mmd += mmd_value;
    sums.total += total;
  }
  if (pairs > 0) {
    sums.cls /= double(pairs);
    sums.mmd /= double(pairs);
    sums.total /= double(pairs);
  }
  sums.beta = beta;
  return sums;
}

double lr_at(const PruneConfig& cfg, int epoch, int total_epochs) {
  if (total_epochs <= 1) return cfg.lr_hi;
  const double t = double(epoch) / double(total_epochs - 1);
  return cfg.lr_hi * std::pow(cfg.lr_lo / cfg.lr_hi, t);
}

}  // namespace

void fine_tune(const ModelGraph& graph, ParameterStore& params, SgdOptimizer& opt,
               const DomainPair& data, const TargetSplit& split, const PruneConfig& cfg,
               double beta, int epochs, std::uint64_t seed_salt, TrainLog* log) {
  if (epochs <= 0) return;
  BatchStream src(data.source_x, &data.source_y, cfg.batch,
                  mix_seed(cfg.seed, "ft/source", seed_salt), cfg.augment);
  BatchStream tgt(split.train_x, nullptr, cfg.batch, mix_seed(cfg.seed, "ft/target", seed_salt),
                  cfg.augment);
  for (int e = 0; e < epochs; ++e) {
    opt.set_lr(static_cast<float>(lr_at(cfg, e, epochs)));
    LossBreakdown ep = train_epoch(graph, params, opt, src, tgt, e, beta, cfg);
    if (log) {
      log->epoch_loss.push_back(ep.total);
      log->epoch_cls.push_back(ep.cls);
      log->epoch_mmd.push_back(ep.mmd);
    }
  }
}

TrainLog train_base(const ModelGraph& graph, ParameterStore& params, const DomainPair& data,
                    const TargetSplit& split, const PruneConfig& cfg, double beta) {
  TrainLog log;
  if (cfg.base_ft_epochs <= 0) return log;

  SgdOptimizer opt(static_cast<float>(cfg.lr_hi), static_cast<float>(cfg.momentum));
  BatchStream src(data.source_x, &data.source_y, cfg.batch, mix_seed(cfg.seed, "base/source"),
                  cfg.augment);
  BatchStream tgt(split.train_x, nullptr, cfg.batch, mix_seed(cfg.seed, "base/target"),
                  cfg.augment);

  ParameterStore best = params;
  for (int e = 0; e < cfg.base_ft_epochs; ++e) {
    opt.set_lr(static_cast<float>(lr_at(cfg, e, cfg.base_ft_epochs)));
    LossBreakdown ep = train_epoch(graph, params, opt, src, tgt, e, beta, cfg);
    log.epoch_loss.push_back(ep.total);
    log.epoch_cls.push_back(ep.cls);
    log.epoch_mmd.push_back(ep.mmd);

    const double acc =
        evaluate_accuracy(graph, params, split.val_x, split.val_y, cfg.batch);
    if (acc > log.best_val_acc || log.best_epoch < 0) {
      log.best_val_acc = acc;
      log.best_epoch = e;
      best = params;
    }
  }
  params = std::move(best);
  return log;
}

namespace {

std::vector<ChannelId> pick_random_channels(const ModelGraph& graph, int k, int floor_per_layer,
                                            std::uint64_t seed, std::uint64_t iteration) {
  std::vector<ChannelId> pool;
  std::map<std::string, int> live;
  for (const auto& lid : graph.prunable_layer_ids()) {
    const int channels = graph.at(lid).out_channels;
    live[lid] = channels;
    for (int c = 0; c < channels; ++c) pool.push_back(ChannelId{lid, c});
  }
  std::mt19937_64 rng(mix_seed(seed, "random_pick", iteration));
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<ChannelId> picked;
  for (const ChannelId& id : pool) {
    if (static_cast<int>(picked.size()) == k) break;
    auto& remaining = live[id.layer];
    if (remaining - 1 < floor_per_layer) continue;
    remaining -= 1;
    picked.push_back(id);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace

void prune_iteration(PruneState& state, SgdOptimizer& opt, const DomainPair& data,
                     const TargetSplit& split, const PruneConfig& cfg,
                     const IterationHooks* hooks) {
  const int i = state.iteration;
  const double ramp = beta_schedule(std::min(i, cfg.iters), cfg.iters);

  double beta_criterion = 0, beta_ft = 0;
  switch (cfg.method) {
    case Method::Tcp:
      beta_criterion = beta_ft = ramp;
      break;
    case Method::Random:
      beta_ft = ramp;  // selection ignores scores; training budget matches tcp
      break;
    case Method::TcpNoDa:
    case Method::TwoStage:
      break;  // source-only pruning phase
  }

  std::vector<ChannelId> removed;
  bool truncated = false;
  if (cfg.method == Method::Random) {
    removed = pick_random_channels(state.graph, cfg.k, cfg.floor_per_layer, cfg.seed,
                                   static_cast<std::uint64_t>(i));
    truncated = static_cast<int>(removed.size()) < cfg.k;
  } else {
    BatchStream src(data.source_x, &data.source_y, cfg.batch,
                    mix_seed(cfg.seed, "score/source", static_cast<std::uint64_t>(i)));
    BatchStream tgt(split.train_x, nullptr, cfg.batch,
                    mix_seed(cfg.seed, "score/target", static_cast<std::uint64_t>(i)));
    src.start_epoch(0);
    tgt.start_epoch(0);
    std::int64_t pairs = std::min(src.batches_per_epoch(), tgt.batches_per_epoch());
    if (cfg.score_batches > 0) pairs = std::min<std::int64_t>(pairs, cfg.score_batches);

    ScoreTable table;
    table.iteration = i;
    Tensor sx, tx;
    std::vector<std::int32_t> sy, ty_unused;
    for (std::int64_t b = 0; b < pairs; ++b) {
      if (!src.next(sx, sy) || !tgt.next(tx, ty_unused)) break;
      table.add_batch(transfer_scores_for_batch(state.graph, state.params, sx, sy, tx,
                                                beta_criterion, cfg.mmd, nullptr));
    }
    if (table.batches == 0)
      throw config_error("scoring pass produced no batches; shrink the batch size");
    if (hooks && hooks->on_scores) hooks->on_scores(table);

    RankResult rank = rank_channels(table, state.graph, {}, cfg.k, cfg.floor_per_layer);
    removed = std::move(rank.removed);
    truncated = rank.truncated;

    if (!cfg.score_dump_dir.empty())
      write_score_csv(table, removed,
                      cfg.score_dump_dir + "/scores_iter" + std::to_string(i) + ".csv");
  }

  if (truncated)
    std::fprintf(stderr, "note: iteration %d removed %zu channels (floor truncated k=%d)\n", i,
                 removed.size(), cfg.k);
  if (removed.empty()) {
    state.stop = true;
    state.stop_reason = "exhausted";
    return;
  }

  ChannelMask mask;
  for (const ChannelId& id : removed) mask[id.layer].insert(id.channel);
  SurgeryPlan plan = plan_surgery(state.graph, mask);
  state.params = apply_surgery(plan, state.params);
  opt.velocity() = apply_surgery_aux(plan, opt.velocity());
  state.graph = std::move(plan.new_graph);

  fine_tune(state.graph, state.params, opt, data, split, cfg, beta_ft, cfg.short_ft_epochs,
            1000 + static_cast<std::uint64_t>(i));

  PruneRow row;
  row.iteration = i;
  row.flops = count_flops(state.graph);
  row.flops_down = 1.0 - double(row.flops) / double(state.baseline_flops);
  row.params = count_params(state.params);
  row.params_down = 1.0 - double(row.params) / double(state.baseline_params);
  row.target_acc = evaluate_accuracy(state.graph, state.params, split.val_x, split.val_y,
                                     cfg.batch);
  row.beta = beta_ft;
  row.removed = std::move(removed);
  state.rows.push_back(std::move(row));
  state.beta_trace.push_back(beta_ft);

  if (cfg.accuracy_floor) {
    if (state.rows.back().target_acc < *cfg.accuracy_floor) {
      if (++state.floor_violations >= 2) {
        state.stop = true;
        state.stop_reason = "accuracy_floor";
      }
    } else {
      state.floor_violations = 0;
    }
  }
  ++state.iteration;
}

namespace {

std::string config_fingerprint(const PruneConfig& cfg) {
  std::ostringstream os;
  os << "k=" << cfg.k << ";iters=" << cfg.iters << ";flops_target=" << cfg.flops_target
     << ";floor=" << cfg.floor_per_layer << ";short_ft=" << cfg.short_ft_epochs
     << ";long_ft=" << cfg.long_ft_epochs << ";base_ft=" << cfg.base_ft_epochs
     << ";lr=" << cfg.lr_hi << ".." << cfg.lr_lo << ";momentum=" << cfg.momentum
     << ";batch=" << cfg.batch << ";seed=" << cfg.seed << ";method=" << method_name(cfg.method)
     << ";mmd=" << cfg.mmd.str() << ";base_beta=" << cfg.base_beta
     << ";val_fraction=" << cfg.target_val_fraction << ";score_batches=" << cfg.score_batches;
  if (cfg.accuracy_floor) os << ";accuracy_floor=" << *cfg.accuracy_floor;
  const std::string s = os.str();
  return hash_hex(fnv1a64(s.data(), s.size()));
}

}  // namespace

RunResult run(Method method, const ModelGraph& graph, const ParameterStore& params,
              const DomainPair& data, const PruneConfig& cfg_in) {
  PruneConfig cfg = cfg_in;
  cfg.method = method;
  cfg.validate();

  TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);

  PruneState state;
  state.graph = graph;
  state.params = params;
  state.baseline_flops = count_flops(graph);
  state.baseline_params = count_params(params);

  RunResult result;
  result.report.method = method_name(method);
  result.report.seed = cfg.seed;
  result.report.config_hash = config_fingerprint(cfg);
  result.report.baseline_flops = state.baseline_flops;
  result.report.baseline_params = state.baseline_params;
  result.report.baseline_acc =
      evaluate_accuracy(graph, params, split.val_x, split.val_y, cfg.batch);

  SgdOptimizer opt(static_cast<float>(cfg.lr_hi), static_cast<float>(cfg.momentum));
  const std::int64_t flops_stop =
      static_cast<std::int64_t>(std::floor(cfg.flops_target * double(state.baseline_flops)));

  while (!state.stop) {
    if (count_flops(state.graph) <= flops_stop) {
      state.stop = true;
      state.stop_reason = "flops_target";
      break;
    }
    if (state.iteration >= cfg.iters) {
      state.stop = true;
      state.stop_reason = "iter_budget";
      break;
    }
    prune_iteration(state, opt, data, split, cfg, nullptr);
  }

  // The long fine-tune exists to recover from pruning damage; when the target
  // was already met before the first removal there is nothing to recover.
  if (!state.rows.empty()) {
    double beta_long = 0;
    switch (method) {
      case Method::Tcp:
      case Method::Random:
      case Method::TwoStage:
        beta_long = cfg.base_beta;
        break;
      case Method::TcpNoDa:
        break;
    }
    fine_tune(state.graph, state.params, opt, data, split, cfg, beta_long, cfg.long_ft_epochs,
              9999);
  }

  result.report.final_acc =
      evaluate_accuracy(state.graph, state.params, split.val_x, split.val_y, cfg.batch);
  result.report.stop_reason = state.stop_reason;
  result.report.rows = state.rows;
  for (const auto& lid : state.graph.prunable_layer_ids())
    result.report.final_channels[lid] = state.graph.at(lid).out_channels;
  result.graph = std::move(state.graph);
  result.params = std::move(state.params);
  return result;
}

}  // namespace tcprune
