#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcprune/accounting.hpp"
#include "tcprune/autograd.hpp"
#include "tcprune/criterion.hpp"
#include "tcprune/data.hpp"
#include "tcprune/graph.hpp"
#include "tcprune/params.hpp"
#include "tcprune/uda_loss.hpp"

namespace tcprune {

enum class Method { Tcp, TcpNoDa, TwoStage, Random };

Method method_from_name(const std::string& name);
const char* method_name(Method m);

struct PruneConfig {
  int k{4};                    // channels removed per iteration
  int iters{32};               // max pruning iterations (also Eq. ramp length)
  double flops_target{0.5};    // stop once flops <= target * baseline
  std::optional<double> accuracy_floor;  // stop after 2 consecutive violations
  int short_ft_epochs{5};
  int long_ft_epochs{10};
  int base_ft_epochs{20};
  double lr_hi{0.01};
  double lr_lo{0.0001};
  double momentum{0.9};
  std::int64_t batch{32};
  std::uint64_t seed{1};
  Method method{Method::Tcp};
  MmdConfig mmd;
  double base_beta{0.9242343145200196};  // ramp endpoint, used outside the ramp
  int floor_per_layer{1};
  double target_val_fraction{0.2};  // held-out labeled target split for accuracy
  int score_batches{0};             // 0 = full pass over the shorter domain
  AugmentConfig augment;
  std::string score_dump_dir;       // per-iteration score CSVs when non-empty

  void validate() const;  // throws config_error
};

struct PruneState {
  int iteration{0};
  ModelGraph graph;
  ParameterStore params;
  std::int64_t baseline_flops{0};
  std::int64_t baseline_params{0};
  std::vector<PruneRow> rows;
  std::vector<double> beta_trace;
  bool stop{false};
  std::string stop_reason;
  int floor_violations{0};
};

// Labeled target split used for accuracy reporting during a run.
struct TargetSplit {
  Tensor train_x;               // unlabeled portion, drives MMD
  Tensor val_x;
  std::vector<std::int32_t> val_y;
};

TargetSplit split_target(const DomainPair& data, double val_fraction, std::uint64_t seed);

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_cls;
  std::vector<double> epoch_mmd;
  double best_val_acc{0};
  int best_epoch{-1};
};

// Joint source-classification + MMD training; beta fixed at cfg.base_beta
// (0 for source-only baselines). Keeps the best-on-target-validation
// snapshot. Throws numeric_error on divergence.
TrainLog train_base(const ModelGraph& graph, ParameterStore& params, const DomainPair& data,
                    const TargetSplit& split, const PruneConfig& cfg, double beta);

// Shorter fine-tune used inside the pruning loop; no best-snapshot logic.
void fine_tune(const ModelGraph& graph, ParameterStore& params, SgdOptimizer& opt,
               const DomainPair& data, const TargetSplit& split, const PruneConfig& cfg,
               double beta, int epochs, std::uint64_t seed_salt, TrainLog* log = nullptr);

// One evaluate -> select -> cut -> short-fine-tune step.
struct IterationHooks {
  // Invoked with the accumulated score table before ranking (tests use this).
  std::function<void(const ScoreTable&)> on_scores;
};

void prune_iteration(PruneState& state, SgdOptimizer& opt, const DomainPair& data,
                     const TargetSplit& split, const PruneConfig& cfg,
                     const IterationHooks* hooks = nullptr);

struct RunResult {
  ModelGraph graph;
  ParameterStore params;
  PruneReport report;
};

RunResult run(Method method, const ModelGraph& graph, const ParameterStore& params,
              const DomainPair& data, const PruneConfig& cfg);

}  // namespace tcprune
