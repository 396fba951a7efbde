#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tcprune/autograd.hpp"
#include "tcprune/graph.hpp"
#include "tcprune/uda_loss.hpp"

namespace tcprune {

// Importance scores for prunable channels, accumulated over scoring batches.
// `sum` holds per-channel batch-score sums; the mean over batches is the raw
// score, and ranking normalizes means per layer to unit L2 norm.
struct ScoreTable {
  std::map<ChannelId, double> sum;
  std::int64_t batches{0};
  int iteration{0};

  void add_batch(const std::map<ChannelId, double>& batch_scores);
  std::map<ChannelId, double> mean() const;
  std::map<ChannelId, double> normalized() const;  // per-layer L2 of the means
};

// Spatial-and-batch mean of one channel of an activation [N,C,H,W] (or of one
// unit of a flat [N,D] activation).
template <class T>
double channel_activation_mean(const TensorT<T>& act, int channel);

double taylor_score(double activation_mean, double grad_mean);

// Per-channel (mean grad) * (mean activation) products, both factors reduced
// over batch and spatial positions before multiplying.
template <class T>
std::vector<double> grad_dot_activation(const TensorT<T>& act, const TensorT<T>& grad);

// One scoring batch of the transfer criterion: the classification term comes
// from a source-batch backward pass, the alignment term from a target-batch
// backward pass seeded at the representation layer, combined per channel as
//   |cls_term + beta * mmd_term|
// at the channel's mask point. Masked channels score 0.
template <class T>
std::map<ChannelId, double> transfer_scores_for_batch(
    const ModelGraph& graph, const ParameterStoreT<T>& params, const TensorT<T>& source_x,
    const std::vector<std::int32_t>& source_y, const TensorT<T>& target_x, double beta,
    const MmdConfig& mmd_cfg, const ChannelMask* mask = nullptr);

// Channels to remove this iteration: the k lowest normalized scores among
// channels still alive, never shrinking a layer below `floor_per_layer` live
// channels. Ties break on (layer id, channel index). `truncated` reports
// whether the floor forced fewer than k picks.
struct RankResult {
  std::vector<ChannelId> removed;
  bool truncated{false};
};

RankResult rank_channels(const ScoreTable& scores, const ModelGraph& graph,
                         const ChannelMask& already_masked, int k, int floor_per_layer);

// Diagnostic dump: `iteration,layer,channel,raw_score,normalized_score,pruned`.
void write_score_csv(const ScoreTable& scores, const std::vector<ChannelId>& pruned,
                     const std::string& path);

}  // namespace tcprune
