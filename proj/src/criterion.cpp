#include "tcprune/criterion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace tcprune {

void ScoreTable::add_batch(const std::map<ChannelId, double>& batch_scores) {
  if (sum.empty()) {
    sum = batch_scores;
  } else {
    if (batch_scores.size() != sum.size())
      throw structural_error("score table channel sets differ between batches");
    for (auto& [id, v] : sum) {
      auto it = batch_scores.find(id);
      if (it == batch_scores.end())
        throw structural_error("score batch lacks channel " + id.layer + ":" +
                               std::to_string(id.channel));
      v += it->second;
    }
  }
  ++batches;
}

std::map<ChannelId, double> ScoreTable::mean() const {
  std::map<ChannelId, double> out = sum;
  if (batches > 0)
    for (auto& [id, v] : out) v /= static_cast<double>(batches);
  return out;
}

std::map<ChannelId, double> ScoreTable::normalized() const {
  std::map<ChannelId, double> m = mean();
  std::map<std::string, double> norm_sq;
  for (const auto& [id, v] : m) norm_sq[id.layer] += v * v;
  for (auto& [id, v] : m) {
    const double n = std::sqrt(norm_sq[id.layer]);
    if (n > 0) v /= n;  // all-zero layers keep their zeros
  }
  return m;
}

template <class T>
double channel_activation_mean(const TensorT<T>& act, int channel) {
  if (act.rank() == 4) {
    const std::int64_t N = act.dim(0), C = act.dim(1), HW = act.dim(2) * act.dim(3);
    if (channel < 0 || channel >= C) throw structural_error("channel index out of range");
    double total = 0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* slab = act.data() + (n * C + channel) * HW;
      double s = 0;
      for (std::int64_t i = 0; i < HW; ++i) s += double(slab[i]);
      total += s / double(HW);
    }
    return total / double(N);
  }
  if (act.rank() == 2) {
    const std::int64_t N = act.dim(0), D = act.dim(1);
    if (channel < 0 || channel >= D) throw structural_error("channel index out of range");
    double total = 0;
    for (std::int64_t n = 0; n < N; ++n) total += double(act.at2(n, channel));
    return total / double(N);
  }
  throw structural_error("activation must be [N,C,H,W] or [N,D]");
}

double taylor_score(double activation_mean, double grad_mean) {
  return std::abs(activation_mean * grad_mean);
}

template <class T>
std::vector<double> grad_dot_activation(const TensorT<T>& act, const TensorT<T>& grad) {
  if (act.shape != grad.shape)
    throw structural_error("activation and gradient shapes differ: " + shape_str(act.shape) +
                           " vs " + shape_str(grad.shape));
  const std::int64_t C = act.dim(1);  // channel axis for both [N,C,H,W] and [N,D]
  std::vector<double> out(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c)
    out[static_cast<std::size_t>(c)] =
        channel_activation_mean(grad, static_cast<int>(c)) *
        channel_activation_mean(act, static_cast<int>(c));
  return out;
}

template <class T>
std::map<ChannelId, double> transfer_scores_for_batch(
    const ModelGraph& graph, const ParameterStoreT<T>& params, const TensorT<T>& source_x,
    const std::vector<std::int32_t>& source_y, const TensorT<T>& target_x, double beta,
    const MmdConfig& mmd_cfg, const ChannelMask* mask) {
  const auto prunable = graph.prunable_layer_ids();
  if (prunable.empty()) throw config_error("graph has no prunable channels to score");
  const LayerSpec* repr = graph.representation_layer();
  if (!repr) throw structural_error("graph has no representation layer");

  ForwardOptions opts;
  opts.record = true;
  opts.bn_mode = BnMode::Eval;  // scoring reads the deployed model, not batch stats
  opts.mask = mask;

  // Classification term: cross-entropy over the source batch.
  ActivationTraceT<T> source_trace;
  TensorT<T> source_logits = forward_pass(graph, params, source_x, opts, &source_trace);
  auto ce = cross_entropy(source_logits, source_y, true);
  GradientSetT<T> cls_grads =
      backward_pass(graph, params, source_trace,
                    {{graph.output_layer().id, std::move(ce.grad_logits)}});

  // Alignment term: MMD between domain representations, differentiated w.r.t.
  // the target side only and injected at the representation layer.
  ActivationTraceT<T> target_trace;
  forward_pass(graph, params, target_x, opts, &target_trace);
  const TensorT<T>& src_repr = source_trace.at(repr->id);
  const TensorT<T>& tgt_repr = target_trace.at(repr->id);
  auto mmd = mmd_loss(src_repr, tgt_repr, mmd_cfg, true);
  GradientSetT<T> mmd_grads =
      backward_pass(graph, params, target_trace, {{repr->id, std::move(mmd.grad_target)}});

  std::map<ChannelId, double> scores;
  for (const auto& lid : prunable) {
    const std::string mp = mask_point(graph, lid);
    const TensorT<T>& src_act = source_trace.at(mp);
    const TensorT<T>& tgt_act = target_trace.at(mp);

    const std::vector<double> cls_term = grad_dot_activation(src_act, cls_grads.activation(mp));
    std::vector<double> mmd_term(cls_term.size(), 0.0);
    if (mmd_grads.activation_grads.count(mp))
      mmd_term = grad_dot_activation(tgt_act, mmd_grads.activation(mp));

    const int channels = graph.at(lid).out_channels;
    for (int c = 0; c < channels; ++c) {
      scores[ChannelId{lid, c}] =
          std::abs(cls_term[static_cast<std::size_t>(c)] +
                   beta * mmd_term[static_cast<std::size_t>(c)]);
    }
  }
  return scores;
}

RankResult rank_channels(const ScoreTable& scores, const ModelGraph& graph,
                         const ChannelMask& already_masked, int k, int floor_per_layer) {
  if (k < 1) throw config_error("rank_channels needs k >= 1");
  if (floor_per_layer < 0) throw config_error("channel floor cannot be negative");

  const auto norm = scores.normalized();

  // Live channels per layer under the existing mask, from the graph widths
  // rather than the score table so a sparse table cannot undercount them.
  std::map<std::string, int> live;
  for (const auto& lid : graph.prunable_layer_ids()) live[lid] = graph.at(lid).out_channels;
  for (const auto& [layer, chans] : already_masked) {
    auto it = live.find(layer);
    if (it != live.end()) it->second -= static_cast<int>(chans.size());
  }

  auto is_masked = [&](const ChannelId& id) {
    auto it = already_masked.find(id.layer);
    return it != already_masked.end() && it->second.count(id.channel) != 0;
  };

  // Ascending by score; ties fall back to (layer, channel) order, which is
  // exactly the ChannelId ordering.
  std::vector<std::pair<double, ChannelId>> order;
  order.reserve(norm.size());
  for (const auto& [id, v] : norm)
    if (!is_masked(id)) order.emplace_back(v, id);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });

  RankResult result;
  for (const auto& [score, id] : order) {
    if (static_cast<int>(result.removed.size()) == k) break;
    auto& remaining = live[id.layer];
    if (remaining - 1 < floor_per_layer) continue;  // would empty the layer below floor
    remaining -= 1;
    result.removed.push_back(id);
  }
  result.truncated = static_cast<int>(result.removed.size()) < k;
  return result;
}

void write_score_csv(const ScoreTable& scores, const std::vector<ChannelId>& pruned,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  const auto raw = scores.mean();
  const auto norm = scores.normalized();
  std::set<ChannelId> cut(pruned.begin(), pruned.end());
  out << "iteration,layer,channel,raw_score,normalized_score,pruned\n";
  char buf[64];
  for (const auto& [id, r] : raw) {
    out << scores.iteration << "," << id.layer << "," << id.channel << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r);
    out << buf << ",";
    std::snprintf(buf, sizeof buf, "%.17g", norm.at(id));
    out << buf << "," << (cut.count(id) ? 1 : 0) << "\n";
  }
  if (!out) throw io_error("write to '" + path + "' failed");
}

template double channel_activation_mean<float>(const TensorT<float>&, int);
template double channel_activation_mean<double>(const TensorT<double>&, int);
template std::vector<double> grad_dot_activation<float>(const TensorT<float>&,
                                                        const TensorT<float>&);
template std::vector<double> grad_dot_activation<double>(const TensorT<double>&,
                                                         const TensorT<double>&);
template std::map<ChannelId, double> transfer_scores_for_batch<float>(
    const ModelGraph&, const ParameterStoreT<float>&, const TensorT<float>&,
    const std::vector<std::int32_t>&, const TensorT<float>&, double, const MmdConfig&,
    const ChannelMask*);
template std::map<ChannelId, double> transfer_scores_for_batch<double>(
    const ModelGraph&, const ParameterStoreT<double>&, const TensorT<double>&,
    const std::vector<std::int32_t>&, const TensorT<double>&, double, const MmdConfig&,
    const ChannelMask*);

}  // namespace tcprune
