#include "tcprune/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tcprune/ops.hpp"

namespace tcprune {

template <class T>
const TensorT<T>& ActivationTraceT<T>::at(const std::string& id) const {
  auto it = outputs.find(id);
  if (it == outputs.end()) throw structural_error("trace has no output for layer '" + id + "'");
  return it->second;
}

template <class T>
const TensorT<T>& GradientSetT<T>::param(const std::string& name) const {
  auto it = param_grads.find(name);
  if (it == param_grads.end()) throw structural_error("no gradient for parameter '" + name + "'");
  return it->second;
}

template <class T>
const TensorT<T>& GradientSetT<T>::activation(const std::string& id) const {
  auto it = activation_grads.find(id);
  if (it == activation_grads.end())
    throw structural_error("no activation gradient for layer '" + id + "'");
  return it->second;
}

namespace {

// Masked producers -> {mask point layer -> channels to zero there}.
std::map<std::string, std::set<int>> resolve_mask_points(const ModelGraph& graph,
                                                         const ChannelMask* mask) {
  std::map<std::string, std::set<int>> at;
  if (!mask) return at;
  for (const auto& [producer, chans] : *mask) {
    if (chans.empty()) continue;
    auto& dst = at[mask_point(graph, producer)];
    dst.insert(chans.begin(), chans.end());
  }
  return at;
}

template <class T>
void zero_channels(TensorT<T>& t, const std::set<int>& chans) {
  if (t.rank() == 4) {
    const std::int64_t N = t.dim(0), C = t.dim(1), HW = t.dim(2) * t.dim(3);
    for (std::int64_t n = 0; n < N; ++n)
      for (int c : chans) {
        if (c < 0 || c >= C) throw structural_error("mask channel out of range");
        std::fill_n(t.data() + (n * C + c) * HW, HW, T(0));
      }
  } else if (t.rank() == 2) {
    const std::int64_t N = t.dim(0), D = t.dim(1);
    for (std::int64_t n = 0; n < N; ++n)
      for (int c : chans) {
        if (c < 0 || c >= D) throw structural_error("mask channel out of range");
        t.at2(n, c) = T(0);
      }
  } else {
    throw structural_error("mask applied to tensor of rank " + std::to_string(t.rank()));
  }
}

}  // namespace

template <class T>
TensorT<T> forward_pass(const ModelGraph& graph, const ParameterStoreT<T>& params,
                        const TensorT<T>& input, const ForwardOptions& opts,
                        ActivationTraceT<T>* trace, ParameterStoreT<T>* mutable_params) {
  if (graph.layers.empty()) throw structural_error("cannot run an empty graph");
  if (input.rank() != 4)
    throw structural_error("network input must be [N,C,H,W], got " + shape_str(input.shape));
  if (input.dim(1) != graph.input_shape[0] || input.dim(2) != graph.input_shape[1] ||
      input.dim(3) != graph.input_shape[2])
    throw structural_error("input " + shape_str(input.shape) + " does not match graph input " +
                           shape_str(graph.input_shape));
  if (!input.all_finite()) throw numeric_error("network input contains non-finite values");
  if (opts.update_running && !mutable_params)
    throw structural_error("running-stat update requested without a mutable parameter store");

  const auto mask_at = resolve_mask_points(graph, opts.mask);
  const bool train_bn = opts.bn_mode == BnMode::Train;

  std::map<std::string, TensorT<T>> outs;
  std::map<std::string, TensorT<T>> bn_stats;

  auto get = [&](const std::string& id) -> const TensorT<T>& {
    if (id == kInputId) return input;
    auto it = outs.find(id);
    if (it == outs.end()) throw structural_error("layer input '" + id + "' not yet computed");
    return it->second;
  };

  for (const auto& l : graph.layers) {
    TensorT<T> y;
    switch (l.kind) {
      case LayerKind::Conv: {
        y = conv2d_forward(get(l.inputs[0]), params.at(l.id + ".weight"),
                           params.at(l.id + ".bias"), l.stride, l.padding);
        break;
      }
      case LayerKind::Bn: {
        const std::string rm_name = l.id + ".running_mean";
        const std::string rv_name = l.id + ".running_var";
        BnForwardResult<T> r;
        if (opts.update_running) {
          r = bn_forward(get(l.inputs[0]), params.at(l.id + ".gamma"), params.at(l.id + ".beta"),
                         mutable_params->at(rm_name), mutable_params->at(rv_name), train_bn, true);
        } else {
          TensorT<T> rm = params.at(rm_name);
          TensorT<T> rv = params.at(rv_name);
          r = bn_forward(get(l.inputs[0]), params.at(l.id + ".gamma"), params.at(l.id + ".beta"),
                         rm, rv, train_bn, false);
        }
        y = std::move(r.y);
        if (trace && train_bn) {
          const std::int64_t C = r.batch_mean.numel();
          TensorT<T> stats({2, C});
          std::copy(r.batch_mean.values.begin(), r.batch_mean.values.end(), stats.values.begin());
          std::copy(r.batch_var.values.begin(), r.batch_var.values.end(),
                    stats.values.begin() + C);
          bn_stats[l.id] = std::move(stats);
        }
        break;
      }
      case LayerKind::Relu:
        y = relu_forward(get(l.inputs[0]));
        break;
      case LayerKind::MaxPool:
        y = maxpool_forward(get(l.inputs[0]), l.kernel, l.stride);
        break;
      case LayerKind::AvgPool:
        y = avgpool_forward(get(l.inputs[0]), l.kernel, l.stride);
        break;
      case LayerKind::Flatten:
        y = flatten_forward(get(l.inputs[0]));
        break;
      case LayerKind::Fc:
        y = fc_forward(get(l.inputs[0]), params.at(l.id + ".weight"), params.at(l.id + ".bias"));
        break;
      case LayerKind::ResidualAdd:
        y = add_forward(get(l.inputs[0]), get(l.inputs[1]));
        break;
    }
    if (auto it = mask_at.find(l.id); it != mask_at.end()) zero_channels(y, it->second);
    outs[l.id] = std::move(y);
  }

  TensorT<T> logits = outs.at(graph.output_layer().id);
  if (trace) {
    trace->input = input;
    trace->outputs = std::move(outs);
    trace->bn_batch_stats = std::move(bn_stats);
    trace->options = opts;
  }
  return logits;
}

template <class T>
TensorT<T> forward_eval(const ModelGraph& graph, const ParameterStoreT<T>& params,
                        const TensorT<T>& input, const ChannelMask* mask) {
  ForwardOptions opts;
  opts.bn_mode = BnMode::Eval;
  opts.mask = mask;
  return forward_pass<T>(graph, params, input, opts, nullptr, nullptr);
}

template <class T>
GradientSetT<T> backward_pass(const ModelGraph& graph, const ParameterStoreT<T>& params,
                              const ActivationTraceT<T>& trace,
                              const std::map<std::string, TensorT<T>>& seeds) {
  if (trace.outputs.empty()) throw structural_error("backward needs a recorded forward trace");
  if (seeds.empty()) throw structural_error("backward needs at least one gradient seed");

  const auto mask_at = resolve_mask_points(graph, trace.options.mask);
  const bool train_bn = trace.options.bn_mode == BnMode::Train;

  // Accumulated dL/d(output) per layer id, filled by seeds and consumers.
  std::map<std::string, TensorT<T>> acc;
  for (const auto& [id, seed] : seeds) {
    const TensorT<T>& out = trace.at(id);
    if (seed.shape != out.shape)
      throw structural_error("gradient seed for '" + id + "' has shape " + shape_str(seed.shape) +
                             ", layer output is " + shape_str(out.shape));
    acc[id] = seed;
  }

  GradientSetT<T> grads;
  grads.input_grad = TensorT<T>::zeros(trace.input.shape);

  auto input_of = [&](const LayerSpec& l, std::size_t i) -> const TensorT<T>& {
    const std::string& id = l.inputs[i];
    return id == kInputId ? trace.input : trace.at(id);
  };

  auto add_into = [&](const std::string& id, TensorT<T>&& dx) {
    if (id == kInputId) {
      for (std::size_t i = 0; i < dx.values.size(); ++i)
        grads.input_grad.values[i] += dx.values[i];
      return;
    }
    auto it = acc.find(id);
    if (it == acc.end()) {
      acc[id] = std::move(dx);
    } else {
      auto& dst = it->second.values;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += dx.values[i];
    }
  };

  for (auto li = graph.layers.rbegin(); li != graph.layers.rend(); ++li) {
    const LayerSpec& l = *li;
    auto it = acc.find(l.id);
    if (it == acc.end()) continue;  // nothing flowed back into this branch
    TensorT<T> dy = std::move(it->second);

    // The recorded output was zeroed on masked channels, so the gradient
    // w.r.t. the raw layer output is zero there too.
    if (auto mi = mask_at.find(l.id); mi != mask_at.end()) {
      TensorT<T> masked = dy;
      zero_channels(masked, mi->second);
      grads.activation_grads[l.id] = std::move(dy);
      dy = std::move(masked);
    } else {
      grads.activation_grads[l.id] = dy;
    }

    switch (l.kind) {
      case LayerKind::Conv: {
        auto g = conv2d_backward(input_of(l, 0), params.at(l.id + ".weight"), dy, l.stride,
                                 l.padding);
        grads.param_grads[l.id + ".weight"] = std::move(g.dw);
        grads.param_grads[l.id + ".bias"] = std::move(g.db);
        add_into(l.inputs[0], std::move(g.dx));
        break;
      }
      case LayerKind::Bn: {
        TensorT<T> bm, bv;
        if (train_bn) {
          auto si = trace.bn_batch_stats.find(l.id);
          if (si == trace.bn_batch_stats.end())
            throw structural_error("trace lacks batch stats for bn '" + l.id + "'");
          const std::int64_t C = si->second.dim(1);
          bm = TensorT<T>({C});
          bv = TensorT<T>({C});
          std::copy_n(si->second.values.begin(), C, bm.values.begin());
          std::copy_n(si->second.values.begin() + C, C, bv.values.begin());
        }
        auto g = bn_backward(input_of(l, 0), params.at(l.id + ".gamma"), bm, bv,
                             params.at(l.id + ".running_mean"), params.at(l.id + ".running_var"),
                             dy, train_bn);
        grads.param_grads[l.id + ".gamma"] = std::move(g.dgamma);
        grads.param_grads[l.id + ".beta"] = std::move(g.dbeta);
        add_into(l.inputs[0], std::move(g.dx));
        break;
      }
      case LayerKind::Relu:
        add_into(l.inputs[0], relu_backward(input_of(l, 0), dy));
        break;
      case LayerKind::MaxPool:
        add_into(l.inputs[0], maxpool_backward(input_of(l, 0), dy, l.kernel, l.stride));
        break;
      case LayerKind::AvgPool:
        add_into(l.inputs[0], avgpool_backward(input_of(l, 0), dy, l.kernel, l.stride));
        break;
      case LayerKind::Flatten:
        add_into(l.inputs[0], flatten_backward(input_of(l, 0), dy));
        break;
      case LayerKind::Fc: {
        auto g = fc_backward(input_of(l, 0), params.at(l.id + ".weight"), dy);
        grads.param_grads[l.id + ".weight"] = std::move(g.dw);
        grads.param_grads[l.id + ".bias"] = std::move(g.db);
        add_into(l.inputs[0], std::move(g.dx));
        break;
      }
      case LayerKind::ResidualAdd: {
        TensorT<T> copy = dy;
        add_into(l.inputs[0], std::move(copy));
        add_into(l.inputs[1], std::move(dy));
        break;
      }
    }
  }
  return grads;
}

template <class T>
void SgdOptimizerT<T>::step(ParameterStoreT<T>& params, const GradientSetT<T>& grads) {
  for (auto& [name, e] : params.entries) {
    if (!e.trainable) continue;
    auto gi = grads.param_grads.find(name);
    if (gi == grads.param_grads.end()) continue;
    const TensorT<T>& g = gi->second;
    if (g.shape != e.value.shape)
      throw structural_error("gradient shape mismatch for '" + name + "'");
    auto vi = velocity_.find(name);
    if (vi == velocity_.end())
      vi = velocity_.emplace(name, TensorT<T>::zeros(e.value.shape)).first;
    auto& v = vi->second.values;
    auto& w = e.value.values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g.values[i];
      w[i] -= lr_ * v[i];
    }
  }
}

template <class T>
void accumulate_seed(std::map<std::string, TensorT<T>>& seeds, const std::string& id,
                     TensorT<T>&& grad) {
  auto [it, fresh] = seeds.try_emplace(id, std::move(grad));
  if (fresh) return;
  // try_emplace leaves `grad` untouched when the key already exists.
  if (it->second.shape != grad.shape)
    throw structural_error("conflicting seed shapes for '" + id + "': " +
                           shape_str(it->second.shape) + " vs " + shape_str(grad.shape));
  for (std::size_t i = 0; i < grad.values.size(); ++i)
    it->second.values[i] += grad.values[i];
}

template <class T>
FiniteDiffReport<T> finite_diff_check(ParameterStoreT<T>& params, const std::function<T()>& loss,
                                      const std::map<std::string, TensorT<T>>& analytic,
                                      T eps, int samples_per_param, std::uint64_t seed) {
  FiniteDiffReport<T> report;
  if (eps < T(1000) * std::numeric_limits<T>::epsilon()) report.eps_warning = true;

  for (const auto& [name, an] : analytic) {
    auto& value = params.at(name);
    if (an.shape != value.shape)
      throw structural_error("analytic gradient shape mismatch for '" + name + "'");
    const std::int64_t n = value.numel();
    std::mt19937_64 rng(mix_seed(seed, "fd/" + name));
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    const int samples = static_cast<int>(std::min<std::int64_t>(samples_per_param, n));
    for (int s = 0; s < samples; ++s) {
      const std::int64_t idx = samples_per_param >= n ? s : pick(rng);
      const T saved = value.values[std::size_t(idx)];
      value.values[std::size_t(idx)] = saved + eps;
      const T up = loss();
      value.values[std::size_t(idx)] = saved - eps;
      const T down = loss();
      value.values[std::size_t(idx)] = saved;
      const T fd = (up - down) / (T(2) * eps);
      const T anv = an.values[std::size_t(idx)];
      const T denom = std::max<T>(std::abs(fd) + std::abs(anv), T(1e-8));
      const T rel = std::abs(fd - anv) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = idx;
        report.worst_fd = fd;
        report.worst_analytic = anv;
      }
    }
  }
  return report;
}

#define TCPRUNE_INSTANTIATE_AUTOGRAD(T)                                                         \
  template struct ActivationTraceT<T>;                                                          \
  template struct GradientSetT<T>;                                                              \
  template TensorT<T> forward_pass<T>(const ModelGraph&, const ParameterStoreT<T>&,             \
                                      const TensorT<T>&, const ForwardOptions&,                 \
                                      ActivationTraceT<T>*, ParameterStoreT<T>*);               \
  template TensorT<T> forward_eval<T>(const ModelGraph&, const ParameterStoreT<T>&,             \
                                      const TensorT<T>&, const ChannelMask*);                   \
  template GradientSetT<T> backward_pass<T>(const ModelGraph&, const ParameterStoreT<T>&,       \
                                            const ActivationTraceT<T>&,                         \
                                            const std::map<std::string, TensorT<T>>&);          \
  template void accumulate_seed<T>(std::map<std::string, TensorT<T>>&, const std::string&,      \
                                   TensorT<T>&&);                                               \
  template class SgdOptimizerT<T>;                                                              \
  template FiniteDiffReport<T> finite_diff_check<T>(ParameterStoreT<T>&,                        \
                                                    const std::function<T()>&,                  \
                                                    const std::map<std::string, TensorT<T>>&,   \
                                                    T, int, std::uint64_t);

TCPRUNE_INSTANTIATE_AUTOGRAD(float)
TCPRUNE_INSTANTIATE_AUTOGRAD(double)

#undef TCPRUNE_INSTANTIATE_AUTOGRAD

}  // namespace tcprune
