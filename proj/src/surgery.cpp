#include "tcprune/surgery.hpp"

#include <algorithm>

namespace tcprune {

namespace {

std::vector<int> keep_list(int channels, const std::set<int>& removed) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(channels) - removed.size());
  for (int c = 0; c < channels; ++c)
    if (!removed.count(c)) keep.push_back(c);
  return keep;
}

void add_edit(SurgeryPlan& plan, const std::string& param, int axis, std::vector<int> keep) {
  plan.param_edits[param].push_back(ParamSlice{axis, std::move(keep)});
}

}  // namespace

SurgeryPlan plan_surgery(const ModelGraph& graph, const ChannelMask& masked) {
  const auto shapes = infer_shapes(graph);
  SurgeryPlan plan;
  plan.new_graph = graph;

  for (const auto& [producer_id, removed] : masked) {
    if (removed.empty()) continue;
    const LayerSpec& producer = graph.at(producer_id);
    if (!producer.prunable)
      throw structural_error("layer '" + producer_id + "' is not prunable");
    for (int c : removed)
      if (c < 0 || c >= producer.out_channels)
        throw structural_error("channel " + std::to_string(c) + " out of range for '" +
                               producer_id + "'");
    const std::vector<int> keep = keep_list(producer.out_channels, removed);
    if (keep.empty())
      throw structural_error("surgery would remove every channel of '" + producer_id + "'");
    const int new_width = static_cast<int>(keep.size());

    // Producer loses output filters.
    plan.new_graph.at(producer_id).out_channels = new_width;
    add_edit(plan, producer_id + ".weight", 0, keep);
    add_edit(plan, producer_id + ".bias", 0, keep);

    // Walk forward through channel-preserving layers, shrinking metadata and
    // slicing consumer inputs. Keep lists expand to h*w blocks at a flatten.
    struct Visit {
      std::string from;        // producer whose consumers we scan
      std::vector<int> keep;   // surviving indices in `from`'s output
      bool flat;               // keep refers to flat columns, not channels
    };
    std::vector<Visit> work{{producer_id, keep, false}};
    while (!work.empty()) {
      Visit v = std::move(work.back());
      work.pop_back();
      for (int ci : graph.consumers_of(v.from)) {
        const LayerSpec& consumer = graph.layers[static_cast<std::size_t>(ci)];
        LayerSpec& patched = plan.new_graph.at(consumer.id);
        switch (consumer.kind) {
          case LayerKind::Bn:
            if (v.flat)
              throw structural_error("bn '" + consumer.id + "' behind a flatten boundary");
            patched.in_channels = patched.out_channels = new_width;
            add_edit(plan, consumer.id + ".gamma", 0, v.keep);
            add_edit(plan, consumer.id + ".beta", 0, v.keep);
            add_edit(plan, consumer.id + ".running_mean", 0, v.keep);
            add_edit(plan, consumer.id + ".running_var", 0, v.keep);
            work.push_back({consumer.id, v.keep, false});
            break;
          case LayerKind::Relu:
            // Relu behind an fc keeps flat unit indices; behind a conv it
            // keeps channel indices. Either way the keep list passes through.
            patched.in_channels = patched.out_channels = static_cast<int>(v.keep.size());
            work.push_back({consumer.id, v.keep, v.flat});
            break;
          case LayerKind::MaxPool:
          case LayerKind::AvgPool:
            if (v.flat)
              throw structural_error("pool '" + consumer.id + "' behind a flatten boundary");
            patched.in_channels = patched.out_channels = new_width;
            work.push_back({consumer.id, v.keep, false});
            break;
          case LayerKind::Flatten: {
            if (v.flat)
              throw structural_error("flatten '" + consumer.id + "' behind a flatten boundary");
            patched.in_channels = patched.out_channels = new_width;
            const ActShape& in_shape = shapes.at(v.from);
            const int hw = static_cast<int>(in_shape.h * in_shape.w);
            std::vector<int> cols;
            cols.reserve(v.keep.size() * static_cast<std::size_t>(hw));
            for (int c : v.keep)
              for (int i = 0; i < hw; ++i) cols.push_back(c * hw + i);
            work.push_back({consumer.id, std::move(cols), true});
            break;
          }
          case LayerKind::Conv:
            if (v.flat)
              throw structural_error("conv '" + consumer.id + "' behind a flatten boundary");
            patched.in_channels = new_width;
            add_edit(plan, consumer.id + ".weight", 1, v.keep);
            break;
          case LayerKind::Fc:
            patched.in_channels = static_cast<int>(v.keep.size());
            add_edit(plan, consumer.id + ".weight", 1, v.keep);
            break;
          case LayerKind::ResidualAdd:
            throw structural_error("channel of '" + producer_id +
                                   "' feeds residual add '" + consumer.id +
                                   "' and cannot be pruned");
        }
      }
    }
  }

  infer_shapes(plan.new_graph);  // the plan must leave a coherent graph behind
  return plan;
}

namespace {

template <class T>
TensorT<T> slice_axis(const TensorT<T>& t, int axis, const std::vector<int>& keep) {
  if (axis < 0 || axis >= t.rank())
    throw structural_error("slice axis " + std::to_string(axis) + " out of range for " +
                           shape_str(t.shape));
  const std::int64_t dim = t.dim(axis);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= dim)
      throw structural_error("slice keep index out of range");
    if (i && keep[i] <= keep[i - 1]) throw structural_error("slice keep list must be ascending");
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= t.dim(i);
  for (int i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);

  std::vector<std::int64_t> new_shape = t.shape;
  new_shape[static_cast<std::size_t>(axis)] = static_cast<std::int64_t>(keep.size());
  TensorT<T> out(new_shape);
  const T* src = t.data();
  T* dst = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const T* s = src + (o * dim + keep[k]) * inner;
      std::copy(s, s + inner, dst);
      dst += inner;
    }
  return out;
}

}  // namespace

template <class T>
ParameterStoreT<T> apply_surgery(const SurgeryPlan& plan, const ParameterStoreT<T>& params) {
  ParameterStoreT<T> out;
  for (const auto& [name, entry] : params.entries) {
    TensorT<T> value = entry.value;
    if (auto it = plan.param_edits.find(name); it != plan.param_edits.end())
      for (const ParamSlice& s : it->second) value = slice_axis(value, s.axis, s.keep);
    out.put(name, std::move(value), entry.trainable);
  }
  for (const auto& [name, edits] : plan.param_edits)
    if (!params.contains(name))
      throw structural_error("surgery plan edits unknown parameter '" + name + "'");
  auto violations = validate_structure(plan.new_graph, out);
  if (!violations.empty())
    throw structural_error("surgery left an inconsistent model: " + violations.front());
  return out;
}

template <class T>
std::map<std::string, TensorT<T>> apply_surgery_aux(
    const SurgeryPlan& plan, const std::map<std::string, TensorT<T>>& aux) {
  std::map<std::string, TensorT<T>> out;
  for (const auto& [name, value] : aux) {
    TensorT<T> v = value;
    if (auto it = plan.param_edits.find(name); it != plan.param_edits.end())
      for (const ParamSlice& s : it->second) v = slice_axis(v, s.axis, s.keep);
    out.emplace(name, std::move(v));
  }
  return out;
}

template <class T>
std::vector<std::string> validate_structure(const ModelGraph& graph,
                                            const ParameterStoreT<T>& params) {
  std::vector<std::string> bad;
  try {
    infer_shapes(graph);
  } catch (const std::exception& e) {
    bad.emplace_back(e.what());
    return bad;  // wiring is broken; shape checks below would cascade
  }

  int repr = 0;
  for (const auto& l : graph.layers) repr += l.is_representation ? 1 : 0;
  if (repr != 1)
    bad.push_back("graph has " + std::to_string(repr) + " representation layers, expected 1");

  auto expect = [&](const std::string& name, const std::vector<std::int64_t>& shape,
                    bool trainable) {
    if (!params.contains(name)) {
      bad.push_back("missing parameter '" + name + "'");
      return;
    }
    const auto& e = params.entry(name);
    if (e.value.shape != shape)
      bad.push_back("parameter '" + name + "' has shape " + shape_str(e.value.shape) +
                    ", expected " + shape_str(shape));
    if (e.trainable != trainable)
      bad.push_back("parameter '" + name + "' trainable flag is wrong");
  };

  std::set<std::string> expected;
  for (const auto& l : graph.layers) {
    auto note = [&](const std::string& suffix) { expected.insert(l.id + suffix); };
    if (l.kind == LayerKind::Conv) {
      expect(l.id + ".weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}, true);
      expect(l.id + ".bias", {l.out_channels}, true);
      note(".weight");
      note(".bias");
    } else if (l.kind == LayerKind::Fc) {
      expect(l.id + ".weight", {l.out_channels, l.in_channels}, true);
      expect(l.id + ".bias", {l.out_channels}, true);
      note(".weight");
      note(".bias");
    } else if (l.kind == LayerKind::Bn) {
      expect(l.id + ".gamma", {l.out_channels}, true);
      expect(l.id + ".beta", {l.out_channels}, true);
      expect(l.id + ".running_mean", {l.out_channels}, false);
      expect(l.id + ".running_var", {l.out_channels}, false);
      note(".gamma");
      note(".beta");
      note(".running_mean");
      note(".running_var");
    }
  }
  for (const auto& [name, e] : params.entries)
    if (!expected.count(name)) bad.push_back("parameter '" + name + "' matches no layer");
  return bad;
}

template ParameterStoreT<float> apply_surgery<float>(const SurgeryPlan&,
                                                     const ParameterStoreT<float>&);
template ParameterStoreT<double> apply_surgery<double>(const SurgeryPlan&,
                                                       const ParameterStoreT<double>&);
template std::map<std::string, TensorT<float>> apply_surgery_aux<float>(
    const SurgeryPlan&, const std::map<std::string, TensorT<float>>&);
template std::map<std::string, TensorT<double>> apply_surgery_aux<double>(
    const SurgeryPlan&, const std::map<std::string, TensorT<double>>&);
template std::vector<std::string> validate_structure<float>(const ModelGraph&,
                                                            const ParameterStoreT<float>&);
template std::vector<std::string> validate_structure<double>(const ModelGraph&,
                                                             const ParameterStoreT<double>&);

}  // namespace tcprune
