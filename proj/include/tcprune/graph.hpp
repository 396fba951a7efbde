#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "tcprune/errors.hpp"

namespace tcprune {

inline constexpr const char* kInputId = "@input";

enum class LayerKind { Conv, Bn, Relu, MaxPool, AvgPool, Flatten, Fc, ResidualAdd };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

// One node of the layer DAG. `inputs` lists producer layer ids (kInputId for
// the network input); ResidualAdd takes two inputs, everything else one.
struct LayerSpec {
  std::string id;
  LayerKind kind{LayerKind::Relu};
  int in_channels{0};
  int out_channels{0};
  int kernel{0};   // conv/pool window; 0 on AvgPool means global
  int stride{1};
  int padding{0};
  bool prunable{false};
  bool is_representation{false};
  std::vector<std::string> inputs;
};

// Output activation shape of a layer: spatial [C,H,W] or flat [D].
struct ActShape {
  bool spatial{true};
  std::int64_t c{0}, h{0}, w{0};
  std::int64_t d{0};  // flat width when !spatial
  std::int64_t channels() const { return spatial ? c : d; }
  std::int64_t elems() const { return spatial ? c * h * w : d; }
  bool operator==(const ActShape& o) const {
    return spatial == o.spatial && c == o.c && h == o.h && w == o.w && d == o.d;
  }
};

// Ordered layer DAG. Layers are topologically sorted by construction: each
// layer's inputs appear earlier in the list (or are the network input).
struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::vector<std::int64_t> input_shape;  // {C,H,W}
  int class_count{0};

  int index_of(const std::string& id) const;
  const LayerSpec& at(const std::string& id) const;
  LayerSpec& at(const std::string& id);
  bool contains(const std::string& id) const { return index_of(id) >= 0; }

  // Indices of layers that consume `id` as an input.
  std::vector<int> consumers_of(const std::string& id) const;

  const LayerSpec& output_layer() const;
  const LayerSpec* representation_layer() const;  // nullptr when absent
  std::vector<std::string> prunable_layer_ids() const;
};

// Identifies one output channel of a producer layer.
struct ChannelId {
  std::string layer;
  int channel{0};
  auto operator<=>(const ChannelId& o) const {
    return std::tie(layer, channel) <=> std::tie(o.layer, o.channel);
  }
  bool operator==(const ChannelId& o) const = default;
};

// Per-layer output shapes, walking the graph from input_shape.
// Throws structural_error naming the offending layer on any mismatch.
std::map<std::string, ActShape> infer_shapes(const ModelGraph& graph);

// Last layer of the producer's conv/fc block: follows the (sole-consumer)
// chain through Bn and Relu. Masking a channel means zeroing this layer's
// output channel, which is exactly what physical removal reproduces.
std::string mask_point(const ModelGraph& graph, const std::string& producer_id);

// Structured-text graph description file.
void save_graph(const ModelGraph& graph, const std::string& path);
ModelGraph load_graph(const std::string& path);

}  // namespace tcprune
