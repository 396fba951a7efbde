#include "tcprune/graph.hpp"

#include <fstream>
#include <sstream>

#include "tcprune/tensor.hpp"

namespace tcprune {

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv, "conv"},       {LayerKind::Bn, "bn"},
    {LayerKind::Relu, "relu"},       {LayerKind::MaxPool, "maxpool"},
    {LayerKind::AvgPool, "avgpool"}, {LayerKind::Flatten, "flatten"},
    {LayerKind::Fc, "fc"},           {LayerKind::ResidualAdd, "residual_add"},
};

}  // namespace

const char* layer_kind_name(LayerKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (const auto& kn : kKindNames)
    if (name == kn.name) return kn.kind;
  throw format_error("unknown layer kind '" + name + "'", 0);
}

int ModelGraph::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].id == id) return static_cast<int>(i);
  return -1;
}

const LayerSpec& ModelGraph::at(const std::string& id) const {
  int i = index_of(id);
  if (i < 0) throw structural_error("no layer '" + id + "' in graph");
  return layers[static_cast<std::size_t>(i)];
}

LayerSpec& ModelGraph::at(const std::string& id) {
  int i = index_of(id);
  if (i < 0) throw structural_error("no layer '" + id + "' in graph");
  return layers[static_cast<std::size_t>(i)];
}

std::vector<int> ModelGraph::consumers_of(const std::string& id) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (const auto& in : layers[i].inputs)
      if (in == id) out.push_back(static_cast<int>(i));
  return out;
}

const LayerSpec& ModelGraph::output_layer() const {
  if (layers.empty()) throw structural_error("empty graph has no output layer");
  return layers.back();
}

const LayerSpec* ModelGraph::representation_layer() const {
  for (const auto& l : layers)
    if (l.is_representation) return &l;
  return nullptr;
}

std::vector<std::string> ModelGraph::prunable_layer_ids() const {
  std::vector<std::string> out;
  for (const auto& l : layers)
    if (l.prunable) out.push_back(l.id);
  return out;
}

std::map<std::string, ActShape> infer_shapes(const ModelGraph& graph) {
  if (graph.input_shape.size() != 3)
    throw structural_error("input shape must be [C,H,W], got " + shape_str(graph.input_shape));
  std::map<std::string, ActShape> shapes;
  ActShape input{true, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2], 0};

  auto shape_of = [&](const std::string& id) -> const ActShape& {
    if (id == kInputId) return input;
    auto it = shapes.find(id);
    if (it == shapes.end())
      throw structural_error("layer input '" + id + "' is undefined or appears later in the graph");
    return it->second;
  };

  for (const auto& l : graph.layers) {
    auto need_inputs = [&](std::size_t n) {
      if (l.inputs.size() != n)
        throw structural_error("layer '" + l.id + "' (" + layer_kind_name(l.kind) + ") needs " +
                               std::to_string(n) + " input(s), has " +
                               std::to_string(l.inputs.size()));
    };
    ActShape out;
    switch (l.kind) {
      case LayerKind::Conv: {
        need_inputs(1);
        const ActShape& in = shape_of(l.inputs[0]);
        if (!in.spatial)
          throw structural_error("conv '" + l.id + "' fed by flat activation");
        if (in.c != l.in_channels)
          throw structural_error("conv '" + l.id + "' expects " + std::to_string(l.in_channels) +
                                 " input channels, gets " + std::to_string(in.c));
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0)
          throw structural_error("conv '" + l.id + "' has invalid kernel/stride/padding");
        std::int64_t h = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
        std::int64_t w = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
        if (h < 1 || w < 1)
          throw structural_error("conv '" + l.id + "' collapses spatial extent to zero");
        out = {true, l.out_channels, h, w, 0};
        break;
      }
      case LayerKind::Bn:
      case LayerKind::Relu: {
        need_inputs(1);
        const ActShape& in = shape_of(l.inputs[0]);
        if (l.kind == LayerKind::Bn && !in.spatial)
          throw structural_error("bn '" + l.id + "' fed by flat activation");
        if (in.channels() != l.in_channels || l.in_channels != l.out_channels)
          throw structural_error("layer '" + l.id + "' channel metadata disagrees with input");
        out = in;
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        need_inputs(1);
        const ActShape& in = shape_of(l.inputs[0]);
        if (!in.spatial)
          throw structural_error("pool '" + l.id + "' fed by flat activation");
        if (in.c != l.in_channels || l.in_channels != l.out_channels)
          throw structural_error("pool '" + l.id + "' channel metadata disagrees with input");
        if (l.kernel == 0) {
          if (l.kind != LayerKind::AvgPool)
            throw structural_error("pool '" + l.id + "': kernel 0 is only valid for avgpool");
          out = {true, in.c, 1, 1, 0};
        } else {
          if (l.stride < 1)
            throw structural_error("pool '" + l.id + "' has invalid stride");
          std::int64_t h = (in.h - l.kernel) / l.stride + 1;
          std::int64_t w = (in.w - l.kernel) / l.stride + 1;
          if (h < 1 || w < 1)
            throw structural_error("pool '" + l.id + "' collapses spatial extent to zero");
          out = {true, in.c, h, w, 0};
        }
        break;
      }
      case LayerKind::Flatten: {
        need_inputs(1);
        const ActShape& in = shape_of(l.inputs[0]);
        if (!in.spatial)
          throw structural_error("flatten '" + l.id + "' fed by already-flat activation");
        out = {false, 0, 0, 0, in.c * in.h * in.w};
        break;
      }
      case LayerKind::Fc: {
        need_inputs(1);
        const ActShape& in = shape_of(l.inputs[0]);
        std::int64_t width = in.spatial ? in.c * in.h * in.w : in.d;
        if (in.spatial)
          throw structural_error("fc '" + l.id + "' fed by spatial activation; insert flatten");
        if (width != l.in_channels)
          throw structural_error("fc '" + l.id + "' expects width " +
                                 std::to_string(l.in_channels) + ", gets " + std::to_string(width));
        out = {false, 0, 0, 0, l.out_channels};
        break;
      }
      case LayerKind::ResidualAdd: {
        need_inputs(2);
        const ActShape& a = shape_of(l.inputs[0]);
        const ActShape& b = shape_of(l.inputs[1]);
        if (!(a == b))
          throw structural_error("residual_add '" + l.id + "' input shapes differ");
        if (a.channels() != l.in_channels || l.in_channels != l.out_channels)
          throw structural_error("residual_add '" + l.id + "' channel metadata disagrees");
        out = a;
        break;
      }
    }
    if (shapes.count(l.id))
      throw structural_error("duplicate layer id '" + l.id + "'");
    shapes[l.id] = out;
  }
  return shapes;
}

std::string mask_point(const ModelGraph& graph, const std::string& producer_id) {
  const LayerSpec& producer = graph.at(producer_id);
  if (producer.kind != LayerKind::Conv && producer.kind != LayerKind::Fc)
    throw structural_error("mask point requested for non-conv/fc layer '" + producer_id + "'");
  std::string cur = producer_id;
  for (;;) {
    auto consumers = graph.consumers_of(cur);
    if (consumers.size() != 1) return cur;
    const LayerSpec& next = graph.layers[static_cast<std::size_t>(consumers[0])];
    if (next.kind != LayerKind::Bn && next.kind != LayerKind::Relu) return cur;
    cur = next.id;
  }
}

void save_graph(const ModelGraph& graph, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "tcpgraph 1\n";
  out << "input";
  for (auto d : graph.input_shape) out << " " << d;
  out << "\nclasses " << graph.class_count << "\n";
  for (const auto& l : graph.layers) {
    out << "layer " << l.id << " kind=" << layer_kind_name(l.kind) << " in=" << l.in_channels
        << " out=" << l.out_channels;
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool ||
        l.kind == LayerKind::AvgPool)
      out << " kernel=" << l.kernel << " stride=" << l.stride << " padding=" << l.padding;
    out << " prunable=" << (l.prunable ? 1 : 0) << " repr=" << (l.is_representation ? 1 : 0);
    out << " inputs=";
    for (std::size_t i = 0; i < l.inputs.size(); ++i) {
      if (i) out << ",";
      out << l.inputs[i];
    }
    out << "\n";
  }
  if (!out) throw io_error("write to '" + path + "' failed");
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

ModelGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  ModelGraph g;
  std::string line;
  long long lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (!saw_header) {
      int ver = 0;
      if (tag != "tcpgraph" || !(ls >> ver) || ver != 1)
        throw format_error("'" + path + "' line " + std::to_string(lineno) +
                               ": expected 'tcpgraph 1' header",
                           0);
      saw_header = true;
      continue;
    }
    if (tag == "input") {
      std::int64_t d;
      while (ls >> d) g.input_shape.push_back(d);
      if (g.input_shape.size() != 3)
        throw format_error("'" + path + "' line " + std::to_string(lineno) +
                               ": input needs 3 dims",
                           0);
    } else if (tag == "classes") {
      if (!(ls >> g.class_count) || g.class_count < 2)
        throw format_error("'" + path + "' line " + std::to_string(lineno) + ": bad class count",
                           0);
    } else if (tag == "layer") {
      LayerSpec l;
      if (!(ls >> l.id))
        throw format_error("'" + path + "' line " + std::to_string(lineno) + ": layer needs id", 0);
      std::string kv;
      bool saw_kind = false, saw_inputs = false;
      while (ls >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw format_error("'" + path + "' line " + std::to_string(lineno) +
                                 ": expected key=value, got '" + kv + "'",
                             0);
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
          if (key == "kind") {
            l.kind = layer_kind_from_name(val);
            saw_kind = true;
          } else if (key == "in") {
            l.in_channels = std::stoi(val);
          } else if (key == "out") {
            l.out_channels = std::stoi(val);
          } else if (key == "kernel") {
            l.kernel = std::stoi(val);
          } else if (key == "stride") {
            l.stride = std::stoi(val);
          } else if (key == "padding") {
            l.padding = std::stoi(val);
          } else if (key == "prunable") {
            l.prunable = std::stoi(val) != 0;
          } else if (key == "repr") {
            l.is_representation = std::stoi(val) != 0;
          } else if (key == "inputs") {
            l.inputs = split(val, ',');
            saw_inputs = true;
          } else {
            throw format_error("unknown key '" + key + "'", 0);
          }
        } catch (const format_error&) {
          throw;
        } catch (const std::exception&) {
          throw format_error("'" + path + "' line " + std::to_string(lineno) + ": bad value for '" +
                                 key + "'",
                             0);
        }
      }
      if (!saw_kind || !saw_inputs)
        throw format_error("'" + path + "' line " + std::to_string(lineno) +
                               ": layer lacks kind or inputs",
                           0);
      g.layers.push_back(std::move(l));
    } else {
      throw format_error("'" + path + "' line " + std::to_string(lineno) + ": unknown record '" +
                             tag + "'",
                         0);
    }
  }
  if (!saw_header) throw format_error("'" + path + "': empty or missing header", 0);
  infer_shapes(g);  // validates wiring before anyone runs it
  return g;
}

}  // namespace tcprune
