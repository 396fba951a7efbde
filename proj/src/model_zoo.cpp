#include "tcprune/model_zoo.hpp"

#include <string>

namespace tcprune {

namespace {

LayerSpec make(const std::string& id, LayerKind kind, int in, int out,
               std::vector<std::string> inputs) {
  LayerSpec l;
  l.id = id;
  l.kind = kind;
  l.in_channels = in;
  l.out_channels = out;
  l.inputs = std::move(inputs);
  return l;
}

}  // namespace

ModelGraph build_small_vgg(const std::vector<std::int64_t>& input_shape, int class_count,
                           const std::vector<int>& conv_channels, int fc_width,
                           int repr_width) {
  if (input_shape.size() != 3) throw structural_error("input shape must be [C,H,W]");
  if (conv_channels.empty()) throw structural_error("need at least one conv block");
  ModelGraph g;
  g.input_shape = input_shape;
  g.class_count = class_count;

  std::string prev = kInputId;
  int in_c = static_cast<int>(input_shape[0]);
  std::int64_t h = input_shape[1], w = input_shape[2];
  for (std::size_t b = 0; b < conv_channels.size(); ++b) {
    const std::string tag = std::to_string(b + 1);
    const int out_c = conv_channels[b];
    LayerSpec conv = make("conv" + tag, LayerKind::Conv, in_c, out_c, {prev});
    conv.kernel = 3;
    conv.stride = 1;
    conv.padding = 1;
    conv.prunable = true;
    g.layers.push_back(conv);
    g.layers.push_back(make("bn" + tag, LayerKind::Bn, out_c, out_c, {"conv" + tag}));
    g.layers.push_back(make("relu" + tag, LayerKind::Relu, out_c, out_c, {"bn" + tag}));
    LayerSpec pool = make("pool" + tag, LayerKind::MaxPool, out_c, out_c, {"relu" + tag});
    pool.kernel = 2;
    pool.stride = 2;
    g.layers.push_back(pool);
    prev = "pool" + tag;
    in_c = out_c;
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) throw structural_error("too many pooling blocks for this input size");
  }

  g.layers.push_back(make("flatten", LayerKind::Flatten, in_c, in_c, {prev}));
  const int flat = in_c * static_cast<int>(h * w);

  LayerSpec fc1 = make("fc1", LayerKind::Fc, flat, fc_width, {"flatten"});
  fc1.prunable = true;
  g.layers.push_back(fc1);
  g.layers.push_back(make("fc1_relu", LayerKind::Relu, fc_width, fc_width, {"fc1"}));

  LayerSpec fc2 = make("fc2", LayerKind::Fc, fc_width, repr_width, {"fc1_relu"});
  fc2.is_representation = true;
  g.layers.push_back(fc2);
  g.layers.push_back(make("fc2_relu", LayerKind::Relu, repr_width, repr_width, {"fc2"}));

  g.layers.push_back(make("fc_cls", LayerKind::Fc, repr_width, class_count, {"fc2_relu"}));

  infer_shapes(g);
  return g;
}

ModelGraph build_small_resnet(const std::vector<std::int64_t>& input_shape, int class_count,
                              int stem_channels, const std::vector<BottleneckSpec>& blocks) {
  if (input_shape.size() != 3) throw structural_error("input shape must be [C,H,W]");
  if (blocks.empty()) throw structural_error("need at least one bottleneck block");
  ModelGraph g;
  g.input_shape = input_shape;
  g.class_count = class_count;

  LayerSpec stem = make("stem", LayerKind::Conv, static_cast<int>(input_shape[0]), stem_channels,
                        {kInputId});
  stem.kernel = 3;
  stem.stride = 1;
  stem.padding = 1;
  g.layers.push_back(stem);
  g.layers.push_back(make("stem_bn", LayerKind::Bn, stem_channels, stem_channels, {"stem"}));
  g.layers.push_back(make("stem_relu", LayerKind::Relu, stem_channels, stem_channels, {"stem_bn"}));
  LayerSpec spool = make("stem_pool", LayerKind::MaxPool, stem_channels, stem_channels,
                         {"stem_relu"});
  spool.kernel = 2;
  spool.stride = 2;
  g.layers.push_back(spool);

  std::string prev = "stem_pool";
  int in_c = stem_channels;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const BottleneckSpec& bs = blocks[b];
    const std::string tag = "b" + std::to_string(b + 1);

    LayerSpec reduce = make(tag + "_reduce", LayerKind::Conv, in_c, bs.reduce, {prev});
    reduce.kernel = 1;
    reduce.stride = 1;
    reduce.padding = 0;
    reduce.prunable = true;
    g.layers.push_back(reduce);
    g.layers.push_back(make(tag + "_bn1", LayerKind::Bn, bs.reduce, bs.reduce, {tag + "_reduce"}));
    g.layers.push_back(
        make(tag + "_relu1", LayerKind::Relu, bs.reduce, bs.reduce, {tag + "_bn1"}));

    LayerSpec mid = make(tag + "_mid", LayerKind::Conv, bs.reduce, bs.mid, {tag + "_relu1"});
    mid.kernel = 3;
    mid.stride = bs.stride;
    mid.padding = 1;
    mid.prunable = true;
    g.layers.push_back(mid);
    g.layers.push_back(make(tag + "_bn2", LayerKind::Bn, bs.mid, bs.mid, {tag + "_mid"}));
    g.layers.push_back(make(tag + "_relu2", LayerKind::Relu, bs.mid, bs.mid, {tag + "_bn2"}));

    LayerSpec expand = make(tag + "_expand", LayerKind::Conv, bs.mid, bs.expand, {tag + "_relu2"});
    expand.kernel = 1;
    expand.stride = 1;
    expand.padding = 0;
    g.layers.push_back(expand);
    g.layers.push_back(
        make(tag + "_bn3", LayerKind::Bn, bs.expand, bs.expand, {tag + "_expand"}));

    std::string skip = prev;
    if (bs.expand != in_c || bs.stride != 1) {
      LayerSpec proj = make(tag + "_proj", LayerKind::Conv, in_c, bs.expand, {prev});
      proj.kernel = 1;
      proj.stride = bs.stride;
      proj.padding = 0;
      g.layers.push_back(proj);
      g.layers.push_back(
          make(tag + "_proj_bn", LayerKind::Bn, bs.expand, bs.expand, {tag + "_proj"}));
      skip = tag + "_proj_bn";
    }

    g.layers.push_back(
        make(tag + "_add", LayerKind::ResidualAdd, bs.expand, bs.expand, {tag + "_bn3", skip}));
    g.layers.push_back(make(tag + "_out", LayerKind::Relu, bs.expand, bs.expand, {tag + "_add"}));
    prev = tag + "_out";
    in_c = bs.expand;
  }

  LayerSpec gap = make("gap", LayerKind::AvgPool, in_c, in_c, {prev});
  gap.kernel = 0;  // global
  g.layers.push_back(gap);
  g.layers.push_back(make("flatten", LayerKind::Flatten, in_c, in_c, {"gap"}));

  LayerSpec fc = make("fc", LayerKind::Fc, in_c, class_count, {"flatten"});
  fc.is_representation = true;
  g.layers.push_back(fc);

  infer_shapes(g);
  return g;
}

ModelGraph build_toy_two_conv(const std::vector<std::int64_t>& input_shape, int class_count,
                              int c1, int c2, int repr_width) {
  ModelGraph g;
  g.input_shape = input_shape;
  g.class_count = class_count;

  LayerSpec conv1 = make("conv1", LayerKind::Conv, static_cast<int>(input_shape[0]), c1,
                         {kInputId});
  conv1.kernel = 3;
  conv1.stride = 1;
  conv1.padding = 1;
  conv1.prunable = true;
  g.layers.push_back(conv1);
  g.layers.push_back(make("relu1", LayerKind::Relu, c1, c1, {"conv1"}));

  LayerSpec conv2 = make("conv2", LayerKind::Conv, c1, c2, {"relu1"});
  conv2.kernel = 3;
  conv2.stride = 1;
  conv2.padding = 1;
  conv2.prunable = true;
  g.layers.push_back(conv2);
  g.layers.push_back(make("relu2", LayerKind::Relu, c2, c2, {"conv2"}));

  g.layers.push_back(make("flatten", LayerKind::Flatten, c2, c2, {"relu2"}));
  const int flat = c2 * static_cast<int>(input_shape[1] * input_shape[2]);

  LayerSpec fc_repr = make("fc_repr", LayerKind::Fc, flat, repr_width, {"flatten"});
  fc_repr.is_representation = true;
  g.layers.push_back(fc_repr);
  g.layers.push_back(make("repr_relu", LayerKind::Relu, repr_width, repr_width, {"fc_repr"}));

  g.layers.push_back(make("fc_cls", LayerKind::Fc, repr_width, class_count, {"repr_relu"}));

  infer_shapes(g);
  return g;
}

ModelGraph build_arch(const std::string& name, const std::vector<std::int64_t>& input_shape,
                      int class_count) {
  if (name == "small-vgg")
    return build_small_vgg(input_shape, class_count, {16, 32, 32}, 64, 32);
  if (name == "small-resnet")
    return build_small_resnet(input_shape, class_count, 16,
                              {{8, 8, 32, 1}, {16, 16, 64, 2}});
  if (name == "toy") return build_toy_two_conv(input_shape, class_count, 8, 8, 16);
  throw config_error("unknown architecture '" + name + "' (expected small-vgg or small-resnet)");
}

}  // namespace tcprune
