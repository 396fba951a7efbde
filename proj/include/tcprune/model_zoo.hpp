#pragma once

#include <cstdint>
#include <vector>

#include "tcprune/graph.hpp"

namespace tcprune {

// VGG-style stack: repeated [conv3x3 - bn - relu - maxpool2] blocks, then
// flatten, a prunable hidden fc, and a representation fc feeding the
// classifier head. All convs and the hidden fc are prunable.
ModelGraph build_small_vgg(const std::vector<std::int64_t>& input_shape, int class_count,
                           const std::vector<int>& conv_channels, int fc_width,
                           int repr_width);

// ResNet-style stack: stem conv - bn - relu - maxpool, then bottleneck blocks
// (1x1 reduce, 3x3 mid, 1x1 expand with identity or projected skip), global
// average pool, and a single fc classifier that doubles as the representation
// layer. The two inner convs of every bottleneck are prunable.
struct BottleneckSpec {
  int reduce{0};   // 1x1 channels
  int mid{0};      // 3x3 channels
  int expand{0};   // 1x1 output channels
  int stride{1};   // applied at the 3x3 conv (and skip projection)
};

ModelGraph build_small_resnet(const std::vector<std::int64_t>& input_shape, int class_count,
                              int stem_channels, const std::vector<BottleneckSpec>& blocks);

// Two-conv toy net used by the criterion fidelity tests: small enough to score
// channels by brute force.
ModelGraph build_toy_two_conv(const std::vector<std::int64_t>& input_shape, int class_count,
                              int c1, int c2, int repr_width);

ModelGraph build_arch(const std::string& name, const std::vector<std::int64_t>& input_shape,
                      int class_count);

}  // namespace tcprune
