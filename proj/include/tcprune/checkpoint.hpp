#pragma once

#include <string>

#include "tcprune/graph.hpp"
#include "tcprune/params.hpp"

namespace tcprune {

// Binary checkpoint: magic "TCPC", u32 format version, u64 parameter count,
// then per parameter u32 name length, name bytes, u8 rank, rank x u64 dims,
// raw f32 payload. Little endian throughout. The graph is saved next to it
// (same path + ".graph") so a checkpoint is self-describing; trainability is
// recovered from the parameter name (bn running stats are the only
// non-trainable entries).
void save_checkpoint(const ModelGraph& graph, const ParameterStore& params,
                     const std::string& path);

struct Checkpoint {
  ModelGraph graph;
  ParameterStore params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tcprune
