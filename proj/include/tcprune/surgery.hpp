#pragma once

#include <map>
#include <string>
#include <vector>

#include "tcprune/autograd.hpp"
#include "tcprune/graph.hpp"
#include "tcprune/params.hpp"

namespace tcprune {

// Keep-list along one axis of a parameter tensor. Keeps are sorted source
// indices, so the induced remap is injective and order-preserving.
struct ParamSlice {
  int axis{0};
  std::vector<int> keep;
};

// Everything needed to physically remove a set of masked channels: the
// rewritten graph plus per-parameter slice edits (applied identically to
// optimizer state).
struct SurgeryPlan {
  ModelGraph new_graph;
  std::map<std::string, std::vector<ParamSlice>> param_edits;
};

SurgeryPlan plan_surgery(const ModelGraph& graph, const ChannelMask& masked);

template <class T>
ParameterStoreT<T> apply_surgery(const SurgeryPlan& plan, const ParameterStoreT<T>& params);

// Slice loose per-parameter tensors (e.g. optimizer velocity) with the same
// edits; entries without an edit pass through unchanged.
template <class T>
std::map<std::string, TensorT<T>> apply_surgery_aux(const SurgeryPlan& plan,
                                                    const std::map<std::string, TensorT<T>>& aux);

// Cross-checks graph wiring, representation uniqueness, and parameter shape
// agreement. Violations come back as messages; an empty list means sound.
template <class T>
std::vector<std::string> validate_structure(const ModelGraph& graph,
                                            const ParameterStoreT<T>& params);

}  // namespace tcprune
