#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tcprune/graph.hpp"
#include "tcprune/tensor.hpp"

namespace tcprune {

// Named parameter tensors for a model. Keys follow "<layer>.<role>":
// conv/fc carry "weight" and "bias"; bn carries "gamma", "beta" plus the
// non-trainable "running_mean" and "running_var". std::map keeps iteration
// order stable so checkpoints and reports are reproducible.
template <class T>
struct ParameterStoreT {
  struct Entry {
    TensorT<T> value;
    bool trainable{true};
  };
  std::map<std::string, Entry> entries;

  bool contains(const std::string& name) const { return entries.count(name) != 0; }
  TensorT<T>& at(const std::string& name);
  const TensorT<T>& at(const std::string& name) const;
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  void put(const std::string& name, TensorT<T> value, bool trainable = true);

  std::int64_t total_elems() const;
  std::vector<std::string> names() const;
};

using ParameterStore = ParameterStoreT<float>;
using ParameterStoreD = ParameterStoreT<double>;

// He-uniform weights for conv/fc, zero biases, gamma=1 beta=0, running
// mean 0 / var 1. Deterministic for a given (graph, seed): layers are
// visited in graph order and each tensor draws from its own seeded stream.
template <class T>
ParameterStoreT<T> init_params(const ModelGraph& graph, std::uint64_t seed);

template <class T, class U>
ParameterStoreT<T> cast_params(const ParameterStoreT<U>& src);

}  // namespace tcprune
