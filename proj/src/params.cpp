#include "tcprune/params.hpp"

#include <cmath>
#include <random>

namespace tcprune {

template <class T>
TensorT<T>& ParameterStoreT<T>::at(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end()) throw structural_error("no parameter '" + name + "'");
  return it->second.value;
}

template <class T>
const TensorT<T>& ParameterStoreT<T>::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw structural_error("no parameter '" + name + "'");
  return it->second.value;
}

template <class T>
typename ParameterStoreT<T>::Entry& ParameterStoreT<T>::entry(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end()) throw structural_error("no parameter '" + name + "'");
  return it->second;
}

template <class T>
const typename ParameterStoreT<T>::Entry& ParameterStoreT<T>::entry(
    const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw structural_error("no parameter '" + name + "'");
  return it->second;
}

template <class T>
void ParameterStoreT<T>::put(const std::string& name, TensorT<T> value, bool trainable) {
  entries[name] = Entry{std::move(value), trainable};
}

template <class T>
std::int64_t ParameterStoreT<T>::total_elems() const {
  std::int64_t n = 0;
  for (const auto& [name, e] : entries) n += e.value.numel();
  return n;
}

template <class T>
std::vector<std::string> ParameterStoreT<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& [name, e] : entries) out.push_back(name);
  return out;
}

template <class T>
ParameterStoreT<T> init_params(const ModelGraph& graph, std::uint64_t seed) {
  infer_shapes(graph);
  ParameterStoreT<T> ps;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Fc) {
      std::int64_t fan_in = (l.kind == LayerKind::Conv)
                                ? std::int64_t(l.in_channels) * l.kernel * l.kernel
                                : std::int64_t(l.in_channels);
      // He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::mt19937_64 rng(mix_seed(seed, "init/" + l.id));
      std::uniform_real_distribution<double> dist(-bound, bound);
      std::vector<std::int64_t> wshape =
          (l.kind == LayerKind::Conv)
              ? std::vector<std::int64_t>{l.out_channels, l.in_channels, l.kernel, l.kernel}
              : std::vector<std::int64_t>{l.out_channels, l.in_channels};
      TensorT<T> w(wshape);
      for (auto& v : w.values) v = static_cast<T>(dist(rng));
      ps.put(l.id + ".weight", std::move(w));
      ps.put(l.id + ".bias", TensorT<T>::zeros({l.out_channels}));
    } else if (l.kind == LayerKind::Bn) {
      ps.put(l.id + ".gamma", TensorT<T>::full({l.out_channels}, T(1)));
      ps.put(l.id + ".beta", TensorT<T>::zeros({l.out_channels}));
      ps.put(l.id + ".running_mean", TensorT<T>::zeros({l.out_channels}), false);
      ps.put(l.id + ".running_var", TensorT<T>::full({l.out_channels}, T(1)), false);
    }
  }
  return ps;
}

template <class T, class U>
ParameterStoreT<T> cast_params(const ParameterStoreT<U>& src) {
  ParameterStoreT<T> out;
  for (const auto& [name, e] : src.entries)
    out.put(name, cast_tensor<T>(e.value), e.trainable);
  return out;
}

template struct ParameterStoreT<float>;
template struct ParameterStoreT<double>;
template ParameterStoreT<float> init_params<float>(const ModelGraph&, std::uint64_t);
template ParameterStoreT<double> init_params<double>(const ModelGraph&, std::uint64_t);
template ParameterStoreT<double> cast_params<double, float>(const ParameterStoreT<float>&);
template ParameterStoreT<float> cast_params<float, double>(const ParameterStoreT<double>&);

}  // namespace tcprune
