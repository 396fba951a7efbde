#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tcprune/graph.hpp"
#include "tcprune/params.hpp"
#include "tcprune/tensor.hpp"

namespace tcprune {

enum class BnMode { Train, Eval };

// Channel masks per producer layer: masked channels are zeroed at the
// producer's mask point (after its bn/relu tail), which matches the effect
// of physically removing them.
using ChannelMask = std::map<std::string, std::set<int>>;

struct ForwardOptions {
  bool record{false};              // keep per-layer outputs for backward
  BnMode bn_mode{BnMode::Train};
  bool update_running{false};      // fold batch stats into running stats
  const ChannelMask* mask{nullptr};
};

// Per-layer outputs captured during a recorded forward pass.
template <class T>
struct ActivationTraceT {
  TensorT<T> input;
  std::map<std::string, TensorT<T>> outputs;          // layer id -> activation
  std::map<std::string, TensorT<T>> bn_batch_stats;   // bn id -> [2,C] mean/var row pair
  ForwardOptions options;

  const TensorT<T>& at(const std::string& id) const;
};

using ActivationTrace = ActivationTraceT<float>;
using ActivationTraceD = ActivationTraceT<double>;

// Gradients produced by one backward pass.
template <class T>
struct GradientSetT {
  std::map<std::string, TensorT<T>> param_grads;       // param name -> grad
  std::map<std::string, TensorT<T>> activation_grads;  // layer id -> dL/d(output)
  TensorT<T> input_grad;

  const TensorT<T>& param(const std::string& name) const;
  const TensorT<T>& activation(const std::string& id) const;
};

using GradientSet = GradientSetT<float>;
using GradientSetD = GradientSetT<double>;

template <class T>
TensorT<T> forward_pass(const ModelGraph& graph, const ParameterStoreT<T>& params,
                        const TensorT<T>& input, const ForwardOptions& opts,
                        ActivationTraceT<T>* trace = nullptr,
                        ParameterStoreT<T>* mutable_params = nullptr);

// Convenience: eval-mode logits with no recording.
template <class T>
TensorT<T> forward_eval(const ModelGraph& graph, const ParameterStoreT<T>& params,
                        const TensorT<T>& input, const ChannelMask* mask = nullptr);

// Reverse pass over a recorded trace. `seeds` maps layer id -> dL/d(output)
// seed; several seeds may be given at once (e.g. a classification gradient at
// the logits plus an alignment gradient at the representation layer) and every
// contribution is accumulated in reverse topological order.
template <class T>
GradientSetT<T> backward_pass(const ModelGraph& graph, const ParameterStoreT<T>& params,
                              const ActivationTraceT<T>& trace,
                              const std::map<std::string, TensorT<T>>& seeds);

// Adds a gradient seed into a seed map, summing elementwise when the layer
// already carries one. Distinct loss terms can legitimately seed the same
// layer: a graph may expose its classifier output as the adapted
// representation, and a plain map insert would silently drop the second term.
template <class T>
void accumulate_seed(std::map<std::string, TensorT<T>>& seeds, const std::string& id,
                     TensorT<T>&& grad);

// SGD with classical momentum: v = m*v + g; w -= lr*v. Velocity buffers are
// keyed by parameter name and persist across steps; surgery edits them with
// the same slices it applies to the parameters.
template <class T>
class SgdOptimizerT {
 public:
  SgdOptimizerT(T lr, T momentum) : lr_(lr), momentum_(momentum) {}

  void step(ParameterStoreT<T>& params, const GradientSetT<T>& grads);
  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  T momentum() const { return momentum_; }

  std::map<std::string, TensorT<T>>& velocity() { return velocity_; }
  const std::map<std::string, TensorT<T>>& velocity() const { return velocity_; }

 private:
  T lr_;
  T momentum_;
  std::map<std::string, TensorT<T>> velocity_;
};

using SgdOptimizer = SgdOptimizerT<float>;
using SgdOptimizerD = SgdOptimizerT<double>;

// Central-difference gradient check. `loss` evaluates the scalar objective at
// the current parameter values; `analytic` holds the gradients under test.
// Reports the worst relative error err = |fd - an| / max(|fd| + |an|, floor)
// over `samples` coordinates drawn per tensor with the seeded RNG.
template <class T>
struct FiniteDiffReport {
  T max_rel_err{0};
  std::string worst_param;
  std::int64_t worst_index{-1};
  T worst_fd{0};
  T worst_analytic{0};
  bool eps_warning{false};
};

template <class T>
FiniteDiffReport<T> finite_diff_check(ParameterStoreT<T>& params,
                                      const std::function<T()>& loss,
                                      const std::map<std::string, TensorT<T>>& analytic,
                                      T eps, int samples_per_param, std::uint64_t seed);

}  // namespace tcprune
