#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcprune/tensor.hpp"

namespace tcprune {

enum class MmdBandwidth { Median, Fixed, Multi };

struct MmdConfig {
  MmdBandwidth bandwidth{MmdBandwidth::Median};
  double fixed_sigma{1.0};  // used when bandwidth == Fixed
  // Multipliers applied to the base sigma^2 in Multi mode.
  std::vector<double> multi_scales{0.25, 0.5, 1.0, 2.0, 4.0};

  static MmdConfig parse(const std::string& text);  // "median" | "fixed:<s>" | "multi"
  std::string str() const;
};

// Biased squared MMD between row sets xs [Ns,D] and xt [Nt,D] under a
// Gaussian kernel. Accumulation is double precision regardless of T.
// The bandwidth is treated as a constant when differentiating, including in
// Median mode where it is recomputed from the batch each call.
template <class T>
struct MmdResult {
  double value{0};
  double sigma_sq{0};        // base bandwidth actually used
  TensorT<T> grad_source;    // d(mmd)/d(xs), allocated when grads requested
  TensorT<T> grad_target;    // d(mmd)/d(xt)
};

template <class T>
MmdResult<T> mmd_loss(const TensorT<T>& source, const TensorT<T>& target,
                      const MmdConfig& cfg, bool with_grads);

// Median-heuristic base bandwidth: median of pairwise squared distances over
// the pooled rows, divided by 2. Falls back to 1 when the median is zero.
template <class T>
double median_sigma_sq(const TensorT<T>& source, const TensorT<T>& target);

// Mean softmax cross entropy over logits [N,C] with integer labels.
// Log-sum-exp is max-shifted; gradient is (softmax - onehot)/N.
template <class T>
struct CrossEntropyResult {
  double value{0};
  TensorT<T> grad_logits;
  std::int64_t correct{0};  // argmax matches label (first index wins ties)
};

template <class T>
CrossEntropyResult<T> cross_entropy(const TensorT<T>& logits,
                                    const std::vector<std::int32_t>& labels,
                                    bool with_grads);

// Adaptation weight ramp for iteration i of `iters` total:
//   beta(i) = 4 / (1 + exp(-i / iters)) - 2, in [0, 2) and ~0.9242 at i=iters.
double beta_schedule(int iteration, int iters);

struct LossBreakdown {
  double total{0};
  double cls{0};
  double mmd{0};
  double beta{0};
};

}  // namespace tcprune
