#pragma once

#include <cstdint>

#include "tcprune/tensor.hpp"

namespace tcprune {

// Layer kernels used by the graph executor. All take NCHW (or [N,D]) tensors;
// backward variants consume dL/d(output) and produce gradients w.r.t. inputs
// and parameters. Loops are ordered so results are identical for any thread
// count.

std::int64_t conv_out_dim(std::int64_t in, int kernel, int stride, int padding);

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          int stride, int padding);

template <class T>
struct Conv2dGrads {
  TensorT<T> dx;
  TensorT<T> dw;
  TensorT<T> db;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                               int stride, int padding);

template <class T>
TensorT<T> fc_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

template <class T>
struct FcGrads {
  TensorT<T> dx;
  TensorT<T> dw;
  TensorT<T> db;
};

template <class T>
FcGrads<T> fc_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy);

template <class T>
TensorT<T> relu_forward(const TensorT<T>& x);

template <class T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& dy);

template <class T>
TensorT<T> maxpool_forward(const TensorT<T>& x, int kernel, int stride);

template <class T>
TensorT<T> maxpool_backward(const TensorT<T>& x, const TensorT<T>& dy, int kernel, int stride);

// kernel == 0 pools the whole spatial extent (global average).
template <class T>
TensorT<T> avgpool_forward(const TensorT<T>& x, int kernel, int stride);

template <class T>
TensorT<T> avgpool_backward(const TensorT<T>& x, const TensorT<T>& dy, int kernel, int stride);

template <class T>
TensorT<T> flatten_forward(const TensorT<T>& x);

template <class T>
TensorT<T> flatten_backward(const TensorT<T>& x, const TensorT<T>& dy);

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;  // running = (1-m)*running + m*batch

template <class T>
struct BnForwardResult {
  TensorT<T> y;
  TensorT<T> batch_mean;  // [C], biased batch stats (train mode)
  TensorT<T> batch_var;   // [C]
};

// Train mode normalizes with batch statistics; eval mode with the provided
// running statistics. `update` folds batch stats into running_mean/var using
// kBnMomentum (unbiased variance, matching the usual convention).
template <class T>
BnForwardResult<T> bn_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const TensorT<T>& beta, TensorT<T>& running_mean,
                              TensorT<T>& running_var, bool train_mode, bool update);

template <class T>
struct BnGrads {
  TensorT<T> dx;
  TensorT<T> dgamma;
  TensorT<T> dbeta;
};

// Backward through train-mode normalization (batch-stat path). Eval-mode
// backward treats mean/var as constants; `train_mode` selects the path.
template <class T>
BnGrads<T> bn_backward(const TensorT<T>& x, const TensorT<T>& gamma,
                       const TensorT<T>& batch_mean, const TensorT<T>& batch_var,
                       const TensorT<T>& running_mean, const TensorT<T>& running_var,
                       const TensorT<T>& dy, bool train_mode);

template <class T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b);

}  // namespace tcprune
