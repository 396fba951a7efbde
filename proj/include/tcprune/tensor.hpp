#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tcprune/errors.hpp"

namespace tcprune {

// Largest element count accepted when building a tensor from untrusted input.
inline constexpr std::int64_t kMaxTensorElems = std::int64_t(1) << 33;

// Multiplies dims with overflow detection; throws format_error on overflow or
// when the product exceeds kMaxTensorElems.
inline std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw format_error("non-positive tensor dimension " + std::to_string(d), 0);
    if (n > kMaxTensorElems / d)
      throw format_error("tensor element count overflows limit", 0);
    n *= d;
  }
  return n;
}

// Dense row-major numeric array with shape, values and an optional gradient
// buffer of identical shape.
template <class T>
struct TensorT {
  std::vector<std::int64_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty, or same length as values

  TensorT() = default;
  explicit TensorT(std::vector<std::int64_t> s)
      : shape(std::move(s)), values(static_cast<std::size_t>(checked_numel(shape))) {}
  TensorT(std::vector<std::int64_t> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != checked_numel(shape))
      throw structural_error("tensor value count does not match shape");
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }

  bool has_grad() const { return !grad.empty(); }
  void alloc_grad() { grad.assign(values.size(), T(0)); }
  void zero_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    else std::fill(grad.begin(), grad.end(), T(0));
  }

  bool all_finite() const {
    for (T v : values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // 4-D activation indexing [N,C,H,W].
  T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return values[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return values[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  // 2-D indexing [N,D].
  T& at2(std::int64_t n, std::int64_t d) { return values[static_cast<std::size_t>(n * shape[1] + d)]; }
  T at2(std::int64_t n, std::int64_t d) const { return values[static_cast<std::size_t>(n * shape[1] + d)]; }

  static TensorT zeros(std::vector<std::int64_t> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<std::int64_t> s, T v) {
    TensorT t(std::move(s));
    std::fill(t.values.begin(), t.values.end(), v);
    return t;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class T, class U>
TensorT<T> cast_tensor(const TensorT<U>& src) {
  TensorT<T> out;
  out.shape = src.shape;
  out.values.resize(src.values.size());
  for (std::size_t i = 0; i < src.values.size(); ++i) out.values[i] = static_cast<T>(src.values[i]);
  return out;
}

inline std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Deterministic seed derivation for named RNG streams.
std::uint64_t mix_seed(std::uint64_t base, const std::string& stream, std::uint64_t index = 0);

}  // namespace tcprune
