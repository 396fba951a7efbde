#include "tcprune/ops.hpp"

#include <algorithm>
#include <cmath>

#include "tcprune/errors.hpp"
#include "tcprune/threads.hpp"

namespace tcprune {

std::int64_t conv_out_dim(std::int64_t in, int kernel, int stride, int padding) {
  return (in + 2 * std::int64_t(padding) - kernel) / stride + 1;
}

namespace {

template <class T>
void check4(const TensorT<T>& t, const char* what) {
  if (t.rank() != 4) throw structural_error(std::string(what) + " must be rank 4, got " +
                                            shape_str(t.shape));
}

template <class T>
void check2(const TensorT<T>& t, const char* what) {
  if (t.rank() != 2) throw structural_error(std::string(what) + " must be rank 2, got " +
                                            shape_str(t.shape));
}

}  // namespace

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          int stride, int padding) {
  check4(x, "conv input");
  check4(w, "conv weight");
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Cin)
    throw structural_error("conv weight expects " + std::to_string(w.dim(1)) +
                           " input channels, input has " + std::to_string(Cin));
  if (b.numel() != Cout) throw structural_error("conv bias length mismatch");
  const std::int64_t Ho = conv_out_dim(H, int(K), stride, padding);
  const std::int64_t Wo = conv_out_dim(W, int(K), stride, padding);
  if (Ho < 1 || Wo < 1) throw structural_error("conv output has no spatial extent");

  TensorT<T> y({N, Cout, Ho, Wo});
  const T* xd = x.data();
  const T* wd = w.data();
  const T* bd = b.data();
  T* yd = y.data();

  parallel_for(N * Cout, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const std::int64_t n = nc / Cout, co = nc % Cout;
      const T* wslab = wd + co * Cin * K * K;
      T* yslab = yd + (n * Cout + co) * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        const std::int64_t h0 = oh * stride - padding;
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          const std::int64_t w0 = ow * stride - padding;
          T acc = bd[co];
          for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const T* xslab = xd + (n * Cin + ci) * H * W;
            const T* wrow = wslab + ci * K * K;
            for (std::int64_t kh = 0; kh < K; ++kh) {
              const std::int64_t h = h0 + kh;
              if (h < 0 || h >= H) continue;
              const T* xrow = xslab + h * W;
              const T* wk = wrow + kh * K;
              for (std::int64_t kw = 0; kw < K; ++kw) {
                const std::int64_t ww = w0 + kw;
                if (ww < 0 || ww >= W) continue;
                acc += wk[kw] * xrow[ww];
              }
            }
          }
          yslab[oh * Wo + ow] = acc;
        }
      }
    }
  });
  return y;
}

template <class T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                               int stride, int padding) {
  check4(x, "conv input");
  check4(w, "conv weight");
  check4(dy, "conv output grad");
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), K = w.dim(2);
  const std::int64_t Ho = dy.dim(2), Wo = dy.dim(3);

  Conv2dGrads<T> g;
  g.dx = TensorT<T>::zeros(x.shape);
  g.dw = TensorT<T>::zeros(w.shape);
  g.db = TensorT<T>::zeros({Cout});
  const T* xd = x.data();
  const T* wd = w.data();
  const T* dyd = dy.data();

  // dx: gather formulation so each input element is owned by one iteration.
  T* dxd = g.dx.data();
  parallel_for(N * Cin, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const std::int64_t n = nc / Cin, ci = nc % Cin;
      T* dxslab = dxd + (n * Cin + ci) * H * W;
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t ww = 0; ww < W; ++ww) {
          T acc = T(0);
          for (std::int64_t kh = 0; kh < K; ++kh) {
            const std::int64_t oh_num = h + padding - kh;
            if (oh_num < 0 || oh_num % stride) continue;
            const std::int64_t oh = oh_num / stride;
            if (oh >= Ho) continue;
            for (std::int64_t kw = 0; kw < K; ++kw) {
              const std::int64_t ow_num = ww + padding - kw;
              if (ow_num < 0 || ow_num % stride) continue;
              const std::int64_t ow = ow_num / stride;
              if (ow >= Wo) continue;
              for (std::int64_t co = 0; co < Cout; ++co) {
                acc += dyd[((n * Cout + co) * Ho + oh) * Wo + ow] *
                       wd[((co * Cin + ci) * K + kh) * K + kw];
              }
            }
          }
          dxslab[h * W + ww] = acc;
        }
      }
    }
  });

  // dw: each weight element accumulates over the whole batch by itself.
  T* dwd = g.dw.data();
  parallel_for(Cout * Cin, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t cc = begin; cc < end; ++cc) {
      const std::int64_t co = cc / Cin, ci = cc % Cin;
      for (std::int64_t kh = 0; kh < K; ++kh) {
        for (std::int64_t kw = 0; kw < K; ++kw) {
          T acc = T(0);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* xslab = xd + (n * Cin + ci) * H * W;
            const T* dyslab = dyd + (n * Cout + co) * Ho * Wo;
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
              const std::int64_t h = oh * stride - padding + kh;
              if (h < 0 || h >= H) continue;
              for (std::int64_t ow = 0; ow < Wo; ++ow) {
                const std::int64_t ww = ow * stride - padding + kw;
                if (ww < 0 || ww >= W) continue;
                acc += dyslab[oh * Wo + ow] * xslab[h * W + ww];
              }
            }
          }
          dwd[((co * Cin + ci) * K + kh) * K + kw] = acc;
        }
      }
    }
  });

  T* dbd = g.db.data();
  parallel_for(Cout, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t co = begin; co < end; ++co) {
      T acc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* dyslab = dyd + (n * Cout + co) * Ho * Wo;
        for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += dyslab[i];
      }
      dbd[co] = acc;
    }
  });
  return g;
}

template <class T>
TensorT<T> fc_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  check2(x, "fc input");
  check2(w, "fc weight");
  const std::int64_t N = x.dim(0), D = x.dim(1), O = w.dim(0);
  if (w.dim(1) != D)
    throw structural_error("fc weight expects width " + std::to_string(w.dim(1)) +
                           ", input has " + std::to_string(D));
  if (b.numel() != O) throw structural_error("fc bias length mismatch");
  TensorT<T> y({N, O});
  const T* xd = x.data();
  const T* wd = w.data();
  const T* bd = b.data();
  T* yd = y.data();
  parallel_for(N, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t n = begin; n < end; ++n) {
      const T* xrow = xd + n * D;
      T* yrow = yd + n * O;
      for (std::int64_t o = 0; o < O; ++o) {
        const T* wrow = wd + o * D;
        T acc = bd[o];
        for (std::int64_t d = 0; d < D; ++d) acc += wrow[d] * xrow[d];
        yrow[o] = acc;
      }
    }
  });
  return y;
}

template <class T>
FcGrads<T> fc_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy) {
  check2(x, "fc input");
  check2(w, "fc weight");
  check2(dy, "fc output grad");
  const std::int64_t N = x.dim(0), D = x.dim(1), O = w.dim(0);
  FcGrads<T> g;
  g.dx = TensorT<T>::zeros({N, D});
  g.dw = TensorT<T>::zeros({O, D});
  g.db = TensorT<T>::zeros({O});
  const T* xd = x.data();
  const T* wd = w.data();
  const T* dyd = dy.data();

  T* dxd = g.dx.data();
  parallel_for(N, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t n = begin; n < end; ++n) {
      const T* dyrow = dyd + n * O;
      T* dxrow = dxd + n * D;
      for (std::int64_t o = 0; o < O; ++o) {
        const T* wrow = wd + o * D;
        const T dyv = dyrow[o];
        for (std::int64_t d = 0; d < D; ++d) dxrow[d] += dyv * wrow[d];
      }
    }
  });

  T* dwd = g.dw.data();
  parallel_for(O, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t o = begin; o < end; ++o) {
      T* dwrow = dwd + o * D;
      for (std::int64_t n = 0; n < N; ++n) {
        const T dyv = dyd[n * O + o];
        const T* xrow = xd + n * D;
        for (std::int64_t d = 0; d < D; ++d) dwrow[d] += dyv * xrow[d];
      }
    }
  });

  T* dbd = g.db.data();
  for (std::int64_t o = 0; o < O; ++o) {
    T acc = T(0);
    for (std::int64_t n = 0; n < N; ++n) acc += dyd[n * O + o];
    dbd[o] = acc;
  }
  return g;
}

template <class T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (auto& v : y.values) v = v > T(0) ? v : T(0);
  return y;
}

template <class T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
  if (x.shape != dy.shape) throw structural_error("relu backward shape mismatch");
  TensorT<T> dx = TensorT<T>::zeros(x.shape);
  for (std::size_t i = 0; i < x.values.size(); ++i)
    dx.values[i] = x.values[i] > T(0) ? dy.values[i] : T(0);
  return dx;
}

template <class T>
TensorT<T> maxpool_forward(const TensorT<T>& x, int kernel, int stride) {
  check4(x, "maxpool input");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  if (Ho < 1 || Wo < 1) throw structural_error("maxpool output has no spatial extent");
  TensorT<T> y({N, C, Ho, Wo});
  const T* xd = x.data();
  T* yd = y.data();
  parallel_for(N * C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const T* xslab = xd + nc * H * W;
      T* yslab = yd + nc * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T best = xslab[(oh * stride) * W + ow * stride];
          for (std::int64_t kh = 0; kh < kernel; ++kh)
            for (std::int64_t kw = 0; kw < kernel; ++kw) {
              T v = xslab[(oh * stride + kh) * W + ow * stride + kw];
              if (v > best) best = v;
            }
          yslab[oh * Wo + ow] = best;
        }
      }
    }
  });
  return y;
}

template <class T>
TensorT<T> maxpool_backward(const TensorT<T>& x, const TensorT<T>& dy, int kernel, int stride) {
  check4(x, "maxpool input");
  check4(dy, "maxpool output grad");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = dy.dim(2), Wo = dy.dim(3);
  TensorT<T> dx = TensorT<T>::zeros(x.shape);
  const T* xd = x.data();
  const T* dyd = dy.data();
  T* dxd = dx.data();
  // Windows can overlap when stride < kernel, so each (n,c) plane is owned by
  // one iteration and scatters sequentially; ties go to the first scan hit.
  parallel_for(N * C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const T* xslab = xd + nc * H * W;
      const T* dyslab = dyd + nc * Ho * Wo;
      T* dxslab = dxd + nc * H * W;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          std::int64_t bh = oh * stride, bw = ow * stride;
          T best = xslab[bh * W + bw];
          for (std::int64_t kh = 0; kh < kernel; ++kh)
            for (std::int64_t kw = 0; kw < kernel; ++kw) {
              const std::int64_t h = oh * stride + kh, ww = ow * stride + kw;
              T v = xslab[h * W + ww];
              if (v > best) {
                best = v;
                bh = h;
                bw = ww;
              }
            }
          dxslab[bh * W + bw] += dyslab[oh * Wo + ow];
        }
      }
    }
  });
  return dx;
}

template <class T>
TensorT<T> avgpool_forward(const TensorT<T>& x, int kernel, int stride) {
  check4(x, "avgpool input");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool global = kernel == 0;
  const std::int64_t kh = global ? H : kernel, kw = global ? W : kernel;
  const std::int64_t s = global ? 1 : stride;
  const std::int64_t Ho = (H - kh) / s + 1, Wo = (W - kw) / s + 1;
  if (Ho < 1 || Wo < 1) throw structural_error("avgpool output has no spatial extent");
  TensorT<T> y({N, C, Ho, Wo});
  const T* xd = x.data();
  T* yd = y.data();
  const double inv = 1.0 / double(kh * kw);
  parallel_for(N * C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const T* xslab = xd + nc * H * W;
      T* yslab = yd + nc * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          double acc = 0;
          for (std::int64_t a = 0; a < kh; ++a)
            for (std::int64_t b = 0; b < kw; ++b)
              acc += double(xslab[(oh * s + a) * W + ow * s + b]);
          yslab[oh * Wo + ow] = static_cast<T>(acc * inv);
        }
    }
  });
  return y;
}

template <class T>
TensorT<T> avgpool_backward(const TensorT<T>& x, const TensorT<T>& dy, int kernel, int stride) {
  check4(x, "avgpool input");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool global = kernel == 0;
  const std::int64_t kh = global ? H : kernel, kw = global ? W : kernel;
  const std::int64_t s = global ? 1 : stride;
  const std::int64_t Ho = dy.dim(2), Wo = dy.dim(3);
  TensorT<T> dx = TensorT<T>::zeros(x.shape);
  const T* dyd = dy.data();
  T* dxd = dx.data();
  const T inv = static_cast<T>(1.0 / double(kh * kw));
  parallel_for(N * C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const T* dyslab = dyd + nc * Ho * Wo;
      T* dxslab = dxd + nc * H * W;
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          const T v = dyslab[oh * Wo + ow] * inv;
          for (std::int64_t a = 0; a < kh; ++a)
            for (std::int64_t b = 0; b < kw; ++b)
              dxslab[(oh * s + a) * W + ow * s + b] += v;
        }
    }
  });
  return dx;
}

template <class T>
TensorT<T> flatten_forward(const TensorT<T>& x) {
  check4(x, "flatten input");
  TensorT<T> y = x;
  y.shape = {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)};
  y.grad.clear();
  return y;
}

template <class T>
TensorT<T> flatten_backward(const TensorT<T>& x, const TensorT<T>& dy) {
  TensorT<T> dx = dy;
  dx.shape = x.shape;
  dx.grad.clear();
  return dx;
}

template <class T>
BnForwardResult<T> bn_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const TensorT<T>& beta, TensorT<T>& running_mean,
                              TensorT<T>& running_var, bool train_mode, bool update) {
  check4(x, "bn input");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw structural_error("bn parameter length mismatch");
  const std::int64_t count = N * H * W;

  BnForwardResult<T> r;
  r.y = TensorT<T>({N, C, H, W});
  r.batch_mean = TensorT<T>::zeros({C});
  r.batch_var = TensorT<T>::zeros({C});
  const T* xd = x.data();
  T* yd = r.y.data();

  parallel_for(C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t c = begin; c < end; ++c) {
      double mean, var;
      if (train_mode) {
        double sum = 0, sq = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          const T* xs = xd + (n * C + c) * H * W;
          for (std::int64_t i = 0; i < H * W; ++i) {
            const double v = double(xs[i]);
            sum += v;
            sq += v * v;
          }
        }
        mean = sum / double(count);
        var = sq / double(count) - mean * mean;
        if (var < 0) var = 0;  // guard tiny negative from cancellation
        r.batch_mean.values[std::size_t(c)] = static_cast<T>(mean);
        r.batch_var.values[std::size_t(c)] = static_cast<T>(var);
      } else {
        mean = double(running_mean.values[std::size_t(c)]);
        var = double(running_var.values[std::size_t(c)]);
      }
      const double inv = 1.0 / std::sqrt(var + kBnEps);
      const double g = double(gamma.values[std::size_t(c)]);
      const double b = double(beta.values[std::size_t(c)]);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* xs = xd + (n * C + c) * H * W;
        T* ys = yd + (n * C + c) * H * W;
        for (std::int64_t i = 0; i < H * W; ++i)
          ys[i] = static_cast<T>((double(xs[i]) - mean) * inv * g + b);
      }
    }
  });

  if (train_mode && update) {
    for (std::int64_t c = 0; c < C; ++c) {
      const double bm = double(r.batch_mean.values[std::size_t(c)]);
      const double bv = double(r.batch_var.values[std::size_t(c)]);
      const double unbiased = count > 1 ? bv * double(count) / double(count - 1) : bv;
      auto& rm = running_mean.values[std::size_t(c)];
      auto& rv = running_var.values[std::size_t(c)];
      rm = static_cast<T>((1.0 - kBnMomentum) * double(rm) + kBnMomentum * bm);
      rv = static_cast<T>((1.0 - kBnMomentum) * double(rv) + kBnMomentum * unbiased);
    }
  }
  return r;
}

template <class T>
BnGrads<T> bn_backward(const TensorT<T>& x, const TensorT<T>& gamma,
                       const TensorT<T>& batch_mean, const TensorT<T>& batch_var,
                       const TensorT<T>& running_mean, const TensorT<T>& running_var,
                       const TensorT<T>& dy, bool train_mode) {
  check4(x, "bn input");
  check4(dy, "bn output grad");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t count = N * H * W;

  BnGrads<T> g;
  g.dx = TensorT<T>::zeros(x.shape);
  g.dgamma = TensorT<T>::zeros({C});
  g.dbeta = TensorT<T>::zeros({C});
  const T* xd = x.data();
  const T* dyd = dy.data();
  T* dxd = g.dx.data();

  parallel_for(C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t c = begin; c < end; ++c) {
      const double mean = double(train_mode ? batch_mean.values[std::size_t(c)]
                                            : running_mean.values[std::size_t(c)]);
      const double var = double(train_mode ? batch_var.values[std::size_t(c)]
                                           : running_var.values[std::size_t(c)]);
      const double inv = 1.0 / std::sqrt(var + kBnEps);
      const double gam = double(gamma.values[std::size_t(c)]);

      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* xs = xd + (n * C + c) * H * W;
        const T* ds = dyd + (n * C + c) * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) {
          const double xhat = (double(xs[i]) - mean) * inv;
          sum_dy += double(ds[i]);
          sum_dy_xhat += double(ds[i]) * xhat;
        }
      }
      g.dbeta.values[std::size_t(c)] = static_cast<T>(sum_dy);
      g.dgamma.values[std::size_t(c)] = static_cast<T>(sum_dy_xhat);

      for (std::int64_t n = 0; n < N; ++n) {
        const T* xs = xd + (n * C + c) * H * W;
        const T* ds = dyd + (n * C + c) * H * W;
        T* os = dxd + (n * C + c) * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) {
          if (train_mode) {
            const double xhat = (double(xs[i]) - mean) * inv;
            const double t = double(count) * double(ds[i]) - sum_dy - xhat * sum_dy_xhat;
            os[i] = static_cast<T>(gam * inv / double(count) * t);
          } else {
            os[i] = static_cast<T>(gam * inv * double(ds[i]));
          }
        }
      }
    }
  });
  return g;
}

template <class T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape)
    throw structural_error("residual add shape mismatch: " + shape_str(a.shape) + " vs " +
                           shape_str(b.shape));
  TensorT<T> y = a;
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += b.values[i];
  return y;
}

#define TCPRUNE_INSTANTIATE_OPS(T)                                                              \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                        int, int);                                               \
  template Conv2dGrads<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,               \
                                             const TensorT<T>&, int, int);                       \
  template TensorT<T> fc_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);    \
  template FcGrads<T> fc_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);   \
  template TensorT<T> relu_forward<T>(const TensorT<T>&);                                        \
  template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);                    \
  template TensorT<T> maxpool_forward<T>(const TensorT<T>&, int, int);                           \
  template TensorT<T> maxpool_backward<T>(const TensorT<T>&, const TensorT<T>&, int, int);       \
  template TensorT<T> avgpool_forward<T>(const TensorT<T>&, int, int);                           \
  template TensorT<T> avgpool_backward<T>(const TensorT<T>&, const TensorT<T>&, int, int);       \
  template TensorT<T> flatten_forward<T>(const TensorT<T>&);                                     \
  template TensorT<T> flatten_backward<T>(const TensorT<T>&, const TensorT<T>&);                 \
  template BnForwardResult<T> bn_forward<T>(const TensorT<T>&, const TensorT<T>&,                \
                                            const TensorT<T>&, TensorT<T>&, TensorT<T>&, bool,   \
                                            bool);                                               \
  template BnGrads<T> bn_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                     const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                     const TensorT<T>&, bool);                                   \
  template TensorT<T> add_forward<T>(const TensorT<T>&, const TensorT<T>&);

TCPRUNE_INSTANTIATE_OPS(float)
TCPRUNE_INSTANTIATE_OPS(double)

#undef TCPRUNE_INSTANTIATE_OPS

}  // namespace tcprune
