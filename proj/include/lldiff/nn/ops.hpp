#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "lldiff/nn/tape.hpp"

namespace lldiff::nn {

// Differentiable operations on Tape nodes. Every op evaluates eagerly and,
// when any input requires a gradient, records a closure that accumulates
// into the inputs' gradient buffers.

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int channels;
  int height;
  int width;
  int kernel;
  int stride;
  int pad;
  int out_h;
  int out_w;
};

inline ConvGeometry conv_geometry(int channels, int h, int w, int kernel, int stride, int pad) {
  ConvGeometry g{channels, h, w, kernel, stride, pad, (h + 2 * pad - kernel) / stride + 1,
                 (w + 2 * pad - kernel) / stride + 1};
  require(g.out_h > 0 && g.out_w > 0, ErrorCode::shape_mismatch, "convolution output would be empty");
  return g;
}

// col is (channels*k*k) x (out_h*out_w), row-major.
template <class T>
void im2col(const T* src, const ConvGeometry& g, T* col) {
  const int k = g.kernel;
  const std::size_t cols = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col into dst.
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* dst) {
  const int k = g.kernel;
  const std::size_t cols = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = dst + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const T* srow = row + static_cast<std::size_t>(oy) * g.out_w;
          T* drow = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <class T>
bool any_grad(const Tape<T>& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (v.id != static_cast<std::size_t>(-1) && tape.requires_grad(v)) return true;
  return false;
}

inline bool present(Var v) { return v.id != static_cast<std::size_t>(-1); }

template <class T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_slope(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace detail

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "add");
  ImagePlanes<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return tape.push(std::move(out), detail::any_grad(tape, {a, b}), [a, b](Tape<T>& tp, const ImagePlanes<T>& g) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& d = tp.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  const auto& va = tape.value(a);
  ImagePlanes<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * factor;
  return tape.push(std::move(out), tape.requires_grad(a), [a, factor](Tape<T>& tp, const ImagePlanes<T>& g) {
    auto& d = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

/// x + b where b is [1 or N, C, 1, 1], broadcast over space (and batch).
template <class T>
Var add_channelwise(Tape<T>& tape, Var x, Var b) {
  const auto& vx = tape.value(x);
  const auto& vb = tape.value(b);
  const Shape s = vx.shape();
  require(vb.channels() == s.c && vb.height() == 1 && vb.width() == 1 && (vb.batch() == 1 || vb.batch() == s.n),
          ErrorCode::shape_mismatch, "add_channelwise: " + vb.shape().str() + " onto " + s.str());
  const bool per_item = vb.batch() == s.n && s.n != 1;
  ImagePlanes<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T bias = vb(per_item ? n : 0, c, 0, 0);
      auto src = vx.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] + bias;
    }
  return tape.push(std::move(out), detail::any_grad(tape, {x, b}),
                   [x, b, per_item](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const Shape s = g.shape();
                     if (tp.requires_grad(x)) {
                       auto& d = tp.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     }
                     if (tp.requires_grad(b)) {
                       auto& d = tp.grad(b);
                       for (int n = 0; n < s.n; ++n)
                         for (int c = 0; c < s.c; ++c) {
                           T acc = 0;
                           for (T v : g.plane(n, c)) acc += v;
                           d(per_item ? n : 0, c, 0, 0) += acc;
                         }
                     }
                   });
}

/// x * g where g is [1, C, 1, 1].
template <class T>
Var mul_channelwise(Tape<T>& tape, Var x, Var gain) {
  const auto& vx = tape.value(x);
  const auto& vg = tape.value(gain);
  const Shape s = vx.shape();
  require(vg.shape() == Shape{1, s.c, 1, 1}, ErrorCode::shape_mismatch, "mul_channelwise gain shape");
  ImagePlanes<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T k = vg(0, c, 0, 0);
      auto src = vx.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * k;
    }
  return tape.push(std::move(out), detail::any_grad(tape, {x, gain}),
                   [x, gain](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const Shape s = g.shape();
                     const auto& vx = tp.value(x);
                     const auto& vg = tp.value(gain);
                     if (tp.requires_grad(x)) {
                       auto& d = tp.grad(x);
                       for (int n = 0; n < s.n; ++n)
                         for (int c = 0; c < s.c; ++c) {
                           const T k = vg(0, c, 0, 0);
                           auto gp = g.plane(n, c);
                           auto dp = d.plane(n, c);
                           for (std::size_t i = 0; i < gp.size(); ++i) dp[i] += gp[i] * k;
                         }
                     }
                     if (tp.requires_grad(gain)) {
                       auto& d = tp.grad(gain);
                       for (int n = 0; n < s.n; ++n)
                         for (int c = 0; c < s.c; ++c) {
                           auto gp = g.plane(n, c);
                           auto xp = vx.plane(n, c);
                           T acc = 0;
                           for (std::size_t i = 0; i < gp.size(); ++i) acc += gp[i] * xp[i];
                           d(0, c, 0, 0) += acc;
                         }
                     }
                   });
}

template <class T>
Var gelu(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  ImagePlanes<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(vx[i]);
  return tape.push(std::move(out), tape.requires_grad(x), [x](Tape<T>& tp, const ImagePlanes<T>& g) {
    const auto& vx = tp.value(x);
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * detail::gelu_slope(vx[i]);
  });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  ImagePlanes<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-vx[i]));
  const Var y{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(x), [x, y](Tape<T>& tp, const ImagePlanes<T>& g) {
    const auto& vy = tp.value(y);
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * vy[i] * (T(1) - vy[i]);
  });
}

/// 2-D convolution with zero padding. Weight [Co, Ci/groups, k, k]; bias
/// [1, Co, 1, 1] or absent. groups must be 1 or equal Ci == Co (depthwise).
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride, int pad, int groups = 1) {
  using namespace detail;
  const auto& vx = tape.value(x);
  const auto& vw = tape.value(weight);
  const Shape xs = vx.shape();
  const int co = vw.batch();
  const int k = vw.height();
  require(vw.width() == k, ErrorCode::shape_mismatch, "conv2d: non-square kernel");
  require(groups == 1 || (groups == xs.c && co == xs.c), ErrorCode::invalid_argument,
          "conv2d: only dense or depthwise grouping supported");
  require(vw.channels() * groups == xs.c, ErrorCode::shape_mismatch,
          "conv2d: weight " + vw.shape().str() + " does not match input " + xs.str());
  if (present(bias))
    require(tape.value(bias).shape() == Shape{1, co, 1, 1}, ErrorCode::shape_mismatch, "conv2d bias shape");
  const ConvGeometry geo = conv_geometry(groups == 1 ? xs.c : 1, xs.h, xs.w, k, stride, pad);
  const Shape ys{xs.n, co, geo.out_h, geo.out_w};
  ImagePlanes<T> out(ys);
  const int rows = geo.channels * k * k;
  const int cols = geo.out_h * geo.out_w;
  const bool pointwise = groups == 1 && k == 1 && stride == 1 && pad == 0;

  if (groups == 1) {
    AlignedVector<T> col(pointwise ? 0 : static_cast<std::size_t>(rows) * cols);
    ConstMatMap<T> w(vw.data(), co, rows);
    for (int n = 0; n < xs.n; ++n) {
      const T* src = vx.item(n).data();
      if (!pointwise) im2col(src, geo, col.data());
      ConstMatMap<T> cm(pointwise ? src : col.data(), rows, cols);
      MatMap<T> ym(out.item(n).data(), co, cols);
      ym.noalias() = w * cm;
    }
  } else {
    // Depthwise: direct loops.
    const ConvGeometry g1 = geo;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* src = vx.plane(n, c).data();
        const T* kw = vw.data() + static_cast<std::size_t>(c) * k * k;
        T* dst = out.plane(n, c).data();
        for (int oy = 0; oy < g1.out_h; ++oy)
          for (int ox = 0; ox < g1.out_w; ++ox) {
            T acc = 0;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= xs.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix >= 0 && ix < xs.w) acc += kw[ky * k + kx] * src[iy * xs.w + ix];
              }
            }
            dst[oy * g1.out_w + ox] = acc;
          }
      }
  }
  if (present(bias)) {
    const auto& vb = tape.value(bias);
    for (int n = 0; n < ys.n; ++n)
      for (int c = 0; c < co; ++c)
        for (T& v : out.plane(n, c)) v += vb[static_cast<std::size_t>(c)];
  }

  return tape.push(
      std::move(out), any_grad(tape, {x, weight, bias}),
      [x, weight, bias, geo, groups, pointwise, stride, pad](Tape<T>& tp, const ImagePlanes<T>& g) {
        const auto& vx = tp.value(x);
        const auto& vw = tp.value(weight);
        const Shape xs = vx.shape();
        const int co = vw.batch();
        const int k = geo.kernel;
        const int rows = geo.channels * k * k;
        const int cols = geo.out_h * geo.out_w;
        if (present(bias) && tp.requires_grad(bias)) {
          auto& db = tp.grad(bias);
          for (int n = 0; n < g.batch(); ++n)
            for (int c = 0; c < co; ++c) {
              T acc = 0;
              for (T v : g.plane(n, c)) acc += v;
              db[static_cast<std::size_t>(c)] += acc;
            }
        }
        const bool need_x = tp.requires_grad(x);
        const bool need_w = tp.requires_grad(weight);
        if (!need_x && !need_w) return;
        if (groups == 1) {
          AlignedVector<T> col(static_cast<std::size_t>(rows) * cols);
          ConstMatMap<T> w(vw.data(), co, rows);
          RowMat<T> dw_acc;
          if (need_w) dw_acc = RowMat<T>::Zero(co, rows);
          for (int n = 0; n < xs.n; ++n) {
            ConstMatMap<T> gm(g.item(n).data(), co, cols);
            const T* src = vx.item(n).data();
            if (need_w) {
              if (pointwise) {
                dw_acc.noalias() += gm * ConstMatMap<T>(src, rows, cols).transpose();
              } else {
                im2col(src, geo, col.data());
                dw_acc.noalias() += gm * ConstMatMap<T>(col.data(), rows, cols).transpose();
              }
            }
            if (need_x) {
              auto& dx = tp.grad(x);
              if (pointwise) {
                MatMap<T> dxm(dx.item(n).data(), rows, cols);
                dxm.noalias() += w.transpose() * gm;
              } else {
                MatMap<T> cm(col.data(), rows, cols);
                cm.noalias() = w.transpose() * gm;
                col2im(col.data(), geo, dx.item(n).data());
              }
            }
          }
          if (need_w) {
            MatMap<T> dw(tp.grad(weight).data(), co, rows);
            dw += dw_acc;
          }
        } else {
          ImagePlanes<T>* dx = need_x ? &tp.grad(x) : nullptr;
          ImagePlanes<T>* dw = need_w ? &tp.grad(weight) : nullptr;
          for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
              const T* src = vx.plane(n, c).data();
              const T* kw = vw.data() + static_cast<std::size_t>(c) * k * k;
              const T* gp = g.plane(n, c).data();
              T* dxp = dx ? dx->plane(n, c).data() : nullptr;
              T* dwp = dw ? dw->data() + static_cast<std::size_t>(c) * k * k : nullptr;
              for (int oy = 0; oy < geo.out_h; ++oy)
                for (int ox = 0; ox < geo.out_w; ++ox) {
                  const T go = gp[oy * geo.out_w + ox];
                  if (go == T(0)) continue;
                  for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= xs.h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                      const int ix = ox * stride - pad + kx;
                      if (ix < 0 || ix >= xs.w) continue;
                      if (dxp) dxp[iy * xs.w + ix] += go * kw[ky * k + kx];
                      if (dwp) dwp[ky * k + kx] += go * src[iy * xs.w + ix];
                    }
                  }
                }
            }
        }
      });
}

/// Transposed convolution (the adjoint of conv2d's spatial map). Weight
/// [Ci, Co, k, k]; output size (H-1)*stride - 2*pad + k.
template <class T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride, int pad) {
  using namespace detail;
  const auto& vx = tape.value(x);
  const auto& vw = tape.value(weight);
  const Shape xs = vx.shape();
  require(vw.batch() == xs.c && vw.height() == vw.width(), ErrorCode::shape_mismatch,
          "conv_transpose2d: weight " + vw.shape().str() + " vs input " + xs.str());
  const int co = vw.channels();
  const int k = vw.height();
  const int oh = (xs.h - 1) * stride - 2 * pad + k;
  const int ow = (xs.w - 1) * stride - 2 * pad + k;
  require(oh > 0 && ow > 0, ErrorCode::shape_mismatch, "conv_transpose2d: empty output");
  // Geometry of the forward conv that maps the output back onto the input grid.
  const ConvGeometry geo{co, oh, ow, k, stride, pad, xs.h, xs.w};
  require((oh + 2 * pad - k) / stride + 1 == xs.h && (ow + 2 * pad - k) / stride + 1 == xs.w,
          ErrorCode::shape_mismatch, "conv_transpose2d: inconsistent geometry");
  const int rows = co * k * k;
  const int cols = xs.h * xs.w;
  ImagePlanes<T> out(Shape{xs.n, co, oh, ow});
  AlignedVector<T> col(static_cast<std::size_t>(rows) * cols);
  ConstMatMap<T> w(vw.data(), xs.c, rows);
  for (int n = 0; n < xs.n; ++n) {
    MatMap<T> cm(col.data(), rows, cols);
    cm.noalias() = w.transpose() * ConstMatMap<T>(vx.item(n).data(), xs.c, cols);
    col2im(col.data(), geo, out.item(n).data());
  }
  if (present(bias)) {
    const auto& vb = tape.value(bias);
    require(vb.shape() == Shape{1, co, 1, 1}, ErrorCode::shape_mismatch, "conv_transpose2d bias shape");
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < co; ++c)
        for (T& v : out.plane(n, c)) v += vb[static_cast<std::size_t>(c)];
  }
  return tape.push(std::move(out), any_grad(tape, {x, weight, bias}),
                   [x, weight, bias, geo, rows, cols](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const auto& vx = tp.value(x);
                     const auto& vw = tp.value(weight);
                     const int ci = vx.channels();
                     const int co = geo.channels;
                     if (present(bias) && tp.requires_grad(bias)) {
                       auto& db = tp.grad(bias);
                       for (int n = 0; n < g.batch(); ++n)
                         for (int c = 0; c < co; ++c) {
                           T acc = 0;
                           for (T v : g.plane(n, c)) acc += v;
                           db[static_cast<std::size_t>(c)] += acc;
                         }
                     }
                     const bool need_x = tp.requires_grad(x);
                     const bool need_w = tp.requires_grad(weight);
                     if (!need_x && !need_w) return;
                     AlignedVector<T> col(static_cast<std::size_t>(rows) * cols);
                     ConstMatMap<T> w(vw.data(), ci, rows);
                     for (int n = 0; n < vx.batch(); ++n) {
                       im2col(g.item(n).data(), geo, col.data());
                       ConstMatMap<T> cm(col.data(), rows, cols);
                       if (need_x) {
                         MatMap<T> dx(tp.grad(x).item(n).data(), ci, cols);
                         dx.noalias() += w * cm;
                       }
                       if (need_w) {
                         MatMap<T> dw(tp.grad(weight).data(), ci, rows);
                         dw.noalias() += ConstMatMap<T>(vx.item(n).data(), ci, cols) * cm.transpose();
                       }
                     }
                   });
}

/// Per-sample normalization over (C, H, W) to zero mean, unit variance
/// (a single-group GroupNorm without affine terms).
template <class T>
Var normalize_sample(Tape<T>& tape, Var x, T eps = T(1e-5)) {
  const auto& vx = tape.value(x);
  const Shape s = vx.shape();
  ImagePlanes<T> out(s);
  std::vector<T> inv_std(static_cast<std::size_t>(s.n));
  for (int n = 0; n < s.n; ++n) {
    auto src = vx.item(n);
    auto dst = out.item(n);
    T mean = 0;
    for (T v : src) mean += v;
    mean /= static_cast<T>(src.size());
    T var = 0;
    for (T v : src) var += (v - mean) * (v - mean);
    var /= static_cast<T>(src.size());
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(n)] = is;
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - mean) * is;
  }
  const Var y{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(x),
                   [x, y, inv_std = std::move(inv_std)](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const auto& vy = tp.value(y);
                     auto& d = tp.grad(x);
                     for (int n = 0; n < g.batch(); ++n) {
                       auto gy = g.item(n);
                       auto yy = vy.item(n);
                       auto dx = d.item(n);
                       const T m = static_cast<T>(gy.size());
                       T mean_g = 0;
                       T mean_gy = 0;
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         mean_g += gy[i];
                         mean_gy += gy[i] * yy[i];
                       }
                       mean_g /= m;
                       mean_gy /= m;
                       const T is = inv_std[static_cast<std::size_t>(n)];
                       for (std::size_t i = 0; i < gy.size(); ++i)
                         dx[i] += is * (gy[i] - mean_g - yy[i] * mean_gy);
                     }
                   });
}

template <class T>
Var concat(Tape<T>& tape, std::span<const Var> parts) {
  std::vector<const ImagePlanes<T>*> ptrs;
  bool grad = false;
  for (Var v : parts) {
    ptrs.push_back(&tape.value(v));
    grad = grad || tape.requires_grad(v);
  }
  ImagePlanes<T> out = concat_channels<T>(std::span<const ImagePlanes<T>* const>(ptrs));
  std::vector<Var> ids(parts.begin(), parts.end());
  return tape.push(std::move(out), grad, [ids = std::move(ids)](Tape<T>& tp, const ImagePlanes<T>& g) {
    int offset = 0;
    for (Var v : ids) {
      const int c = tp.value(v).channels();
      if (tp.requires_grad(v)) {
        auto& d = tp.grad(v);
        for (int n = 0; n < g.batch(); ++n)
          for (int ch = 0; ch < c; ++ch) {
            auto src = g.plane(n, offset + ch);
            auto dst = d.plane(n, ch);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
          }
      }
      offset += c;
    }
  });
}

template <class T>
Var slice_channels(Tape<T>& tape, Var x, int first, int count) {
  const auto& vx = tape.value(x);
  const Shape s = vx.shape();
  require(first >= 0 && count > 0 && first + count <= s.c, ErrorCode::out_of_range, "slice_channels range");
  ImagePlanes<T> out(Shape{s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < count; ++c) std::ranges::copy(vx.plane(n, first + c), out.plane(n, c).begin());
  return tape.push(std::move(out), tape.requires_grad(x), [x, first, count](Tape<T>& tp, const ImagePlanes<T>& g) {
    auto& d = tp.grad(x);
    for (int n = 0; n < g.batch(); ++n)
      for (int c = 0; c < count; ++c) {
        auto src = g.plane(n, c);
        auto dst = d.plane(n, first + c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      }
  });
}

/// Softmax across consecutive channel groups of size group, per pixel.
template <class T>
Var softmax_channels(Tape<T>& tape, Var x, int group) {
  const auto& vx = tape.value(x);
  const Shape s = vx.shape();
  require(group > 0 && s.c % group == 0, ErrorCode::invalid_argument, "softmax_channels group size");
  const std::size_t hw = s.plane_size();
  ImagePlanes<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int g0 = 0; g0 < s.c; g0 += group)
      for (std::size_t p = 0; p < hw; ++p) {
        T mx = vx.plane(n, g0)[p];
        for (int c = 1; c < group; ++c) mx = std::max(mx, vx.plane(n, g0 + c)[p]);
        T sum = 0;
        for (int c = 0; c < group; ++c) {
          const T e = std::exp(vx.plane(n, g0 + c)[p] - mx);
          out.plane(n, g0 + c)[p] = e;
          sum += e;
        }
        for (int c = 0; c < group; ++c) out.plane(n, g0 + c)[p] /= sum;
      }
  const Var y{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(x), [x, y, group](Tape<T>& tp, const ImagePlanes<T>& g) {
    const auto& vy = tp.value(y);
    auto& d = tp.grad(x);
    const Shape s = g.shape();
    for (int n = 0; n < s.n; ++n)
      for (int g0 = 0; g0 < s.c; g0 += group)
        for (std::size_t p = 0; p < s.plane_size(); ++p) {
          T dot = 0;
          for (int c = 0; c < group; ++c) dot += vy.plane(n, g0 + c)[p] * g.plane(n, g0 + c)[p];
          for (int c = 0; c < group; ++c)
            d.plane(n, g0 + c)[p] += vy.plane(n, g0 + c)[p] * (g.plane(n, g0 + c)[p] - dot);
        }
  });
}

/// Softmax over the spatial positions of each (n, c) plane.
template <class T>
Var softmax_spatial(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  const Shape s = vx.shape();
  ImagePlanes<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      auto src = vx.plane(n, c);
      auto dst = out.plane(n, c);
      const T mx = *std::ranges::max_element(src);
      T sum = 0;
      for (std::size_t i = 0; i < src.size(); ++i) sum += dst[i] = std::exp(src[i] - mx);
      for (T& v : dst) v /= sum;
    }
  const Var y{tape.size()};
  return tape.push(std::move(out), tape.requires_grad(x), [x, y](Tape<T>& tp, const ImagePlanes<T>& g) {
    const auto& vy = tp.value(y);
    auto& d = tp.grad(x);
    for (int n = 0; n < g.batch(); ++n)
      for (int c = 0; c < g.channels(); ++c) {
        auto yy = vy.plane(n, c);
        auto gg = g.plane(n, c);
        auto dd = d.plane(n, c);
        T dot = 0;
        for (std::size_t i = 0; i < yy.size(); ++i) dot += yy[i] * gg[i];
        for (std::size_t i = 0; i < yy.size(); ++i) dd[i] += yy[i] * (gg[i] - dot);
      }
  });
}

/// Linear-attention core per head: context = K V^T (d x d), out = context^T Q.
/// q, k, v are [N, heads*d, H, W]; each head's channels are a d x HW matrix.
template <class T>
Var linear_attention(Tape<T>& tape, Var q, Var k, Var v, int heads) {
  using namespace detail;
  const Shape s = tape.value(q).shape();
  require_same_shape(s, tape.value(k).shape(), "linear_attention k");
  require_same_shape(s, tape.value(v).shape(), "linear_attention v");
  require(heads > 0 && s.c % heads == 0, ErrorCode::invalid_argument, "linear_attention heads");
  const int d = s.c / heads;
  const int p = static_cast<int>(s.plane_size());
  ImagePlanes<T> out(s);
  auto head_ptr = [&](const ImagePlanes<T>& t, int n, int h) {
    return t.data() + t.index(n, h * d, 0, 0);
  };
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < heads; ++h) {
      ConstMatMap<T> qm(head_ptr(tape.value(q), n, h), d, p);
      ConstMatMap<T> km(head_ptr(tape.value(k), n, h), d, p);
      ConstMatMap<T> vm(head_ptr(tape.value(v), n, h), d, p);
      const RowMat<T> context = km * vm.transpose();
      MatMap<T> om(out.data() + out.index(n, h * d, 0, 0), d, p);
      om.noalias() = context.transpose() * qm;
    }
  return tape.push(std::move(out), any_grad(tape, {q, k, v}),
                   [q, k, v, heads, d, p](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const auto& vq = tp.value(q);
                     const auto& vk = tp.value(k);
                     const auto& vv = tp.value(v);
                     for (int n = 0; n < g.batch(); ++n)
                       for (int h = 0; h < heads; ++h) {
                         const std::size_t off = vq.index(n, h * d, 0, 0);
                         ConstMatMap<T> qm(vq.data() + off, d, p);
                         ConstMatMap<T> km(vk.data() + off, d, p);
                         ConstMatMap<T> vm(vv.data() + off, d, p);
                         ConstMatMap<T> gm(g.data() + off, d, p);
                         const RowMat<T> context = km * vm.transpose();
                         if (tp.requires_grad(q)) {
                           MatMap<T> dq(tp.grad(q).data() + off, d, p);
                           dq.noalias() += context * gm;
                         }
                         const RowMat<T> dcontext = qm * gm.transpose();
                         if (tp.requires_grad(k)) {
                           MatMap<T> dk(tp.grad(k).data() + off, d, p);
                           dk.noalias() += dcontext * vm;
                         }
                         if (tp.requires_grad(v)) {
                           MatMap<T> dv(tp.grad(v).data() + off, d, p);
                           dv.noalias() += dcontext.transpose() * km;
                         }
                       }
                   });
}

/// Positive exponent from an unconstrained scalar: softplus(raw).
template <class T>
T softplus_value(T raw) {
  return raw > T(20) ? raw : std::log1p(std::exp(raw));
}

/// y = clamp01(x)^(1/gamma), gamma = softplus(raw) with raw a [1,1,1,1] node.
template <class T>
Var gamma_curve(Tape<T>& tape, Var x, Var raw_gamma) {
  const auto& vx = tape.value(x);
  require(tape.value(raw_gamma).size() == 1, ErrorCode::shape_mismatch, "gamma parameter must be scalar");
  const T gamma = softplus_value(tape.value(raw_gamma)[0]);
  const T expo = T(1) / gamma;
  ImagePlanes<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T c = std::clamp(vx[i], T(0), T(1));
    out[i] = c > T(0) ? std::pow(c, expo) : T(0);
  }
  const Var y{tape.size()};
  return tape.push(std::move(out), detail::any_grad(tape, {x, raw_gamma}),
                   [x, raw_gamma, y, gamma, expo](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const auto& vx = tp.value(x);
                     const auto& vy = tp.value(y);
                     const T raw = tp.value(raw_gamma)[0];
                     const T dgamma_draw = T(1) / (T(1) + std::exp(-raw));
                     T acc = 0;
                     const bool need_x = tp.requires_grad(x);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const T xi = vx[i];
                       if (xi <= T(0)) continue;
                       if (need_x && xi < T(1)) tp.grad(x)[i] += g[i] * expo * vy[i] / xi;
                       const T c = std::min(xi, T(1));
                       acc += g[i] * vy[i] * std::log(c) * (-T(1) / (gamma * gamma));
                     }
                     if (tp.requires_grad(raw_gamma)) tp.grad(raw_gamma)[0] += acc * dgamma_draw;
                   });
}

/// Mean squared error against a fixed target; returns a [1,1,1,1] node.
template <class T>
Var mse(Tape<T>& tape, Var a, const ImagePlanes<T>& target) {
  const auto& va = tape.value(a);
  require_same_shape(va.shape(), target.shape(), "mse");
  T acc = 0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += (va[i] - target[i]) * (va[i] - target[i]);
  ImagePlanes<T> out(Shape{1, 1, 1, 1}, acc / static_cast<T>(va.size()));
  return tape.push(std::move(out), tape.requires_grad(a), [a, target](Tape<T>& tp, const ImagePlanes<T>& g) {
    const auto& va = tp.value(a);
    auto& d = tp.grad(a);
    const T k = T(2) * g[0] / static_cast<T>(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) d[i] += k * (va[i] - target[i]);
  });
}

/// Sum of squares, used by gradient checks of arbitrary outputs.
template <class T>
Var sum_squares(Tape<T>& tape, Var a) {
  const auto& va = tape.value(a);
  T acc = 0;
  for (T v : va.values()) acc += v * v;
  return tape.push(ImagePlanes<T>(Shape{1, 1, 1, 1}, acc), tape.requires_grad(a),
                   [a](Tape<T>& tp, const ImagePlanes<T>& g) {
                     const auto& va = tp.value(a);
                     auto& d = tp.grad(a);
                     for (std::size_t i = 0; i < va.size(); ++i) d[i] += T(2) * g[0] * va[i];
                   });
}

}  // namespace lldiff::nn
