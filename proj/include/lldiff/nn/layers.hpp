#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "lldiff/nn/ops.hpp"
#include "lldiff/nn/params.hpp"

namespace lldiff::nn {

struct Conv {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  int stride = 1;
  int pad = 0;
  int groups = 1;

  static Conv make(ParamLayout& layout, const std::string& name, int cin, int cout, int kernel, int stride,
                   int pad, int groups = 1, bool with_bias = true) {
    Conv c;
    const double fan_in = static_cast<double>(cin / groups) * kernel * kernel;
    c.weight = layout.add(name + ".weight", Shape{cout, cin / groups, kernel, kernel}, Init::fan_in_uniform, fan_in);
    if (with_bias) c.bias = layout.add(name + ".bias", Shape{1, cout, 1, 1}, Init::fan_in_uniform, fan_in);
    c.stride = stride;
    c.pad = pad;
    c.groups = groups;
    return c;
  }

  template <class T>
  Var operator()(Tape<T>& tape, const BoundParams<T>& p, Var x) const {
    return conv2d(tape, x, p[weight], bias ? p[*bias] : Var{}, stride, pad, groups);
  }
};

struct ConvTranspose {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int stride = 2;
  int pad = 1;

  static ConvTranspose make(ParamLayout& layout, const std::string& name, int cin, int cout, int kernel,
                            int stride, int pad) {
    ConvTranspose c;
    const double fan_in = static_cast<double>(cout) * kernel * kernel;
    c.weight = layout.add(name + ".weight", Shape{cin, cout, kernel, kernel}, Init::fan_in_uniform, fan_in);
    c.bias = layout.add(name + ".bias", Shape{1, cout, 1, 1}, Init::fan_in_uniform, fan_in);
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  template <class T>
  Var operator()(Tape<T>& tape, const BoundParams<T>& p, Var x) const {
    return conv_transpose2d(tape, x, p[weight], p[bias], stride, pad);
  }
};

/// Single-group GroupNorm ("LayerNorm" over C,H,W) with per-channel affine.
struct Norm {
  std::size_t gain = 0;
  std::size_t shift = 0;

  static Norm make(ParamLayout& layout, const std::string& name, int channels) {
    return Norm{layout.add(name + ".gain", Shape{1, channels, 1, 1}, Init::constant, 1.0),
                layout.add(name + ".shift", Shape{1, channels, 1, 1}, Init::constant, 0.0)};
  }

  template <class T>
  Var operator()(Tape<T>& tape, const BoundParams<T>& p, Var x) const {
    return add_channelwise(tape, mul_channelwise(tape, normalize_sample(tape, x), p[gain]), p[shift]);
  }
};

/// 7x7 depthwise conv, optional additive time conditioning, norm, pointwise
/// expansion with GELU, pointwise contraction, residual (1x1 when widths differ).
struct ConvNextBlock {
  int in_channels = 0;
  int out_channels = 0;
  Conv depthwise;
  std::optional<Conv> time_proj;
  Norm norm;
  Conv expand;
  Conv contract;
  std::optional<Conv> skip;

  static ConvNextBlock make(ParamLayout& layout, const std::string& name, int cin, int cout, int time_dim,
                            int expansion) {
    ConvNextBlock b;
    b.in_channels = cin;
    b.out_channels = cout;
    b.depthwise = Conv::make(layout, name + ".dw", cin, cin, 7, 1, 3, cin);
    if (time_dim > 0) b.time_proj = Conv::make(layout, name + ".time", time_dim, cin, 1, 1, 0);
    b.norm = Norm::make(layout, name + ".norm", cin);
    b.expand = Conv::make(layout, name + ".expand", cin, cout * expansion, 1, 1, 0);
    b.contract = Conv::make(layout, name + ".contract", cout * expansion, cout, 1, 1, 0);
    if (cin != cout) b.skip = Conv::make(layout, name + ".skip", cin, cout, 1, 1, 0);
    return b;
  }

  /// time_emb is [N, time_dim, 1, 1] or absent.
  template <class T>
  Var operator()(Tape<T>& tape, const BoundParams<T>& p, Var x, std::optional<Var> time_emb) const {
    Var h = depthwise(tape, p, x);
    if (time_proj) {
      require(time_emb.has_value(), ErrorCode::invalid_argument, "time-conditioned block needs an embedding");
      h = add_channelwise(tape, h, (*time_proj)(tape, p, gelu(tape, *time_emb)));
    }
    h = norm(tape, p, h);
    h = gelu(tape, expand(tape, p, h));
    h = contract(tape, p, h);
    const Var residual = skip ? (*skip)(tape, p, x) : x;
    return add(tape, h, residual);
  }
};

/// Pre-normalized linear attention with residual addition.
struct AttentionBlock {
  int channels = 0;
  int heads = 1;
  Norm prenorm;
  Conv to_qkv;
  Conv to_out;
  Norm out_norm;

  static AttentionBlock make(ParamLayout& layout, const std::string& name, int channels, int heads) {
    require(heads > 0 && channels % heads == 0, ErrorCode::invalid_argument,
            "attention heads must divide the channel count");
    AttentionBlock b;
    b.channels = channels;
    b.heads = heads;
    b.prenorm = Norm::make(layout, name + ".prenorm", channels);
    b.to_qkv = Conv::make(layout, name + ".to_qkv", channels, 3 * channels, 1, 1, 0, 1, false);
    b.to_out = Conv::make(layout, name + ".to_out", channels, channels, 1, 1, 0);
    b.out_norm = Norm::make(layout, name + ".out_norm", channels);
    return b;
  }

  template <class T>
  Var operator()(Tape<T>& tape, const BoundParams<T>& p, Var x) const {
    const Shape s = tape.value(x).shape();
    const int d = channels / heads;
    const Var qkv = to_qkv(tape, p, prenorm(tape, p, x));
    Var q = slice_channels(tape, qkv, 0, channels);
    Var k = slice_channels(tape, qkv, channels, channels);
    Var v = slice_channels(tape, qkv, 2 * channels, channels);
    q = scale(tape, softmax_channels(tape, q, d), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    k = softmax_spatial(tape, k);
    v = scale(tape, v, static_cast<T>(1.0 / static_cast<double>(s.plane_size())));
    const Var attended = linear_attention(tape, q, k, v, heads);
    return add(tape, x, out_norm(tape, p, to_out(tape, p, attended)));
  }
};

}  // namespace lldiff::nn
