#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "flowlite/tensor.hpp"

namespace flowlite {

/// Convolution layer geometry. `groups` partitions input and output channels
/// into contiguous blocks; `has_bias` declares whether a bias vector is part
/// of the layer.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1, kw = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool has_bias = true;
};

inline Index conv_out_extent(Index in, int k, int stride, int pad) {
  return (in + 2 * Index(pad) - Index(k)) / Index(stride) + 1;
}

namespace detail {

inline void check_conv_spec(const ConvSpec& s) {
  require(s.kh >= 1 && s.kw >= 1, "conv: kernel must be >= 1, got ", s.kh, "x", s.kw);
  require(s.stride >= 1, "conv: stride must be >= 1, got ", s.stride);
  require(s.padding >= 0, "conv: padding must be >= 0, got ", s.padding);
  require(s.groups >= 1, "conv: groups must be >= 1, got ", s.groups);
  require(s.in_channels % s.groups == 0, "conv: in_channels ", s.in_channels,
          " not divisible by groups ", s.groups);
  require(s.out_channels % s.groups == 0, "conv: out_channels ", s.out_channels,
          " not divisible by groups ", s.groups);
}

template <typename T>
void check_conv_args(const Tensor4<T>& input, const Tensor4<T>& weights,
                     const Vec<T>& bias, const ConvSpec& s) {
  check_conv_spec(s);
  require(input.channels() == s.in_channels, "conv: input has ", input.channels(),
          " channels, spec expects in_channels=", s.in_channels);
  const Shape4 want{s.out_channels, s.in_channels / s.groups, s.kh, s.kw};
  require(weights.shape() == want, "conv: weight shape ", weights.shape(),
          " does not match expected ", want);
  if (s.has_bias) {
    require(bias.size() == s.out_channels, "conv: bias has ", bias.size(),
            " entries, expected out_channels=", s.out_channels);
  } else {
    require(bias.size() == 0, "conv: spec declares no bias but one was given");
  }
}

// Unrolls one (batch, group) slice into a (Cg*kh*kw) x (Hout*Wout) matrix.
// Out-of-image taps become zero.
template <typename T>
void im2col(const Tensor4<T>& in, Index n, Index c0, Index cg, const ConvSpec& s,
            Index hout, Index wout, RowMat<T>& col) {
  const Index hin = in.height(), win = in.width();
  Index r = 0;
  for (Index ci = 0; ci < cg; ++ci) {
    for (int ky = 0; ky < s.kh; ++ky) {
      for (int kx = 0; kx < s.kw; ++kx, ++r) {
        T* dst = col.data() + r * hout * wout;
        for (Index oy = 0; oy < hout; ++oy) {
          const Index iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= hin) {
            std::memset(dst + oy * wout, 0, sizeof(T) * wout);
            continue;
          }
          const T* src = in.row(n, c0 + ci, iy);
          for (Index ox = 0; ox < wout; ++ox) {
            const Index ix = ox * s.stride - s.padding + kx;
            dst[oy * wout + ox] = (ix >= 0 && ix < win) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the column matrix back into image layout.
template <typename T>
void col2im_add(const RowMat<T>& col, Index n, Index c0, Index cg, const ConvSpec& s,
                Index hout, Index wout, Tensor4<T>& out) {
  const Index hin = out.height(), win = out.width();
  Index r = 0;
  for (Index ci = 0; ci < cg; ++ci) {
    for (int ky = 0; ky < s.kh; ++ky) {
      for (int kx = 0; kx < s.kw; ++kx, ++r) {
        const T* src = col.data() + r * hout * wout;
        for (Index oy = 0; oy < hout; ++oy) {
          const Index iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= hin) continue;
          T* dst = out.row(n, c0 + ci, iy);
          for (Index ox = 0; ox < wout; ++ox) {
            const Index ix = ox * s.stride - s.padding + kx;
            if (ix >= 0 && ix < win) dst[ix] += src[oy * wout + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Grouped 2D convolution in the cross-correlation convention (no kernel
/// flip). Weights are (out_channels, in_channels/groups, kh, kw). Pass an
/// empty bias vector when spec.has_bias is false.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Tensor4<T>& weights,
                  const Vec<T>& bias, const ConvSpec& spec) {
  detail::check_conv_args(input, weights, bias, spec);
  const Index hout = conv_out_extent(input.height(), spec.kh, spec.stride, spec.padding);
  const Index wout = conv_out_extent(input.width(), spec.kw, spec.stride, spec.padding);
  require(hout >= 1 && wout >= 1, "conv: kernel ", spec.kh, "x", spec.kw,
          " does not fit input ", input.shape(), " with padding ", spec.padding);

  const Index g = spec.groups;
  const Index cig = spec.in_channels / g, cog = spec.out_channels / g;
  const Index k = cig * spec.kh * spec.kw, area = hout * wout;

  Tensor4<T> out(input.batch(), spec.out_channels, hout, wout);
  RowMat<T> col(k, area);
  for (Index n = 0; n < input.batch(); ++n) {
    for (Index gr = 0; gr < g; ++gr) {
      detail::im2col(input, n, gr * cig, cig, spec, hout, wout, col);
      Eigen::Map<const RowMat<T>> wm(weights.data() + gr * cog * k, cog, k);
      Eigen::Map<RowMat<T>> om(out.plane(n, gr * cog), cog, area);
      om.noalias() = wm * col;
    }
    if (spec.has_bias) {
      for (Index c = 0; c < spec.out_channels; ++c) {
        Eigen::Map<Vec<T>>(out.plane(n, c), area).array() += bias[c];
      }
    }
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  Vec<T> bias;  // empty when the layer has no bias
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input,
                             const Tensor4<T>& weights, const ConvSpec& spec) {
  const Index hout = conv_out_extent(input.height(), spec.kh, spec.stride, spec.padding);
  const Index wout = conv_out_extent(input.width(), spec.kw, spec.stride, spec.padding);
  const Shape4 want{input.batch(), spec.out_channels, hout, wout};
  require(grad_out.shape() == want, "conv backward: grad shape ", grad_out.shape(),
          " does not match forward output ", want);

  const Index g = spec.groups;
  const Index cig = spec.in_channels / g, cog = spec.out_channels / g;
  const Index k = cig * spec.kh * spec.kw, area = hout * wout;

  ConvGrads<T> gr;
  gr.input = zeros_like(input);
  gr.weights = zeros_like(weights);
  if (spec.has_bias) gr.bias = Vec<T>::Zero(spec.out_channels);

  RowMat<T> col(k, area), gcol(k, area);
  for (Index n = 0; n < input.batch(); ++n) {
    for (Index gi = 0; gi < g; ++gi) {
      detail::im2col(input, n, gi * cig, cig, spec, hout, wout, col);
      Eigen::Map<const RowMat<T>> gom(grad_out.plane(n, gi * cog), cog, area);
      Eigen::Map<RowMat<T>> gwm(gr.weights.data() + gi * cog * k, cog, k);
      gwm.noalias() += gom * col.transpose();
      Eigen::Map<const RowMat<T>> wm(weights.data() + gi * cog * k, cog, k);
      gcol.noalias() = wm.transpose() * gom;
      detail::col2im_add(gcol, n, gi * cig, cig, spec, hout, wout, gr.input);
    }
    if (spec.has_bias) {
      for (Index c = 0; c < spec.out_channels; ++c) {
        gr.bias[c] += Eigen::Map<const Vec<T>>(grad_out.plane(n, c), area).sum();
      }
    }
  }
  return gr;
}

/// Transposed convolution for the 4x4, stride-2, pad-1 doubling layer; the
/// only parameterization this engine supports. Weights are
/// (in_channels, out_channels, 4, 4); output is (B, out_channels, 2H, 2W).
template <typename T>
Tensor4<T> deconv2d(const Tensor4<T>& input, const Tensor4<T>& weights,
                    const Vec<T>& bias, const ConvSpec& spec) {
  require(spec.kh == 4 && spec.kw == 4 && spec.stride == 2 && spec.padding == 1 &&
              spec.groups == 1,
          "deconv: only the 4x4 stride-2 pad-1 doubling configuration is supported, got "
          "kernel ", spec.kh, "x", spec.kw, " stride ", spec.stride, " pad ", spec.padding,
          " groups ", spec.groups);
  require(input.channels() == spec.in_channels, "deconv: input has ", input.channels(),
          " channels, spec expects in_channels=", spec.in_channels);
  const Shape4 want{spec.in_channels, spec.out_channels, 4, 4};
  require(weights.shape() == want, "deconv: weight shape ", weights.shape(),
          " does not match expected ", want);
  if (spec.has_bias) {
    require(bias.size() == spec.out_channels, "deconv: bias has ", bias.size(),
            " entries, expected out_channels=", spec.out_channels);
  } else {
    require(bias.size() == 0, "deconv: spec declares no bias but one was given");
  }

  const Index h = input.height(), w = input.width();
  const Index ho = 2 * h, wo = 2 * w;
  Tensor4<T> out(input.batch(), spec.out_channels, ho, wo);
  for (Index n = 0; n < input.batch(); ++n) {
    for (Index ci = 0; ci < spec.in_channels; ++ci) {
      for (Index y = 0; y < h; ++y) {
        const T* in_row = input.row(n, ci, y);
        for (Index x = 0; x < w; ++x) {
          const T v = in_row[x];
          if (v == T(0)) continue;
          for (Index co = 0; co < spec.out_channels; ++co) {
            const T* wk = weights.plane(ci, co);
            for (int ky = 0; ky < 4; ++ky) {
              const Index oy = 2 * y - 1 + ky;
              if (oy < 0 || oy >= ho) continue;
              T* orow = out.row(n, co, oy);
              for (int kx = 0; kx < 4; ++kx) {
                const Index ox = 2 * x - 1 + kx;
                if (ox >= 0 && ox < wo) orow[ox] += v * wk[ky * 4 + kx];
              }
            }
          }
        }
      }
    }
    if (spec.has_bias) {
      for (Index c = 0; c < spec.out_channels; ++c) {
        Eigen::Map<Vec<T>>(out.plane(n, c), ho * wo).array() += bias[c];
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input,
                               const Tensor4<T>& weights, const ConvSpec& spec) {
  const Shape4 want{input.batch(), spec.out_channels, 2 * input.height(), 2 * input.width()};
  require(grad_out.shape() == want, "deconv backward: grad shape ", grad_out.shape(),
          " does not match forward output ", want);
  const Index h = input.height(), w = input.width();
  const Index ho = grad_out.height(), wo = grad_out.width();

  ConvGrads<T> gr;
  gr.input = zeros_like(input);
  gr.weights = zeros_like(weights);
  if (spec.has_bias) gr.bias = Vec<T>::Zero(spec.out_channels);

  for (Index n = 0; n < input.batch(); ++n) {
    for (Index ci = 0; ci < spec.in_channels; ++ci) {
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          const T v = input(n, ci, y, x);
          T acc = T(0);
          for (Index co = 0; co < spec.out_channels; ++co) {
            const T* wk = weights.plane(ci, co);
            T* gwk = gr.weights.plane(ci, co);
            for (int ky = 0; ky < 4; ++ky) {
              const Index oy = 2 * y - 1 + ky;
              if (oy < 0 || oy >= ho) continue;
              const T* grow = grad_out.row(n, co, oy);
              for (int kx = 0; kx < 4; ++kx) {
                const Index ox = 2 * x - 1 + kx;
                if (ox < 0 || ox >= wo) continue;
                acc += grow[ox] * wk[ky * 4 + kx];
                gwk[ky * 4 + kx] += v * grow[ox];
              }
            }
          }
          gr.input(n, ci, y, x) = acc;
        }
      }
    }
    if (spec.has_bias) {
      for (Index c = 0; c < spec.out_channels; ++c) {
        gr.bias[c] += Eigen::Map<const Vec<T>>(grad_out.plane(n, c), ho * wo).sum();
      }
    }
  }
  return gr;
}

/// 2x2 average pooling with stride 2. Requires even spatial extents.
template <typename T>
Tensor4<T> avgpool2(const Tensor4<T>& input) {
  require(input.height() % 2 == 0 && input.width() % 2 == 0,
          "avgpool2: spatial size must be even, got ", input.shape());
  const Index ho = input.height() / 2, wo = input.width() / 2;
  Tensor4<T> out(input.batch(), input.channels(), ho, wo);
  for (Index n = 0; n < input.batch(); ++n) {
    for (Index c = 0; c < input.channels(); ++c) {
      for (Index y = 0; y < ho; ++y) {
        const T* r0 = input.row(n, c, 2 * y);
        const T* r1 = input.row(n, c, 2 * y + 1);
        T* dst = out.row(n, c, y);
        for (Index x = 0; x < wo; ++x) {
          dst[x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * T(0.25);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> avgpool2_backward(const Tensor4<T>& grad_out, const Shape4& input_shape) {
  const Shape4 want{input_shape.b, input_shape.c, input_shape.h / 2, input_shape.w / 2};
  require(grad_out.shape() == want, "avgpool2 backward: grad shape ", grad_out.shape(),
          " does not match forward output ", want);
  Tensor4<T> gin(input_shape);
  for (Index n = 0; n < grad_out.batch(); ++n) {
    for (Index c = 0; c < grad_out.channels(); ++c) {
      for (Index y = 0; y < grad_out.height(); ++y) {
        const T* src = grad_out.row(n, c, y);
        T* r0 = gin.row(n, c, 2 * y);
        T* r1 = gin.row(n, c, 2 * y + 1);
        for (Index x = 0; x < grad_out.width(); ++x) {
          const T g = src[x] * T(0.25);
          r0[2 * x] = g;
          r0[2 * x + 1] = g;
          r1[2 * x] = g;
          r1[2 * x + 1] = g;
        }
      }
    }
  }
  return gin;
}

/// Elementwise max(x, slope*x).
template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& input, T slope) {
  Tensor4<T> out(input.shape());
  out.flat() = input.flat().max(input.flat() * slope);
  return out;
}

/// `ref` carries the signs of the forward input; for slope > 0 the forward
/// output works equally since the activation preserves sign.
template <typename T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& ref, T slope) {
  require(grad_out.same_shape(ref), "leaky_relu backward: grad shape ", grad_out.shape(),
          " does not match input ", ref.shape());
  Tensor4<T> gin(grad_out.shape());
  gin.flat() = (ref.flat() > T(0)).select(grad_out.flat(), grad_out.flat() * slope);
  return gin;
}

/// Concatenates along the channel axis in argument order.
template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& inputs) {
  require(!inputs.empty(), "concat: needs at least one input");
  const Tensor4<T>& first = *inputs.front();
  Index ctotal = 0;
  for (const Tensor4<T>* t : inputs) {
    require(t->batch() == first.batch() && t->height() == first.height() &&
                t->width() == first.width(),
            "concat: input shape ", t->shape(), " does not match ", first.shape(),
            " in batch/height/width");
    ctotal += t->channels();
  }
  Tensor4<T> out(first.batch(), ctotal, first.height(), first.width());
  const Index area = first.height() * first.width();
  for (Index n = 0; n < first.batch(); ++n) {
    Index c0 = 0;
    for (const Tensor4<T>* t : inputs) {
      std::memcpy(out.plane(n, c0), t->plane(n, 0), sizeof(T) * t->channels() * area);
      c0 += t->channels();
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor4<T>> concat_channels_backward(const Tensor4<T>& grad_out,
                                                 const std::vector<Index>& channel_counts) {
  Index ctotal = 0;
  for (Index c : channel_counts) ctotal += c;
  require(ctotal == grad_out.channels(), "concat backward: channel counts sum to ", ctotal,
          " but grad has ", grad_out.channels());
  std::vector<Tensor4<T>> grads;
  grads.reserve(channel_counts.size());
  const Index area = grad_out.height() * grad_out.width();
  Index c0 = 0;
  for (Index c : channel_counts) {
    Tensor4<T> g(grad_out.batch(), c, grad_out.height(), grad_out.width());
    for (Index n = 0; n < grad_out.batch(); ++n) {
      std::memcpy(g.plane(n, 0), grad_out.plane(n, c0), sizeof(T) * c * area);
    }
    grads.push_back(std::move(g));
    c0 += c;
  }
  return grads;
}

namespace detail {

// Sampling tables for one axis of an align-corners-false resize.
template <typename T>
struct ResizeAxis {
  std::vector<Index> lo, hi;
  std::vector<T> frac;
};

template <typename T>
ResizeAxis<T> resize_axis(Index in, Index out) {
  ResizeAxis<T> ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.frac.resize(out);
  const T scale = T(in) / T(out);
  for (Index o = 0; o < out; ++o) {
    T src = (T(o) + T(0.5)) * scale - T(0.5);
    if (src < T(0)) src = T(0);
    if (src > T(in - 1)) src = T(in - 1);
    const Index lo = static_cast<Index>(std::floor(src));
    ax.lo[o] = lo;
    ax.hi[o] = std::min(lo + 1, in - 1);
    ax.frac[o] = src - T(lo);
  }
  return ax;
}

}  // namespace detail

/// Bilinear resize, align-corners-false convention with edge clamping.
/// Resizing to the same extents reproduces the input bitwise.
template <typename T>
Tensor4<T> bilinear_resize(const Tensor4<T>& input, Index out_h, Index out_w) {
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: target size must be >= 1, got ",
          out_h, "x", out_w);
  const auto ay = detail::resize_axis<T>(input.height(), out_h);
  const auto ax = detail::resize_axis<T>(input.width(), out_w);
  Tensor4<T> out(input.batch(), input.channels(), out_h, out_w);
  for (Index n = 0; n < input.batch(); ++n) {
    for (Index c = 0; c < input.channels(); ++c) {
      for (Index y = 0; y < out_h; ++y) {
        const T* r0 = input.row(n, c, ay.lo[y]);
        const T* r1 = input.row(n, c, ay.hi[y]);
        const T fy = ay.frac[y];
        T* dst = out.row(n, c, y);
        for (Index x = 0; x < out_w; ++x) {
          const T fx = ax.frac[x];
          const T top = r0[ax.lo[x]] + fx * (r0[ax.hi[x]] - r0[ax.lo[x]]);
          const T bot = r1[ax.lo[x]] + fx * (r1[ax.hi[x]] - r1[ax.lo[x]]);
          dst[x] = top + fy * (bot - top);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> bilinear_resize_backward(const Tensor4<T>& grad_out, const Shape4& input_shape) {
  require(grad_out.batch() == input_shape.b && grad_out.channels() == input_shape.c,
          "bilinear_resize backward: grad shape ", grad_out.shape(),
          " does not match input ", input_shape);
  const auto ay = detail::resize_axis<T>(input_shape.h, grad_out.height());
  const auto ax = detail::resize_axis<T>(input_shape.w, grad_out.width());
  Tensor4<T> gin(input_shape);
  for (Index n = 0; n < grad_out.batch(); ++n) {
    for (Index c = 0; c < grad_out.channels(); ++c) {
      for (Index y = 0; y < grad_out.height(); ++y) {
        T* r0 = gin.row(n, c, ay.lo[y]);
        T* r1 = gin.row(n, c, ay.hi[y]);
        const T fy = ay.frac[y];
        const T* src = grad_out.row(n, c, y);
        for (Index x = 0; x < grad_out.width(); ++x) {
          const T fx = ax.frac[x];
          const T g = src[x];
          r0[ax.lo[x]] += g * (T(1) - fx) * (T(1) - fy);
          r0[ax.hi[x]] += g * fx * (T(1) - fy);
          r1[ax.lo[x]] += g * (T(1) - fx) * fy;
          r1[ax.hi[x]] += g * fx * fy;
        }
      }
    }
  }
  return gin;
}

}  // namespace flowlite
