// Independent reference implementations used to pin expected values.
// Everything here is deliberately written as plain nested loops over the
// mathematical definitions, sharing no code path with the library kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "flowlite/flowops.hpp"
#include "flowlite/kernels.hpp"
#include "flowlite/tensor.hpp"

namespace oracle {

using flowlite::ConvSpec;
using flowlite::CostVolumeSpec;
using flowlite::FlowField;
using flowlite::Index;
using flowlite::Tensor4;
using flowlite::Vec;

template <typename T>
Tensor4<T> random_tensor(Index b, Index c, Index h, Index w, std::mt19937& rng,
                         T lo = T(-1), T hi = T(1)) {
  Tensor4<T> t(b, c, h, w);
  for (Index i = 0; i < t.size(); ++i) {
    const T u = T((rng() >> 8) * (1.0 / 16777216.0));
    t.data()[i] = lo + u * (hi - lo);
  }
  return t;
}

// Direct seven-loop convolution (cross-correlation, zero padding).
template <typename T>
Tensor4<T> conv2d_ref(const Tensor4<T>& in, const Tensor4<T>& w, const Vec<T>& bias,
                      const ConvSpec& s) {
  const Index hout = (in.height() + 2 * s.padding - s.kh) / s.stride + 1;
  const Index wout = (in.width() + 2 * s.padding - s.kw) / s.stride + 1;
  const Index cig = s.in_channels / s.groups, cog = s.out_channels / s.groups;
  Tensor4<T> out(in.batch(), s.out_channels, hout, wout);
  for (Index n = 0; n < in.batch(); ++n)
    for (Index oc = 0; oc < s.out_channels; ++oc)
      for (Index oy = 0; oy < hout; ++oy)
        for (Index ox = 0; ox < wout; ++ox) {
          T acc = bias.size() > 0 ? bias[oc] : T(0);
          const Index g = oc / cog;
          for (Index ic = 0; ic < cig; ++ic)
            for (Index ky = 0; ky < s.kh; ++ky)
              for (Index kx = 0; kx < s.kw; ++kx) {
                const Index iy = oy * s.stride - s.padding + ky;
                const Index ix = ox * s.stride - s.padding + kx;
                if (iy < 0 || iy >= in.height() || ix < 0 || ix >= in.width()) continue;
                acc += in(n, g * cig + ic, iy, ix) * w(oc, ic, ky, kx);
              }
          out(n, oc, oy, ox) = acc;
        }
  return out;
}

// Transposed convolution as a gather through the flipped kernel: output
// position o collects input i where i*stride - pad + k == o.
template <typename T>
Tensor4<T> deconv2d_ref(const Tensor4<T>& in, const Tensor4<T>& w, const Vec<T>& bias) {
  const Index ho = 2 * in.height(), wo = 2 * in.width();
  const Index co_n = w.channels();
  Tensor4<T> out(in.batch(), co_n, ho, wo);
  for (Index n = 0; n < in.batch(); ++n)
    for (Index co = 0; co < co_n; ++co)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          T acc = bias.size() > 0 ? bias[co] : T(0);
          for (Index ci = 0; ci < in.channels(); ++ci)
            for (Index ky = 0; ky < 4; ++ky)
              for (Index kx = 0; kx < 4; ++kx) {
                // input index implied by oy == 2*iy - 1 + ky
                const Index ny = oy + 1 - ky, nx = ox + 1 - kx;
                if (ny % 2 != 0 || nx % 2 != 0) continue;
                const Index iy = ny / 2, ix = nx / 2;
                if (iy < 0 || iy >= in.height() || ix < 0 || ix >= in.width()) continue;
                acc += in(n, ci, iy, ix) * w(ci, co, ky, kx);
              }
          out(n, co, oy, ox) = acc;
        }
  return out;
}

template <typename T>
Tensor4<T> avgpool2_ref(const Tensor4<T>& in) {
  Tensor4<T> out(in.batch(), in.channels(), in.height() / 2, in.width() / 2);
  for (Index n = 0; n < out.batch(); ++n)
    for (Index c = 0; c < out.channels(); ++c)
      for (Index y = 0; y < out.height(); ++y)
        for (Index x = 0; x < out.width(); ++x) {
          T s = T(0);
          for (Index dy = 0; dy < 2; ++dy)
            for (Index dx = 0; dx < 2; ++dx) s += in(n, c, 2 * y + dy, 2 * x + dx);
          out(n, c, y, x) = s / T(4);
        }
  return out;
}

// Per-pixel evaluation of the align-corners-false sampling formula using the
// (1-f)a + f*b form.
template <typename T>
Tensor4<T> bilinear_resize_ref(const Tensor4<T>& in, Index oh, Index ow) {
  Tensor4<T> out(in.batch(), in.channels(), oh, ow);
  const T sy = T(in.height()) / T(oh), sx = T(in.width()) / T(ow);
  for (Index n = 0; n < out.batch(); ++n)
    for (Index c = 0; c < out.channels(); ++c)
      for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x) {
          T srcy = (T(y) + T(0.5)) * sy - T(0.5);
          T srcx = (T(x) + T(0.5)) * sx - T(0.5);
          srcy = std::min(std::max(srcy, T(0)), T(in.height() - 1));
          srcx = std::min(std::max(srcx, T(0)), T(in.width() - 1));
          const Index y0 = static_cast<Index>(std::floor(srcy));
          const Index x0 = static_cast<Index>(std::floor(srcx));
          const Index y1 = std::min(y0 + 1, in.height() - 1);
          const Index x1 = std::min(x0 + 1, in.width() - 1);
          const T fy = srcy - T(y0), fx = srcx - T(x0);
          out(n, c, y, x) = (T(1) - fy) * ((T(1) - fx) * in(n, c, y0, x0) +
                                           fx * in(n, c, y0, x1)) +
                            fy * ((T(1) - fx) * in(n, c, y1, x0) + fx * in(n, c, y1, x1));
        }
  return out;
}

// Per-pixel bilinear warp with zero padding, evaluated from the definition.
template <typename T>
Tensor4<T> warp_ref(const Tensor4<T>& feat, const FlowField<T>& flow, int level) {
  const T scale = T(20) / T(Index(1) << level);
  const Index h = feat.height(), w = feat.width();
  Tensor4<T> out(feat.batch(), feat.channels(), h, w);
  auto tap = [&](Index n, Index c, Index y, Index x) -> T {
    if (y < 0 || y >= h || x < 0 || x >= w) return T(0);
    return feat(n, c, y, x);
  };
  for (Index n = 0; n < feat.batch(); ++n)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const T sx = T(x) + scale * flow.u(n, y, x);
        const T sy = T(y) + scale * flow.v(n, y, x);
        if (sx <= T(-1) || sx >= T(w) || sy <= T(-1) || sy >= T(h)) continue;
        const Index x0 = static_cast<Index>(std::floor(sx));
        const Index y0 = static_cast<Index>(std::floor(sy));
        const T fx = sx - T(x0), fy = sy - T(y0);
        for (Index c = 0; c < feat.channels(); ++c) {
          out(n, c, y, x) = (T(1) - fy) * ((T(1) - fx) * tap(n, c, y0, x0) +
                                           fx * tap(n, c, y0, x0 + 1)) +
                            fy * ((T(1) - fx) * tap(n, c, y0 + 1, x0) +
                                  fx * tap(n, c, y0 + 1, x0 + 1));
        }
      }
  return out;
}

// Brute-force cost volume: c(x, d) = f1(x) . fw(x+d) / N with zero padding.
template <typename T>
Tensor4<T> correlate_ref(const Tensor4<T>& f1, const Tensor4<T>& fw,
                         const CostVolumeSpec& spec) {
  const Index h = f1.height(), w = f1.width(), cn = f1.channels();
  Tensor4<T> out(f1.batch(), spec.channels(), h, w);
  for (Index n = 0; n < f1.batch(); ++n)
    for (Index d = 0; d < spec.channels(); ++d)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const Index yy = y + spec.offsets[d][0], xx = x + spec.offsets[d][1];
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          T acc = T(0);
          for (Index c = 0; c < cn; ++c) acc += f1(n, c, y, x) * fw(n, c, yy, xx);
          out(n, d, y, x) = acc / T(cn);
        }
  return out;
}

template <typename T>
Tensor4<T> channel_shuffle_ref(const Tensor4<T>& in, int groups) {
  const Index cpg = in.channels() / groups;
  Tensor4<T> out(in.shape());
  for (Index n = 0; n < in.batch(); ++n)
    for (Index c = 0; c < in.channels(); ++c) {
      const Index g = c / cpg, j = c % cpg;  // source channel c = g*cpg + j
      for (Index y = 0; y < in.height(); ++y)
        for (Index x = 0; x < in.width(); ++x) out(n, j * groups + g, y, x) = in(n, c, y, x);
    }
  return out;
}

// Scalar-loop multi-scale losses over (level, alpha) pairs.
template <typename T>
T multiscale_l2_ref(const std::map<int, FlowField<T>>& pred,
                    const std::map<int, FlowField<T>>& gt, const std::map<int, T>& alpha) {
  T total = T(0);
  for (const auto& [l, p] : pred) {
    const auto& pt = p.tensor();
    const auto& gtt = gt.at(l).tensor();
    T s = T(0);
    for (Index n = 0; n < pt.batch(); ++n)
      for (Index y = 0; y < pt.height(); ++y)
        for (Index x = 0; x < pt.width(); ++x) {
          const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
          const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
          s += std::sqrt(du * du + dv * dv);
        }
    total += alpha.at(l) * s;
  }
  return total;
}

template <typename T>
T robust_loss_ref(const std::map<int, FlowField<T>>& pred,
                  const std::map<int, FlowField<T>>& gt, const std::map<int, T>& alpha,
                  T eps, T q) {
  T total = T(0);
  for (const auto& [l, p] : pred) {
    const auto& pt = p.tensor();
    const auto& gtt = gt.at(l).tensor();
    T s = T(0);
    for (Index n = 0; n < pt.batch(); ++n)
      for (Index y = 0; y < pt.height(); ++y)
        for (Index x = 0; x < pt.width(); ++x) {
          const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
          const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
          s += std::pow(std::abs(du) + std::abs(dv) + eps, q);
        }
    total += alpha.at(l) * s;
  }
  return total;
}

// Central finite difference of a scalar functional along one coordinate.
template <typename F>
double central_diff(F&& eval, double* slot, double step = 1e-4) {
  const double saved = *slot;
  *slot = saved + step;
  const double up = eval();
  *slot = saved - step;
  const double down = eval();
  *slot = saved;
  return (up - down) / (2.0 * step);
}

inline double rel_err(double a, double b) {
  const double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

}  // namespace oracle
