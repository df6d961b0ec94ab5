#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "flowlite/kernels.hpp"
#include "flowlite/tensor.hpp"

namespace flowlite {

/// Two-channel displacement field: channel 0 is horizontal (u), channel 1
/// vertical (v). Values are full-resolution pixel displacements divided by
/// 20, the single unit convention shared by every pyramid level; the pixel
/// displacement at level l is 20*value / 2^l.
template <typename T>
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Tensor4<T> t) : t_(std::move(t)) {
    require(t_.channels() == 2, "flow field must have 2 channels, got ", t_.shape());
  }

  const Tensor4<T>& tensor() const { return t_; }
  Tensor4<T>& tensor() { return t_; }
  bool empty() const { return t_.empty(); }

  T u(Index n, Index y, Index x) const { return t_(n, 0, y, x); }
  T v(Index n, Index y, Index x) const { return t_(n, 1, y, x); }

  template <typename U>
  FlowField<U> cast() const {
    return FlowField<U>(t_.template cast<U>());
  }

 private:
  Tensor4<T> t_;
};

/// Ordered list of integer sampling offsets defining a cost volume's
/// channels: channel i of the output correlates at offsets[i] = (dy, dx).
/// Offsets are unique and stored row-major, ascending in (dy, dx).
struct CostVolumeSpec {
  std::vector<std::array<int, 2>> offsets;
  int radius = 0;

  CostVolumeSpec(std::vector<std::array<int, 2>> offs, int r)
      : offsets(std::move(offs)), radius(r) {
    require(radius >= 0, "cost volume radius must be >= 0, got ", radius);
    for (size_t i = 0; i < offsets.size(); ++i) {
      require(std::abs(offsets[i][0]) <= radius && std::abs(offsets[i][1]) <= radius,
              "cost volume offset (", offsets[i][0], ",", offsets[i][1],
              ") exceeds radius ", radius);
      if (i > 0) {
        require(offsets[i - 1] < offsets[i],
                "cost volume offsets must be unique and row-major ascending");
      }
    }
  }

  Index channels() const { return static_cast<Index>(offsets.size()); }
};

/// Full square search window: (2r+1)^2 offsets, row-major.
inline CostVolumeSpec square_spec(int radius) {
  std::vector<std::array<int, 2>> offs;
  offs.reserve((2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) offs.push_back({dy, dx});
  }
  return CostVolumeSpec(std::move(offs), radius);
}

/// Center-dense dilated sampling pattern: the radius-4 window thinned to 53
/// offsets, dense near zero displacement and dilated at the periphery. The
/// pattern is symmetric under point reflection and under (dy,dx) -> (dx,dy).
inline CostVolumeSpec cddc_spec() {
  static const std::vector<std::vector<int>> rows = {
      {-4, -2, 0, 2, 4},            // dy = -4
      {-3, -1, 1, 3},               // dy = -3
      {-4, -2, -1, 0, 1, 2, 4},     // dy = -2
      {-3, -2, -1, 0, 1, 2, 3},     // dy = -1
      {-4, -2, -1, 0, 1, 2, 4},     // dy =  0
      {-3, -2, -1, 0, 1, 2, 3},     // dy = +1
      {-4, -2, -1, 0, 1, 2, 4},     // dy = +2
      {-3, -1, 1, 3},               // dy = +3
      {-4, -2, 0, 2, 4},            // dy = +4
  };
  std::vector<std::array<int, 2>> offs;
  offs.reserve(53);
  for (int dy = -4; dy <= 4; ++dy) {
    for (int dx : rows[dy + 4]) offs.push_back({dy, dx});
  }
  return CostVolumeSpec(std::move(offs), 4);
}

/// Backward-warps `feature` by `flow`: output(x) = feature sampled
/// bilinearly at x + (20/2^level)*flow(x). Taps outside the grid read zero.
template <typename T>
Tensor4<T> warp(const Tensor4<T>& feature, const FlowField<T>& flow, int level) {
  const Tensor4<T>& ft = flow.tensor();
  require(feature.batch() == ft.batch() && feature.height() == ft.height() &&
              feature.width() == ft.width(),
          "warp: feature ", feature.shape(), " and flow ", ft.shape(),
          " disagree in batch/height/width");
  const T scale = T(20) / T(Index(1) << level);
  const Index h = feature.height(), w = feature.width(), cn = feature.channels();
  Tensor4<T> out(feature.batch(), cn, h, w);
  for (Index n = 0; n < feature.batch(); ++n) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const T sx = T(x) + scale * flow.u(n, y, x);
        const T sy = T(y) + scale * flow.v(n, y, x);
        // fully outside (or non-finite flow): all taps read zero
        if (!(sx > T(-1)) || !(sx < T(w)) || !(sy > T(-1)) || !(sy < T(h))) continue;
        const Index x0 = static_cast<Index>(std::floor(sx));
        const Index y0 = static_cast<Index>(std::floor(sy));
        const T fx = sx - T(x0), fy = sy - T(y0);
        const bool vx0 = x0 >= 0, vx1 = x0 + 1 < w;
        const bool vy0 = y0 >= 0, vy1 = y0 + 1 < h;
        const T w00 = (T(1) - fx) * (T(1) - fy), w01 = fx * (T(1) - fy);
        const T w10 = (T(1) - fx) * fy, w11 = fx * fy;
        for (Index c = 0; c < cn; ++c) {
          const T* p = feature.plane(n, c);
          T acc = T(0);
          if (vy0) {
            const T* r = p + y0 * w;
            if (vx0) acc += w00 * r[x0];
            if (vx1) acc += w01 * r[x0 + 1];
          }
          if (vy1) {
            const T* r = p + (y0 + 1) * w;
            if (vx0) acc += w10 * r[x0];
            if (vx1) acc += w11 * r[x0 + 1];
          }
          out(n, c, y, x) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
struct WarpGrads {
  Tensor4<T> feature;
  Tensor4<T> flow;  // 2 channels, includes the 20/2^level unit factor
};

template <typename T>
WarpGrads<T> warp_backward(const Tensor4<T>& grad_out, const Tensor4<T>& feature,
                           const FlowField<T>& flow, int level) {
  require(grad_out.same_shape(feature), "warp backward: grad shape ", grad_out.shape(),
          " does not match feature ", feature.shape());
  const T scale = T(20) / T(Index(1) << level);
  const Index h = feature.height(), w = feature.width(), cn = feature.channels();
  WarpGrads<T> gr;
  gr.feature = zeros_like(feature);
  gr.flow = Tensor4<T>(feature.batch(), 2, h, w);
  for (Index n = 0; n < feature.batch(); ++n) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const T sx = T(x) + scale * flow.u(n, y, x);
        const T sy = T(y) + scale * flow.v(n, y, x);
        if (!(sx > T(-1)) || !(sx < T(w)) || !(sy > T(-1)) || !(sy < T(h))) continue;
        const Index x0 = static_cast<Index>(std::floor(sx));
        const Index y0 = static_cast<Index>(std::floor(sy));
        const T fx = sx - T(x0), fy = sy - T(y0);
        const bool vx0 = x0 >= 0, vx1 = x0 + 1 < w;
        const bool vy0 = y0 >= 0, vy1 = y0 + 1 < h;
        T dsx = T(0), dsy = T(0);
        for (Index c = 0; c < cn; ++c) {
          const T g = grad_out(n, c, y, x);
          if (g == T(0)) continue;
          const T* p = feature.plane(n, c);
          T* gp = gr.feature.plane(n, c);
          const T f00 = (vy0 && vx0) ? p[y0 * w + x0] : T(0);
          const T f01 = (vy0 && vx1) ? p[y0 * w + x0 + 1] : T(0);
          const T f10 = (vy1 && vx0) ? p[(y0 + 1) * w + x0] : T(0);
          const T f11 = (vy1 && vx1) ? p[(y0 + 1) * w + x0 + 1] : T(0);
          if (vy0 && vx0) gp[y0 * w + x0] += g * (T(1) - fx) * (T(1) - fy);
          if (vy0 && vx1) gp[y0 * w + x0 + 1] += g * fx * (T(1) - fy);
          if (vy1 && vx0) gp[(y0 + 1) * w + x0] += g * (T(1) - fx) * fy;
          if (vy1 && vx1) gp[(y0 + 1) * w + x0 + 1] += g * fx * fy;
          dsx += g * ((T(1) - fy) * (f01 - f00) + fy * (f11 - f10));
          dsy += g * ((T(1) - fx) * (f10 - f00) + fx * (f11 - f01));
        }
        gr.flow(n, 0, y, x) = scale * dsx;
        gr.flow(n, 1, y, x) = scale * dsy;
      }
    }
  }
  return gr;
}

/// Normalized correlation cost volume: channel i holds
/// f1(x) . f_warp(x + offsets[i]) / N with N the feature channel count.
/// Taps outside the grid read zero.
template <typename T>
Tensor4<T> correlate(const Tensor4<T>& f1, const Tensor4<T>& f_warp,
                     const CostVolumeSpec& spec) {
  require(f1.same_shape(f_warp), "correlate: feature shapes ", f1.shape(), " and ",
          f_warp.shape(), " differ");
  const Index h = f1.height(), w = f1.width(), cn = f1.channels();
  const T inv_n = T(1) / T(cn);
  Tensor4<T> out(f1.batch(), spec.channels(), h, w);
  for (Index n = 0; n < f1.batch(); ++n) {
    for (Index d = 0; d < spec.channels(); ++d) {
      const int dy = spec.offsets[d][0], dx = spec.offsets[d][1];
      const Index y_lo = std::max<Index>(0, -dy), y_hi = std::min<Index>(h, h - dy);
      const Index x_lo = std::max<Index>(0, -dx), x_hi = std::min<Index>(w, w - dx);
      if (y_lo >= y_hi || x_lo >= x_hi) continue;
      const Index len = x_hi - x_lo;
      T* po = out.plane(n, d);
      for (Index c = 0; c < cn; ++c) {
        const T* p1 = f1.plane(n, c);
        const T* pw = f_warp.plane(n, c);
        for (Index y = y_lo; y < y_hi; ++y) {
          Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> acc(po + y * w + x_lo, len);
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(p1 + y * w + x_lo, len);
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> b(
              pw + (y + dy) * w + x_lo + dx, len);
          acc += a * b;
        }
      }
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(po, h * w) *= inv_n;
    }
  }
  return out;
}

template <typename T>
struct CorrelateGrads {
  Tensor4<T> f1;
  Tensor4<T> f_warp;
};

template <typename T>
CorrelateGrads<T> correlate_backward(const Tensor4<T>& grad_out, const Tensor4<T>& f1,
                                     const Tensor4<T>& f_warp, const CostVolumeSpec& spec) {
  const Shape4 want{f1.batch(), spec.channels(), f1.height(), f1.width()};
  require(grad_out.shape() == want, "correlate backward: grad shape ", grad_out.shape(),
          " does not match forward output ", want);
  const Index h = f1.height(), w = f1.width(), cn = f1.channels();
  const T inv_n = T(1) / T(cn);
  CorrelateGrads<T> gr{zeros_like(f1), zeros_like(f_warp)};
  for (Index n = 0; n < f1.batch(); ++n) {
    for (Index d = 0; d < spec.channels(); ++d) {
      const int dy = spec.offsets[d][0], dx = spec.offsets[d][1];
      const Index y_lo = std::max<Index>(0, -dy), y_hi = std::min<Index>(h, h - dy);
      const Index x_lo = std::max<Index>(0, -dx), x_hi = std::min<Index>(w, w - dx);
      if (y_lo >= y_hi || x_lo >= x_hi) continue;
      const Index len = x_hi - x_lo;
      const T* pg = grad_out.plane(n, d);
      for (Index c = 0; c < cn; ++c) {
        const T* p1 = f1.plane(n, c);
        const T* pw = f_warp.plane(n, c);
        T* g1 = gr.f1.plane(n, c);
        T* gw = gr.f_warp.plane(n, c);
        for (Index y = y_lo; y < y_hi; ++y) {
          using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
          Eigen::Map<const Arr> g(pg + y * w + x_lo, len);
          Eigen::Map<const Arr> a(p1 + y * w + x_lo, len);
          Eigen::Map<const Arr> b(pw + (y + dy) * w + x_lo + dx, len);
          Eigen::Map<Arr> ga(g1 + y * w + x_lo, len);
          Eigen::Map<Arr> gb(gw + (y + dy) * w + x_lo + dx, len);
          ga += g * b * inv_n;
          gb += g * a * inv_n;
        }
      }
    }
  }
  return gr;
}

/// Channel shuffle: with C channels viewed as a groups x (C/groups) matrix,
/// the output channel order is the transpose.
template <typename T>
Tensor4<T> channel_shuffle(const Tensor4<T>& input, int groups) {
  require(groups >= 1, "channel_shuffle: groups must be >= 1, got ", groups);
  require(input.channels() % groups == 0, "channel_shuffle: ", input.channels(),
          " channels not divisible by groups ", groups);
  const Index cpg = input.channels() / groups;
  const Index area = input.height() * input.width();
  Tensor4<T> out(input.shape());
  for (Index n = 0; n < input.batch(); ++n) {
    for (Index g = 0; g < groups; ++g) {
      for (Index j = 0; j < cpg; ++j) {
        std::memcpy(out.plane(n, j * groups + g), input.plane(n, g * cpg + j),
                    sizeof(T) * area);
      }
    }
  }
  return out;
}

/// Shuffling with C/groups inverts a shuffle with groups.
template <typename T>
Tensor4<T> channel_shuffle_backward(const Tensor4<T>& grad_out, int groups) {
  return channel_shuffle(grad_out, static_cast<int>(grad_out.channels()) / groups);
}

/// Learned 2x flow upsampling: the 4x4 stride-2 transposed convolution,
/// 2 -> 2 channels. Values keep the shared unit convention, so no rescaling.
template <typename T>
FlowField<T> upsample_flow2x(const FlowField<T>& flow, const Tensor4<T>& weights,
                             const Vec<T>& bias) {
  ConvSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 2;
  spec.kh = spec.kw = 4;
  spec.stride = 2;
  spec.padding = 1;
  spec.has_bias = bias.size() > 0;
  return FlowField<T>(deconv2d(flow.tensor(), weights, bias, spec));
}

}  // namespace flowlite
