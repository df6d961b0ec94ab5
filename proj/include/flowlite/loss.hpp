#pragma once

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "flowlite/flowops.hpp"
#include "flowlite/kernels.hpp"
#include "flowlite/tensor.hpp"

namespace flowlite {

template <typename T>
using FlowMap = std::map<int, FlowField<T>>;

/// Per-level loss weights and the robust-loss constants.
template <typename T>
struct LossWeights {
  std::map<int, T> alpha;
  T epsilon = T(0.01);
  T q = T(0.4);

  static LossWeights defaults() {
    LossWeights w;
    w.alpha = {{6, T(0.32)}, {5, T(0.08)}, {4, T(0.02)}, {3, T(0.01)}, {2, T(0.005)}};
    return w;
  }

  T alpha_at(int level) const {
    auto it = alpha.find(level);
    require(it != alpha.end(), "loss: no alpha weight for level ", level);
    require(it->second > T(0), "loss: alpha for level ", level, " must be > 0");
    return it->second;
  }
};

/// Builds per-level supervision from a full-resolution ground-truth flow in
/// pixel units: divide by 20, then bilinearly downsample to each level's
/// resolution. No per-level value rescaling (shared unit convention).
template <typename T>
FlowMap<T> gt_pyramid(const FlowField<T>& flow_gt, const std::vector<int>& levels) {
  const Tensor4<T>& t = flow_gt.tensor();
  Tensor4<T> norm(t.shape());
  norm.flat() = t.flat() / T(20);
  FlowMap<T> out;
  for (int l : levels) {
    require(l >= 1 && l <= 6, "gt_pyramid: level ", l, " outside [1,6]");
    require(t.height() % (Index(1) << l) == 0 && t.width() % (Index(1) << l) == 0,
            "gt_pyramid: resolution ", t.shape(), " not divisible by 2^", l);
    out.emplace(l, FlowField<T>(bilinear_resize(norm, t.height() >> l, t.width() >> l)));
  }
  return out;
}

namespace detail {

template <typename T>
void check_level_match(const FlowMap<T>& pred, const FlowMap<T>& gt) {
  require(pred.size() == gt.size(), "loss: prediction has ", pred.size(),
          " levels but ground truth has ", gt.size());
  for (const auto& [l, p] : pred) {
    auto it = gt.find(l);
    require(it != gt.end(), "loss: ground truth missing level ", l);
    require(p.tensor().same_shape(it->second.tensor()), "loss: level ", l, " shapes ",
            p.tensor().shape(), " vs ", it->second.tensor().shape(), " differ");
  }
}

}  // namespace detail

/// Multi-scale L2 loss: per-pixel Euclidean norm of the flow difference,
/// summed over pixels, weighted per level and summed over levels.
template <typename T>
T multiscale_l2(const FlowMap<T>& pred, const FlowMap<T>& gt, const LossWeights<T>& w) {
  detail::check_level_match(pred, gt);
  T total = T(0);
  for (const auto& [l, p] : pred) {
    const Tensor4<T>& pt = p.tensor();
    const Tensor4<T>& gtt = gt.at(l).tensor();
    T level_sum = T(0);
    for (Index n = 0; n < pt.batch(); ++n) {
      for (Index y = 0; y < pt.height(); ++y) {
        for (Index x = 0; x < pt.width(); ++x) {
          const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
          const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
          level_sum += std::sqrt(du * du + dv * dv);
        }
      }
    }
    total += w.alpha_at(l) * level_sum;
  }
  return total;
}

/// Loss value together with dL/dF per level. The norm gradient at an exact
/// zero difference is defined as zero.
template <typename T>
std::pair<T, std::map<int, Tensor4<T>>> multiscale_l2_grad(const FlowMap<T>& pred,
                                                           const FlowMap<T>& gt,
                                                           const LossWeights<T>& w) {
  detail::check_level_match(pred, gt);
  T total = T(0);
  std::map<int, Tensor4<T>> grads;
  for (const auto& [l, p] : pred) {
    const Tensor4<T>& pt = p.tensor();
    const Tensor4<T>& gtt = gt.at(l).tensor();
    const T a = w.alpha_at(l);
    Tensor4<T> g(pt.shape());
    T level_sum = T(0);
    for (Index n = 0; n < pt.batch(); ++n) {
      for (Index y = 0; y < pt.height(); ++y) {
        for (Index x = 0; x < pt.width(); ++x) {
          const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
          const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
          const T norm = std::sqrt(du * du + dv * dv);
          level_sum += norm;
          if (norm > T(0)) {
            g(n, 0, y, x) = a * du / norm;
            g(n, 1, y, x) = a * dv / norm;
          }
        }
      }
    }
    total += a * level_sum;
    grads.emplace(l, std::move(g));
  }
  return {total, std::move(grads)};
}

/// Robust loss: per pixel (|du| + |dv| + eps)^q, summed and alpha-weighted.
template <typename T>
T robust_loss(const FlowMap<T>& pred, const FlowMap<T>& gt, const LossWeights<T>& w) {
  detail::check_level_match(pred, gt);
  require(w.epsilon > T(0), "robust loss: epsilon must be > 0");
  require(w.q > T(0) && w.q < T(1), "robust loss: q must lie in (0,1), got ", w.q);
  T total = T(0);
  for (const auto& [l, p] : pred) {
    const Tensor4<T>& pt = p.tensor();
    const Tensor4<T>& gtt = gt.at(l).tensor();
    T level_sum = T(0);
    for (Index n = 0; n < pt.batch(); ++n) {
      for (Index y = 0; y < pt.height(); ++y) {
        for (Index x = 0; x < pt.width(); ++x) {
          const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
          const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
          level_sum += std::pow(std::abs(du) + std::abs(dv) + w.epsilon, w.q);
        }
      }
    }
    total += w.alpha_at(l) * level_sum;
  }
  return total;
}

template <typename T>
std::pair<T, std::map<int, Tensor4<T>>> robust_loss_grad(const FlowMap<T>& pred,
                                                         const FlowMap<T>& gt,
                                                         const LossWeights<T>& w) {
  detail::check_level_match(pred, gt);
  require(w.epsilon > T(0), "robust loss: epsilon must be > 0");
  require(w.q > T(0) && w.q < T(1), "robust loss: q must lie in (0,1), got ", w.q);
  T total = T(0);
  std::map<int, Tensor4<T>> grads;
  auto sign = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
  for (const auto& [l, p] : pred) {
    const Tensor4<T>& pt = p.tensor();
    const Tensor4<T>& gtt = gt.at(l).tensor();
    const T a = w.alpha_at(l);
    Tensor4<T> g(pt.shape());
    T level_sum = T(0);
    for (Index n = 0; n < pt.batch(); ++n) {
      for (Index y = 0; y < pt.height(); ++y) {
        for (Index x = 0; x < pt.width(); ++x) {
          const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
          const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
          const T base = std::abs(du) + std::abs(dv) + w.epsilon;
          level_sum += std::pow(base, w.q);
          const T d = a * w.q * std::pow(base, w.q - T(1));
          g(n, 0, y, x) = d * sign(du);
          g(n, 1, y, x) = d * sign(dv);
        }
      }
    }
    total += a * level_sum;
    grads.emplace(l, std::move(g));
  }
  return {total, std::move(grads)};
}

/// End-point error: mean Euclidean distance between predicted and ground
/// truth flow (pixel units). An optional single-channel mask selects the
/// pixels that count; a mask with no valid pixel is rejected.
template <typename T>
T epe(const FlowField<T>& pred, const FlowField<T>& gt, const Tensor4<T>* mask = nullptr) {
  const Tensor4<T>& pt = pred.tensor();
  const Tensor4<T>& gtt = gt.tensor();
  require(pt.same_shape(gtt), "epe: shapes ", pt.shape(), " vs ", gtt.shape(), " differ");
  if (mask) {
    require(mask->batch() == pt.batch() && mask->channels() == 1 &&
                mask->height() == pt.height() && mask->width() == pt.width(),
            "epe: mask shape ", mask->shape(), " does not match flow ", pt.shape());
  }
  T sum = T(0);
  Index count = 0;
  for (Index n = 0; n < pt.batch(); ++n) {
    for (Index y = 0; y < pt.height(); ++y) {
      for (Index x = 0; x < pt.width(); ++x) {
        if (mask && (*mask)(n, 0, y, x) == T(0)) continue;
        const T du = pt(n, 0, y, x) - gtt(n, 0, y, x);
        const T dv = pt(n, 1, y, x) - gtt(n, 1, y, x);
        sum += std::sqrt(du * du + dv * dv);
        ++count;
      }
    }
  }
  require(count > 0, "epe: mask selects no valid pixels");
  return sum / T(count);
}

}  // namespace flowlite
