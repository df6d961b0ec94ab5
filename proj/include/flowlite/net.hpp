#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "flowlite/arch.hpp"
#include "flowlite/flowops.hpp"
#include "flowlite/kernels.hpp"
#include "flowlite/tensor.hpp"

namespace flowlite {

inline constexpr double kLeakySlope = 0.1;

template <typename T>
struct LayerWeights {
  Tensor4<T> weight;
  Vec<T> bias;  // empty for bias-free layers
};

/// Named weight container with deterministic iteration order (the layer
/// table's definition order, decode levels descending).
template <typename T>
class WeightStore {
 public:
  void add(std::string name, Tensor4<T> weight, Vec<T> bias) {
    require(map_.find(name) == map_.end(), "weight store: duplicate layer '", name, "'");
    order_.push_back(name);
    map_.emplace(std::move(name), LayerWeights<T>{std::move(weight), std::move(bias)});
  }

  bool has(const std::string& name) const { return map_.count(name) != 0; }

  const LayerWeights<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    require(it != map_.end(), "weight store: missing layer '", name, "'");
    return it->second;
  }
  LayerWeights<T>& at(const std::string& name) {
    auto it = map_.find(name);
    require(it != map_.end(), "weight store: missing layer '", name, "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t layer_count() const { return order_.size(); }

  Index element_count() const {
    Index n = 0;
    for (const auto& name : order_) {
      const auto& lw = map_.at(name);
      n += lw.weight.size() + lw.bias.size();
    }
    return n;
  }

  template <typename U>
  WeightStore<U> cast() const {
    WeightStore<U> out;
    for (const auto& name : order_) {
      const auto& lw = map_.at(name);
      out.add(name, lw.weight.template cast<U>(), lw.bias.template cast<U>());
    }
    return out;
  }

  /// Same names and shapes, all values zero. Gradient accumulators start here.
  WeightStore<T> zero_clone() const {
    WeightStore<T> out;
    for (const auto& name : order_) {
      const auto& lw = map_.at(name);
      out.add(name, Tensor4<T>(lw.weight.shape()), Vec<T>::Zero(lw.bias.size()));
    }
    return out;
  }

  /// this += alpha * other, entrywise over every tensor.
  void add_scaled(const WeightStore<T>& other, T alpha) {
    for (const auto& name : order_) {
      auto& lw = map_.at(name);
      const auto& o = other.at(name);
      lw.weight.flat() += alpha * o.weight.flat();
      lw.bias += alpha * o.bias;
    }
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, LayerWeights<T>> map_;
};

namespace detail {

// 24-bit mantissa mapping keeps the stream identical across platforms.
inline double uniform01(std::mt19937& rng) {
  return (rng() >> 8) * (1.0 / 16777216.0);
}

}  // namespace detail

/// Deterministic initialization: every convolution weight uniform in
/// +-sqrt(1/fan_in) with fan_in = (in_channels/groups)*kh*kw, biases zero.
/// Values are drawn in double precision and cast, so float and double
/// stores from one seed agree.
template <typename T>
WeightStore<T> init_weights(const NetConfig& cfg, uint32_t seed) {
  std::mt19937 rng(seed);
  WeightStore<T> ws;
  for (const LayerInfo& li : layer_plan(cfg)) {
    if (!li.has_params()) continue;
    const Shape4 shape = li.kind == LayerKind::Deconv
                             ? Shape4{li.in_ch, li.out_ch, li.kh, li.kw}
                             : Shape4{li.out_ch, li.in_ch / li.groups, li.kh, li.kw};
    const double bound = std::sqrt(1.0 / ((li.in_ch / li.groups) * li.kh * li.kw));
    Tensor4<T> w(shape);
    T* p = w.data();
    for (Index i = 0; i < w.size(); ++i) {
      p[i] = static_cast<T>((2.0 * detail::uniform01(rng) - 1.0) * bound);
    }
    ws.add(li.name, std::move(w), Vec<T>::Zero(li.out_ch));
  }
  return ws;
}

template <typename T>
ConvSpec conv_spec_of(const LayerInfo& li) {
  ConvSpec s;
  s.in_channels = li.in_ch;
  s.out_channels = li.out_ch;
  s.kh = li.kh;
  s.kw = li.kw;
  s.stride = li.stride;
  s.padding = li.padding;
  s.groups = li.groups;
  s.has_bias = li.has_bias;
  return s;
}

inline ConvSpec pconv_spec(int in_ch, int out_ch, int stride) {
  ConvSpec s;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kh = s.kw = 3;
  s.stride = stride;
  s.padding = 1;
  return s;
}

inline ConvSpec upconv_spec() {
  ConvSpec s;
  s.in_channels = 2;
  s.out_channels = 2;
  s.kh = s.kw = 4;
  s.stride = 2;
  s.padding = 1;
  return s;
}

/// Feature pyramid, indexed by level 1..6 (entry 0 unused).
template <typename T>
struct Pyramid {
  std::array<Tensor4<T>, 7> level;
};

/// Saved activations of one pyramid pass, for the backward walk.
template <typename T>
struct PyramidTrace {
  Tensor4<T> input;                    // normalized image
  std::array<Tensor4<T>, 8> conv_out;  // post-activation pconv outputs
};

namespace detail {

struct PconvRow {
  const char* name;
  int in_ch, out_ch, stride;
};

inline const std::array<PconvRow, 8>& pconv_rows() {
  static const std::array<PconvRow, 8> rows = {{
      {"pconv1_1", 3, 16, 2},
      {"pconv1_2", 16, 16, 1},
      {"pconv2_1", 16, 32, 2},
      {"pconv2_2", 32, 32, 1},
      {"pconv2_3", 32, 32, 1},
      {"pconv3_1", 32, 64, 2},
      {"pconv3_2", 64, 64, 1},
      {"pconv3_3", 64, 64, 1},
  }};
  return rows;
}

}  // namespace detail

/// Runs the feature extractor: three convolution stages for levels 1..3,
/// then parameter-free 2x2 average pooling for levels 4..6.
template <typename T>
Pyramid<T> extract_pyramid(const Tensor4<T>& image, const WeightStore<T>& ws,
                           PyramidTrace<T>* trace = nullptr) {
  require(image.channels() == 3, "pyramid: expected a 3-channel image, got ", image.shape());
  require(image.height() % 64 == 0 && image.width() % 64 == 0,
          "pyramid: height and width must be divisible by 64, got ", image.shape());
  if (trace) trace->input = image;

  Pyramid<T> pyr;
  Tensor4<T> x = image;
  const auto& rows = detail::pconv_rows();
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& lw = ws.at(rows[i].name);
    x = conv2d(x, lw.weight, lw.bias, pconv_spec(rows[i].in_ch, rows[i].out_ch, rows[i].stride));
    x = leaky_relu(x, T(kLeakySlope));
    if (trace) trace->conv_out[i] = x;
    if (i == 1) pyr.level[1] = x;
    if (i == 4) pyr.level[2] = x;
    if (i == 7) pyr.level[3] = x;
  }
  pyr.level[4] = avgpool2(pyr.level[3]);
  pyr.level[5] = avgpool2(pyr.level[4]);
  pyr.level[6] = avgpool2(pyr.level[5]);
  return pyr;
}

/// Saved activations of one decode level.
template <typename T>
struct DecodeTrace {
  int level = 0;
  bool has_prior = false;
  Tensor4<T> f1, f2;
  Tensor4<T> prior_flow;                  // level l+1 flow (when has_prior)
  Tensor4<T> up_flow;                     // upsampled prior, or zeros at the top
  Tensor4<T> f_warp;
  Tensor4<T> cost_raw;                    // correlation output, pre-activation
  Tensor4<T> rconv_out;                   // post-activation context features
  Tensor4<T> concat_in;
  std::array<Tensor4<T>, 7> fconv_out;    // post-activation (fconv*_7: raw)
  std::array<Tensor4<T>, 3> shuffle_out;  // after the three channel shuffles
};

/// One decode step at `level`: upsample the prior flow, warp the second
/// feature map, correlate, reduce context, and regress residual flow through
/// the shuffle-block stack. The output is residual plus upsampled prior.
template <typename T>
FlowField<T> decode_level(const Tensor4<T>& f1, const Tensor4<T>& f2,
                          const FlowField<T>* prior_flow, int level, const NetConfig& cfg,
                          const WeightStore<T>& ws, DecodeTrace<T>* trace = nullptr) {
  cfg.validate();
  require(f1.same_shape(f2), "decode: feature shapes ", f1.shape(), " and ", f2.shape(),
          " differ at level ", level);
  require(f1.channels() == NetConfig::level_channels(level), "decode: level ", level,
          " features must have ", NetConfig::level_channels(level), " channels, got ",
          f1.channels());
  const std::string ls = std::to_string(level);
  const T slope = T(kLeakySlope);

  Tensor4<T> up_flow;
  if (prior_flow) {
    const auto& up = ws.at("upconv" + std::to_string(level + 1));
    up_flow = deconv2d(prior_flow->tensor(), up.weight, up.bias, upconv_spec());
    require(up_flow.height() == f1.height() && up_flow.width() == f1.width(),
            "decode: upsampled flow ", up_flow.shape(), " does not match features ",
            f1.shape(), " at level ", level);
  } else {
    up_flow = Tensor4<T>(f1.batch(), 2, f1.height(), f1.width());
  }

  Tensor4<T> f_warp = warp(f2, FlowField<T>(up_flow), level);

  const CostVolumeSpec spec =
      cfg.cost_mode == CostMode::cddc ? cddc_spec() : square_spec(cfg.search_radius());
  Tensor4<T> cost_raw = correlate(f1, f_warp, spec);
  Tensor4<T> cost = cfg.activate_cost ? leaky_relu(cost_raw, slope) : cost_raw;

  const auto& rc = ws.at("rconv" + ls);
  Tensor4<T> context = leaky_relu(
      conv2d(f1, rc.weight, rc.bias,
             pconv_spec(static_cast<int>(f1.channels()), 32, 1)),
      slope);

  Tensor4<T> x = concat_channels<T>({&context, &cost, &up_flow});

  if (trace) {
    trace->level = level;
    trace->has_prior = prior_flow != nullptr;
    trace->f1 = f1;
    trace->f2 = f2;
    if (prior_flow) trace->prior_flow = prior_flow->tensor();
    trace->up_flow = up_flow;
    trace->f_warp = f_warp;
    trace->cost_raw = cost_raw;
    trace->rconv_out = context;
    trace->concat_in = x;
  }

  const std::array<int, 8> widths = {cfg.decoder_input_channels(), 96, 96, 96, 96, 64, 32, 2};
  for (int i = 1; i <= 7; ++i) {
    const auto& lw = ws.at("fconv" + ls + "_" + std::to_string(i));
    ConvSpec cs = pconv_spec(widths[i - 1], widths[i], 1);
    if (i >= 2 && i <= 4) cs.groups = cfg.decoder_groups;
    x = conv2d(x, lw.weight, lw.bias, cs);
    if (i != 7) x = leaky_relu(x, slope);
    if (trace) trace->fconv_out[i - 1] = x;
    if (i >= 2 && i <= 4) {
      x = channel_shuffle(x, cfg.decoder_groups);
      if (trace) trace->shuffle_out[i - 2] = x;
    }
  }

  Tensor4<T> flow(x.shape());
  flow.flat() = x.flat() + up_flow.flat();
  return FlowField<T>(flow);
}

template <typename T>
struct ForwardTrace {
  PyramidTrace<T> pyr1, pyr2;
  std::vector<DecodeTrace<T>> decode;  // coarsest..stop order
};

template <typename T>
struct ForwardResult {
  std::map<int, FlowField<T>> flows;  // level -> flow, shared unit convention
  FlowField<T> full;                  // full-resolution flow in pixel units
  Pyramid<T> pyr1, pyr2;              // kept for warm-started continuation
};

/// Subtracts the per-pair mean of each color channel from both images.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> normalize_pair(const Tensor4<T>& img1,
                                                 const Tensor4<T>& img2) {
  Tensor4<T> a = img1, b = img2;
  const Index area = img1.height() * img1.width();
  for (Index n = 0; n < img1.batch(); ++n) {
    for (Index c = 0; c < img1.channels(); ++c) {
      Eigen::Map<Vec<T>> pa(a.plane(n, c), area);
      Eigen::Map<Vec<T>> pb(b.plane(n, c), area);
      const T mean = (pa.mean() + pb.mean()) / T(2);
      pa.array() -= mean;
      pb.array() -= mean;
    }
  }
  return {std::move(a), std::move(b)};
}

/// Full pipeline: extract both pyramids, decode from the coarsest level down
/// to `stop_level`, then bilinearly upsample the finest flow to input
/// resolution and convert to pixel units (x20).
template <typename T>
ForwardResult<T> forward(const Tensor4<T>& img1, const Tensor4<T>& img2,
                         const NetConfig& cfg, const WeightStore<T>& ws, int stop_level,
                         ForwardTrace<T>* trace = nullptr) {
  cfg.validate();
  require(img1.same_shape(img2), "forward: image shapes ", img1.shape(), " and ",
          img2.shape(), " differ");
  require(stop_level >= cfg.finest_level && stop_level <= cfg.coarsest_level,
          "forward: stop_level ", stop_level, " outside configured range [",
          cfg.finest_level, ", ", cfg.coarsest_level, "]");

  Tensor4<T> in1 = img1, in2 = img2;
  if (cfg.normalize_input) {
    auto [a, b] = normalize_pair(img1, img2);
    in1 = std::move(a);
    in2 = std::move(b);
  }

  ForwardResult<T> res;
  res.pyr1 = extract_pyramid(in1, ws, trace ? &trace->pyr1 : nullptr);
  res.pyr2 = extract_pyramid(in2, ws, trace ? &trace->pyr2 : nullptr);

  FlowField<T> flow;
  for (int l = cfg.coarsest_level; l >= stop_level; --l) {
    DecodeTrace<T>* dt = nullptr;
    if (trace) {
      trace->decode.emplace_back();
      dt = &trace->decode.back();
    }
    const FlowField<T>* prior = (l == cfg.coarsest_level) ? nullptr : &flow;
    flow = decode_level(res.pyr1.level[l], res.pyr2.level[l], prior, l, cfg, ws, dt);
    res.flows.emplace(l, flow);
  }

  Tensor4<T> full = bilinear_resize(flow.tensor(), img1.height(), img1.width());
  full.flat() *= T(20);
  res.full = FlowField<T>(std::move(full));
  return res;
}

namespace detail {

template <typename T>
void accumulate(Tensor4<T>& dst, const Tensor4<T>& src) {
  if (dst.empty()) {
    dst = src;
  } else {
    dst.flat() += src.flat();
  }
}

template <typename T>
void add_conv_grads(WeightStore<T>& grads, const std::string& name, const ConvGrads<T>& g) {
  auto& slot = grads.at(name);
  slot.weight.flat() += g.weights.flat();
  if (g.bias.size() > 0) slot.bias += g.bias;
}

// Backward through one decode level. g_flow is dL/d(output flow); feature
// gradients accumulate into g_f1/g_f2; returns dL/d(prior flow) when a prior
// exists.
template <typename T>
std::optional<Tensor4<T>> decode_backward(const DecodeTrace<T>& tr, const NetConfig& cfg,
                                          const WeightStore<T>& ws, const Tensor4<T>& g_flow,
                                          Tensor4<T>& g_f1, Tensor4<T>& g_f2,
                                          WeightStore<T>& grads) {
  const std::string ls = std::to_string(tr.level);
  const T slope = T(kLeakySlope);
  const std::array<int, 8> widths = {cfg.decoder_input_channels(), 96, 96, 96, 96, 64, 32, 2};

  Tensor4<T> g_up = g_flow;  // residual connection
  Tensor4<T> g = g_flow;

  for (int i = 7; i >= 1; --i) {
    const std::string name = "fconv" + ls + "_" + std::to_string(i);
    if (i >= 2 && i <= 4) g = channel_shuffle_backward(g, cfg.decoder_groups);
    ConvSpec cs = pconv_spec(widths[i - 1], widths[i], 1);
    if (i >= 2 && i <= 4) cs.groups = cfg.decoder_groups;
    const Tensor4<T>& input = [&]() -> const Tensor4<T>& {
      if (i == 1) return tr.concat_in;
      if (i == 3 || i == 4 || i == 5) return tr.shuffle_out[i - 3];
      return tr.fconv_out[i - 2];
    }();
    if (i != 7) g = leaky_relu_backward(g, tr.fconv_out[i - 1], slope);
    ConvGrads<T> cg = conv2d_backward(g, input, ws.at(name).weight, cs);
    add_conv_grads(grads, name, cg);
    g = std::move(cg.input);
  }

  auto pieces = concat_channels_backward<T>(
      g, {32, static_cast<Index>(cfg.cost_channels()), 2});
  Tensor4<T>& g_context = pieces[0];
  Tensor4<T>& g_cost = pieces[1];
  g_up.flat() += pieces[2].flat();

  {
    const std::string name = "rconv" + ls;
    Tensor4<T> gp = leaky_relu_backward(g_context, tr.rconv_out, slope);
    ConvGrads<T> cg = conv2d_backward(
        gp, tr.f1, ws.at(name).weight,
        pconv_spec(static_cast<int>(tr.f1.channels()), 32, 1));
    add_conv_grads(grads, name, cg);
    accumulate(g_f1, cg.input);
  }

  {
    const CostVolumeSpec spec =
        cfg.cost_mode == CostMode::cddc ? cddc_spec() : square_spec(cfg.search_radius());
    Tensor4<T> gc =
        cfg.activate_cost ? leaky_relu_backward(g_cost, tr.cost_raw, slope) : g_cost;
    CorrelateGrads<T> cg = correlate_backward(gc, tr.f1, tr.f_warp, spec);
    accumulate(g_f1, cg.f1);
    WarpGrads<T> wg = warp_backward(cg.f_warp, tr.f2, FlowField<T>(tr.up_flow), tr.level);
    accumulate(g_f2, wg.feature);
    g_up.flat() += wg.flow.flat();
  }

  if (!tr.has_prior) return std::nullopt;
  const std::string name = "upconv" + std::to_string(tr.level + 1);
  ConvGrads<T> ug = deconv2d_backward(g_up, tr.prior_flow, ws.at(name).weight, upconv_spec());
  add_conv_grads(grads, name, ug);
  return std::move(ug.input);
}

// Backward through one pyramid pass; level_grads[l] is dL/d(level-l feature).
template <typename T>
void pyramid_backward(const PyramidTrace<T>& tr, const WeightStore<T>& ws,
                      std::array<Tensor4<T>, 7>& level_grads, WeightStore<T>& grads) {
  const T slope = T(kLeakySlope);
  const auto& rows = pconv_rows();

  // pooling chain: level 6 -> 5 -> 4 -> conv level 3
  Tensor4<T> g;
  auto pool_step = [&](int level, const Shape4& in_shape) {
    Tensor4<T> up;
    if (!g.empty()) up = avgpool2_backward(g, in_shape);
    if (!level_grads[level].empty()) accumulate(up, level_grads[level]);
    g = std::move(up);
  };
  if (!level_grads[6].empty()) g = level_grads[6];
  Shape4 l5_shape = tr.conv_out[7].shape();
  l5_shape.h /= 4;
  l5_shape.w /= 4;
  Shape4 l4_shape = tr.conv_out[7].shape();
  l4_shape.h /= 2;
  l4_shape.w /= 2;
  pool_step(5, l5_shape);
  pool_step(4, l4_shape);
  // g now holds the level-4 gradient (if any); push into the conv stack
  Tensor4<T> gx;
  if (!g.empty()) gx = avgpool2_backward(g, tr.conv_out[7].shape());
  if (!level_grads[3].empty()) accumulate(gx, level_grads[3]);

  for (int i = 7; i >= 0; --i) {
    if (i == 4 && !level_grads[2].empty()) accumulate(gx, level_grads[2]);
    if (i == 1 && !level_grads[1].empty()) accumulate(gx, level_grads[1]);
    if (gx.empty()) continue;  // layer output unused by any decoded level
    gx = leaky_relu_backward(gx, tr.conv_out[i], slope);
    const Tensor4<T>& input = i == 0 ? tr.input : tr.conv_out[i - 1];
    ConvGrads<T> cg = conv2d_backward(
        gx, input, ws.at(rows[i].name).weight,
        pconv_spec(rows[i].in_ch, rows[i].out_ch, rows[i].stride));
    add_conv_grads(grads, rows[i].name, cg);
    gx = std::move(cg.input);
  }
}

}  // namespace detail

/// Backpropagates per-level flow gradients through the traced forward pass.
/// flow_grads maps level -> dL/dF_level; both pyramid passes share weights,
/// so their contributions sum into one gradient store.
template <typename T>
WeightStore<T> backward(const NetConfig& cfg, const WeightStore<T>& ws,
                        const ForwardTrace<T>& trace,
                        const std::map<int, Tensor4<T>>& flow_grads) {
  WeightStore<T> grads = ws.zero_clone();
  std::array<Tensor4<T>, 7> g_f1{}, g_f2{};

  Tensor4<T> g_prior;  // gradient flowing from finer into coarser flows
  for (auto it = trace.decode.rbegin(); it != trace.decode.rend(); ++it) {
    const DecodeTrace<T>& tr = *it;
    Tensor4<T> g_flow = g_prior;
    auto fg = flow_grads.find(tr.level);
    if (fg != flow_grads.end()) detail::accumulate(g_flow, fg->second);
    if (g_flow.empty()) g_flow = Tensor4<T>(tr.up_flow.shape());
    auto up = detail::decode_backward(tr, cfg, ws, g_flow, g_f1[tr.level], g_f2[tr.level],
                                      grads);
    g_prior = up ? std::move(*up) : Tensor4<T>();
  }

  detail::pyramid_backward(trace.pyr1, ws, g_f1, grads);
  detail::pyramid_backward(trace.pyr2, ws, g_f2, grads);
  return grads;
}

}  // namespace flowlite
