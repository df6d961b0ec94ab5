#pragma once

#include <array>
#include <string>
#include <vector>

#include "flowlite/tensor.hpp"

namespace flowlite {

/// Cost volume construction variant. `cddc` is the 53-offset center-dense
/// dilated pattern; the square modes use the full (2r+1)^2 window.
enum class CostMode { cddc, square_r3, square_r4 };

inline const char* cost_mode_name(CostMode m) {
  switch (m) {
    case CostMode::cddc: return "cddc";
    case CostMode::square_r3: return "r3";
    case CostMode::square_r4: return "r4";
  }
  return "?";
}

/// Structural knobs of the network. The decoder is a fixed 96-channel
/// shuffle-block stack; `decoder_groups` sets the group count of its three
/// middle convolutions. Decode levels run from `coarsest_level` down to
/// `finest_level` (default 6..2).
struct NetConfig {
  CostMode cost_mode = CostMode::cddc;
  int decoder_groups = 3;
  int coarsest_level = 6;
  int finest_level = 2;
  bool normalize_input = true;  // subtract per-pair channel means
  bool activate_cost = true;    // leaky ReLU on the cost volume

  void validate() const {
    require(decoder_groups == 1 || decoder_groups == 2 || decoder_groups == 3 ||
                decoder_groups == 4 || decoder_groups == 6,
            "decoder_groups must be one of {1,2,3,4,6}, got ", decoder_groups);
    require(coarsest_level == 6, "coarsest decode level must be 6, got ", coarsest_level);
    require(finest_level >= 2 && finest_level <= coarsest_level,
            "finest decode level must lie in [2, ", coarsest_level, "], got ", finest_level);
  }

  int cost_channels() const {
    switch (cost_mode) {
      case CostMode::cddc: return 53;
      case CostMode::square_r3: return 49;
      case CostMode::square_r4: return 81;
    }
    return 0;
  }

  int search_radius() const { return cost_mode == CostMode::square_r3 ? 3 : 4; }

  /// Channels entering the decoder: 32 context + cost volume + 2 flow.
  int decoder_input_channels() const { return 32 + cost_channels() + 2; }

  /// Pyramid feature channels per level (level 1 is 1/2 resolution).
  static int level_channels(int level) {
    static constexpr std::array<int, 7> ch = {0, 16, 32, 64, 64, 64, 64};
    require(level >= 1 && level <= 6, "pyramid level must lie in [1,6], got ", level);
    return ch[level];
  }
};

enum class LayerKind { Conv, Deconv, Pool, Warp, Corr, Shuffle };

/// One row of the static layer table: geometry plus bookkeeping (which block
/// it belongs to, how many times it runs per forward pass, and the spatial
/// downscale factor of its output relative to the full input resolution).
struct LayerInfo {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::string block;  // "hepp" | "mfc" | "sbd"
  int level = 0;
  int in_ch = 0, out_ch = 0;
  int kh = 1, kw = 1, stride = 1, padding = 0, groups = 1;
  bool has_bias = false;
  int runs = 1;
  int out_div = 1;

  bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Deconv; }

  long long param_count() const {
    if (!has_params()) return 0;
    long long p = static_cast<long long>(kh) * kw * (in_ch / groups) * out_ch;
    if (has_bias) p += out_ch;
    return p;
  }

  /// Multiply-add count at full input resolution height x width. Pooling,
  /// activations and shuffles are counted as zero-MAC.
  long long flops(Index height, Index width) const {
    const long long area = static_cast<long long>(height / out_div) * (width / out_div);
    long long per_position = 0;
    switch (kind) {
      case LayerKind::Conv:
      case LayerKind::Deconv:
        per_position = static_cast<long long>(kh) * kw * (in_ch / groups) * out_ch;
        break;
      case LayerKind::Corr:
        per_position = static_cast<long long>(in_ch) * out_ch;
        break;
      case LayerKind::Warp:
        per_position = 4LL * in_ch;
        break;
      case LayerKind::Pool:
      case LayerKind::Shuffle:
        return 0;
    }
    return per_position * area * runs;
  }
};

/// The full layer table in execution order: pyramid extractor first, then
/// decode levels coarse to fine. Weight-file ordering, parameter counting
/// and the forward pass all derive from this single table.
inline std::vector<LayerInfo> layer_plan(const NetConfig& cfg) {
  cfg.validate();
  std::vector<LayerInfo> plan;

  auto conv = [&](std::string name, const char* block, int level, int in_ch, int out_ch,
                  int stride, int div, int groups = 1) {
    LayerInfo li;
    li.name = std::move(name);
    li.kind = LayerKind::Conv;
    li.block = block;
    li.level = level;
    li.in_ch = in_ch;
    li.out_ch = out_ch;
    li.kh = li.kw = 3;
    li.stride = stride;
    li.padding = 1;
    li.groups = groups;
    li.has_bias = true;
    li.runs = std::string_view(block) == "hepp" ? 2 : 1;
    li.out_div = div;
    plan.push_back(std::move(li));
  };

  conv("pconv1_1", "hepp", 1, 3, 16, 2, 2);
  conv("pconv1_2", "hepp", 1, 16, 16, 1, 2);
  conv("pconv2_1", "hepp", 2, 16, 32, 2, 4);
  conv("pconv2_2", "hepp", 2, 32, 32, 1, 4);
  conv("pconv2_3", "hepp", 2, 32, 32, 1, 4);
  conv("pconv3_1", "hepp", 3, 32, 64, 2, 8);
  conv("pconv3_2", "hepp", 3, 64, 64, 1, 8);
  conv("pconv3_3", "hepp", 3, 64, 64, 1, 8);
  for (int l = 4; l <= 6; ++l) {
    LayerInfo li;
    li.name = "pool" + std::to_string(l);
    li.kind = LayerKind::Pool;
    li.block = "hepp";
    li.level = l;
    li.in_ch = li.out_ch = 64;
    li.kh = li.kw = 2;
    li.stride = 2;
    li.runs = 2;
    li.out_div = 1 << l;
    plan.push_back(std::move(li));
  }

  for (int l = cfg.coarsest_level; l >= cfg.finest_level; --l) {
    const int div = 1 << l;
    const int fch = NetConfig::level_channels(l);
    const std::string ls = std::to_string(l);

    if (l < cfg.coarsest_level) {
      LayerInfo up;
      up.name = "upconv" + std::to_string(l + 1);
      up.kind = LayerKind::Deconv;
      up.block = "mfc";
      up.level = l;
      up.in_ch = up.out_ch = 2;
      up.kh = up.kw = 4;
      up.stride = 2;
      up.padding = 1;
      up.has_bias = true;
      up.out_div = div;
      plan.push_back(std::move(up));
    }

    LayerInfo wp;
    wp.name = "warp" + ls;
    wp.kind = LayerKind::Warp;
    wp.block = "mfc";
    wp.level = l;
    wp.in_ch = wp.out_ch = fch;
    wp.out_div = div;
    plan.push_back(std::move(wp));

    LayerInfo co;
    co.name = (cfg.cost_mode == CostMode::cddc ? "cddc" : "corr") + ls;
    co.kind = LayerKind::Corr;
    co.block = "mfc";
    co.level = l;
    co.in_ch = fch;
    co.out_ch = cfg.cost_channels();
    co.out_div = div;
    plan.push_back(std::move(co));

    conv("rconv" + ls, "mfc", l, fch, 32, 1, div);

    const int dec_in = cfg.decoder_input_channels();
    conv("fconv" + ls + "_1", "sbd", l, dec_in, 96, 1, div);
    for (int i = 2; i <= 4; ++i) {
      conv("fconv" + ls + "_" + std::to_string(i), "sbd", l, 96, 96, 1, div,
           cfg.decoder_groups);
      LayerInfo sh;
      sh.name = "shuffle" + ls + "_" + std::to_string(i);
      sh.kind = LayerKind::Shuffle;
      sh.block = "sbd";
      sh.level = l;
      sh.in_ch = sh.out_ch = 96;
      sh.groups = cfg.decoder_groups;
      sh.out_div = div;
      plan.push_back(std::move(sh));
    }
    conv("fconv" + ls + "_5", "sbd", l, 96, 64, 1, div);
    conv("fconv" + ls + "_6", "sbd", l, 64, 32, 1, div);
    conv("fconv" + ls + "_7", "sbd", l, 32, 2, 1, div);
  }
  return plan;
}

}  // namespace flowlite
