#pragma once

#include <string>
#include <vector>

#include "flowlite/arch.hpp"

namespace flowlite {

struct LayerCost {
  std::string name;
  std::string block;
  int level = 0;
  long long params = 0;
  long long flops = 0;
};

/// Per-layer parameter and multiply-add accounting at a fixed resolution.
/// Parameters are resolution-independent; FLOPs scale with each layer's own
/// output area.
struct CostReport {
  std::vector<LayerCost> rows;
  long long total_params = 0;
  long long total_flops = 0;
  int height = 0, width = 0;

  std::string to_text() const;
  std::string to_csv() const;  // header: layer,module,level,params,flops
};

long long count_params(const NetConfig& cfg);

/// Multiply-add count for one forward pass; height and width must be
/// divisible by 64. Pyramid layers run on both images.
long long count_flops(const NetConfig& cfg, int height, int width);

CostReport report(const NetConfig& cfg, int height, int width);

}  // namespace flowlite
