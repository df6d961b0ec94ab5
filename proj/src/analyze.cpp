#include "flowlite/analyze.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace flowlite {

long long count_params(const NetConfig& cfg) {
  long long total = 0;
  for (const LayerInfo& li : layer_plan(cfg)) total += li.param_count();
  return total;
}

long long count_flops(const NetConfig& cfg, int height, int width) {
  require(height % 64 == 0 && width % 64 == 0,
          "count_flops: resolution must be divisible by 64, got ", height, "x", width);
  long long total = 0;
  for (const LayerInfo& li : layer_plan(cfg)) total += li.flops(height, width);
  return total;
}

CostReport report(const NetConfig& cfg, int height, int width) {
  require(height % 64 == 0 && width % 64 == 0,
          "report: resolution must be divisible by 64, got ", height, "x", width);
  CostReport rep;
  rep.height = height;
  rep.width = width;
  for (const LayerInfo& li : layer_plan(cfg)) {
    LayerCost row;
    row.name = li.name;
    row.block = li.block;
    row.level = li.level;
    row.params = li.param_count();
    row.flops = li.flops(height, width);
    rep.total_params += row.params;
    rep.total_flops += row.flops;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %-6s %5s %12s %16s\n", "layer", "module", "level",
                "params", "flops");
  os << buf;
  for (const LayerCost& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %-6s %5d %12lld %16lld\n", r.name.c_str(),
                  r.block.c_str(), r.level, r.params, r.flops);
    os << buf;
  }

  // block subtotals, hepp first then decode levels coarse to fine
  std::map<std::pair<int, std::string>, std::pair<long long, long long>> groups;
  for (const LayerCost& r : rows) {
    auto key = r.block == "hepp" ? std::make_pair(0, r.block)
                                 : std::make_pair(100 - r.level, r.block);
    groups[key].first += r.params;
    groups[key].second += r.flops;
  }
  os << "\n";
  for (const auto& [key, pf] : groups) {
    std::string label = key.second;
    if (key.second != "hepp") label += " L" + std::to_string(100 - key.first);
    std::snprintf(buf, sizeof(buf), "%-12s %25lld %16lld\n", label.c_str(), pf.first,
                  pf.second);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-12s %25lld %16lld\n", "total", total_params,
                total_flops);
  os << buf;
  std::snprintf(buf, sizeof(buf), "(%.2fM params, %.1fG multiply-adds at %dx%d)\n",
                total_params / 1e6, total_flops / 1e9, height, width);
  os << buf;
  return os.str();
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "layer,module,level,params,flops\n";
  for (const LayerCost& r : rows) {
    os << r.name << "," << r.block << "," << r.level << "," << r.params << "," << r.flops
       << "\n";
  }
  return os.str();
}

}  // namespace flowlite
