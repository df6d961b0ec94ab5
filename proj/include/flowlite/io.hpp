#pragma once

#include <string>

#include "flowlite/flowops.hpp"
#include "flowlite/net.hpp"
#include "flowlite/tensor.hpp"

namespace flowlite {

/// Middlebury-style flow container: float magic 202021.25, i32 width and
/// height, then row-major interleaved (u, v) float pairs. Little-endian
/// throughout. Values are pixel-unit displacements.
FlowField<float> read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField<float>& flow);

/// Binary PPM (P6, maxval 255) to a 1x3xHxW tensor scaled to [0,1], and back
/// (rounded to the nearest 8-bit value, clamped).
Tensor4<float> read_image(const std::string& path);
void write_image(const std::string& path, const Tensor4<float>& rgb);

/// Renders a pixel-unit flow with the standard 55-segment color wheel: hue
/// encodes direction, saturation magnitude/max. Zero flow maps to white.
/// max_magnitude <= 0 selects the 99th-percentile magnitude automatically.
Tensor4<float> flow_to_color(const FlowField<float>& flow, float max_magnitude = 0.0f);

/// The 55 wheel colors, RGB in [0,1], direction order.
RowMat<float> flow_color_wheel();

/// Weight container: magic "FFNW", u32 version 1, u32 tensor count, then per
/// tensor: u16 name length + name, u8 rank, u32 dims, u8 dtype (0 = f32),
/// raw little-endian values. Layer weights are stored as "<layer>.weight"
/// (rank 4) and "<layer>.bias" (rank 1) in store order.
void save_weights(const std::string& path, const WeightStore<float>& ws);

/// Loads and validates every tensor shape against the config's layer table;
/// mismatches report the layer name and both shapes.
WeightStore<float> load_weights(const std::string& path, const NetConfig& cfg);

}  // namespace flowlite
