#pragma once

#include <string>

#include "anl/noise_probe.hpp"
#include "anl/tensor.hpp"

namespace anl {

// Per-pixel noise-intensity map in [0,1], derived from predicted noise by
// channel-averaged absolute value followed by min-max normalization.
struct AttentionMap {
    Tensor weights;  // H,W in [0,1]
    int source_timestep = 0;
};

// abs-mean over channels, then (m - min) / (max - min). A constant map
// normalizes to all-ones so downstream modulation degenerates to identity.
// Channel values are aggregated in sorted order, which makes the result
// independent of channel ordering down to the last bit.
AttentionMap build_attention(const PredictedNoise& noise);

// Bilinear resize to h x w, clamped back into [0,1].
AttentionMap resize_attention(const AttentionMap& a, int h, int w);

// 8-bit grayscale export, linear [0,1] -> [0,255].
void write_attention_png(const AttentionMap& a, const std::string& path);

}  // namespace anl
