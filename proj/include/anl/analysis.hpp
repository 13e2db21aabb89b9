#pragma once

#include <string>
#include <vector>

#include "anl/noise_probe.hpp"
#include "anl/tensor.hpp"

namespace anl {

// Radially averaged power spectrum. Bin k covers integer radius k in
// centered frequency coordinates; centers are normalized to cycles/pixel so
// they span [0, 0.5). Bin count = floor(min(H,W)/2); the DC bin is kept but
// excluded from flatness statistics.
struct PsdCurve {
    std::vector<double> radial_bins;  // normalized bin centers
    std::vector<double> power;        // mean |X|^2 per annulus
};

// Per-channel mean removed, 2-D DFT per channel, squared magnitude averaged
// over channels, then annular averaging.
PsdCurve radial_psd(const PredictedNoise& noise);
PsdCurve radial_psd_field(const Tensor& chw);

// std/mean of the power over the mid band [lo_frac, hi_frac) of the non-DC
// bins. Flat (white) spectra give small values.
double flatness_ratio(const PsdCurve& curve, double lo_frac = 0.25, double hi_frac = 0.75);

// Mean of mid-band power.
double midband_power(const PsdCurve& curve, double lo_frac = 0.25, double hi_frac = 0.75);

// Per-window Shannon entropy (bits) of the channel-mean |noise| field,
// min-max scaled per image, histogrammed into equal-width bins over [0,1].
struct EntropyMap {
    Tensor values;  // grid of window entropies
    int window = 16;
    int stride = 8;
    int bins = 32;
};

EntropyMap local_entropy_map(const PredictedNoise& noise, int window = 16, int stride = 8,
                             int bins = 32);

// One-sided Mann-Whitney rank test (normal approximation, midranks for
// ties). Returns the p-value for H1: samples in `a` tend to be larger than
// samples in `b`.
double rank_sum_p_greater(const std::vector<double>& a, const std::vector<double>& b);

void write_psd_csv(const PsdCurve& c, const std::string& path);
PsdCurve read_psd_csv(const std::string& path);
void write_entropy_csv(const EntropyMap& m, const std::string& path);

// Simple log-log polyline plot of one or more PSD curves, 8-bit grayscale.
void write_psd_plot_png(const std::vector<PsdCurve>& curves, const std::string& path);
void write_entropy_png(const EntropyMap& m, const std::string& path);

}  // namespace anl
