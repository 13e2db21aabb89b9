#include "anl/attention.hpp"

#include <algorithm>
#include <cmath>

#include "anl/errors.hpp"
#include "anl/image_png.hpp"
#include "anl/kernels.hpp"

namespace anl {

AttentionMap build_attention(const PredictedNoise& noise) {
    const Tensor& v = noise.values;
    if (v.ndim() != 3) throw DataError("build_attention: expected C,H,W tensor");
    if (!v.all_finite()) throw DataError("build_attention: non-finite noise values");
    const int c = v.dim(0), h = v.dim(1), w = v.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    AttentionMap a;
    a.weights = Tensor({h, w});
    a.source_timestep = noise.timestep;

    // Channel magnitudes are summed in sorted order so that any permutation
    // of channels produces the identical floating-point result.
    std::vector<double> mags(static_cast<std::size_t>(c));
    double lo = 0.0, hi = 0.0;
    for (std::int64_t p = 0; p < plane; ++p) {
        for (int ch = 0; ch < c; ++ch)
            mags[static_cast<std::size_t>(ch)] = std::fabs(v[static_cast<std::int64_t>(ch) * plane + p]);
        std::sort(mags.begin(), mags.end());
        double sum = 0.0;
        for (double m : mags) sum += m;
        const double mean = sum / c;
        a.weights[p] = mean;
        if (p == 0) {
            lo = hi = mean;
        } else {
            lo = std::min(lo, mean);
            hi = std::max(hi, mean);
        }
    }

    if (hi == lo) {
        // Degenerate constant map: all-ones, i.e. identity modulation.
        a.weights.fill(1.0);
        return a;
    }
    const double span = hi - lo;
    for (std::int64_t p = 0; p < plane; ++p) a.weights[p] = (a.weights[p] - lo) / span;
    return a;
}

AttentionMap resize_attention(const AttentionMap& a, int h, int w) {
    if (h < 1 || w < 1) throw DataError("resize_attention: target geometry must be positive");
    AttentionMap out;
    out.source_timestep = a.source_timestep;
    out.weights = Tensor({h, w});
    kernels::bilinear_resize(a.weights.data(), 1, a.weights.dim(0), a.weights.dim(1),
                             out.weights.data(), h, w);
    for (std::int64_t i = 0; i < out.weights.size(); ++i)
        out.weights[i] = std::clamp(out.weights[i], 0.0, 1.0);
    return out;
}

void write_attention_png(const AttentionMap& a, const std::string& path) {
    Image8 img;
    img.width = a.weights.dim(1);
    img.height = a.weights.dim(0);
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (std::int64_t i = 0; i < a.weights.size(); ++i)
        img.pixels[static_cast<std::size_t>(i)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(a.weights[i], 0.0, 1.0) * 255.0));
    write_png(path, img);
}

}  // namespace anl
