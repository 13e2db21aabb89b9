#include "anl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "anl/errors.hpp"
#include "anl/image_png.hpp"
#include "anl/kernels.hpp"

namespace anl {

PsdCurve radial_psd_field(const Tensor& chw) {
    if (chw.ndim() != 3) throw DataError("radial_psd: expected C,H,W tensor");
    if (!chw.all_finite()) throw DataError("radial_psd: non-finite input");
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (h < 2 || w < 2) throw DataError("radial_psd: degenerate geometry");

    const int min_hw = std::min(h, w);
    const int n_bins = min_hw / 2;
    std::vector<double> acc(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(n_bins), 0);

    std::vector<double> re(static_cast<std::size_t>(h) * w), im(re.size());
    Tensor centered({h, w});
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = chw.data() + static_cast<std::int64_t>(ch) * h * w;
        double mean = 0.0;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) mean += plane[i];
        mean /= static_cast<double>(h) * w;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i)
            centered[i] = plane[i] - mean;
        kernels::dft2d(centered.data(), re.data(), im.data(), h, w);

        for (int v = 0; v < h; ++v) {
            const int fv = v <= h / 2 ? v : v - h;
            for (int u = 0; u < w; ++u) {
                const int fu = u <= w / 2 ? u : u - w;
                // scale so rectangular images bin by normalized frequency
                const double ry = static_cast<double>(fv) * min_hw / h;
                const double rx = static_cast<double>(fu) * min_hw / w;
                const int bin = static_cast<int>(std::lround(std::sqrt(rx * rx + ry * ry)));
                if (bin >= n_bins) continue;
                const double p = re[static_cast<std::size_t>(v) * w + u] *
                                     re[static_cast<std::size_t>(v) * w + u] +
                                 im[static_cast<std::size_t>(v) * w + u] *
                                     im[static_cast<std::size_t>(v) * w + u];
                // channel contributions accumulate; divided by c at the end
                acc[static_cast<std::size_t>(bin)] += p;
                if (ch == 0) ++count[static_cast<std::size_t>(bin)];
            }
        }
    }

    PsdCurve curve;
    curve.radial_bins.resize(static_cast<std::size_t>(n_bins));
    curve.power.resize(static_cast<std::size_t>(n_bins));
    for (int k = 0; k < n_bins; ++k) {
        curve.radial_bins[static_cast<std::size_t>(k)] =
            static_cast<double>(k) / static_cast<double>(min_hw);
        curve.power[static_cast<std::size_t>(k)] =
            count[static_cast<std::size_t>(k)] > 0
                ? acc[static_cast<std::size_t>(k)] /
                      (static_cast<double>(count[static_cast<std::size_t>(k)]) * c)
                : 0.0;
    }
    return curve;
}

PsdCurve radial_psd(const PredictedNoise& noise) { return radial_psd_field(noise.values); }

namespace {
std::pair<int, int> midband_range(const PsdCurve& curve, double lo_frac, double hi_frac) {
    const int n = static_cast<int>(curve.power.size());
    int lo = std::max(1, static_cast<int>(std::floor(lo_frac * n)));
    int hi = std::min(n, static_cast<int>(std::ceil(hi_frac * n)));
    if (hi <= lo) throw DataError("flatness: empty mid band");
    return {lo, hi};
}
}  // namespace

double flatness_ratio(const PsdCurve& curve, double lo_frac, double hi_frac) {
    auto [lo, hi] = midband_range(curve, lo_frac, hi_frac);
    double mean = 0.0;
    for (int k = lo; k < hi; ++k) mean += curve.power[static_cast<std::size_t>(k)];
    mean /= (hi - lo);
    double var = 0.0;
    for (int k = lo; k < hi; ++k) {
        const double d = curve.power[static_cast<std::size_t>(k)] - mean;
        var += d * d;
    }
    var /= (hi - lo);
    if (mean <= 0.0) return 0.0;
    return std::sqrt(var) / mean;
}

double midband_power(const PsdCurve& curve, double lo_frac, double hi_frac) {
    auto [lo, hi] = midband_range(curve, lo_frac, hi_frac);
    double mean = 0.0;
    for (int k = lo; k < hi; ++k) mean += curve.power[static_cast<std::size_t>(k)];
    return mean / (hi - lo);
}

EntropyMap local_entropy_map(const PredictedNoise& noise, int window, int stride, int bins) {
    if (window < 1 || stride < 1) throw DataError("local_entropy_map: window/stride must be >= 1");
    if (bins < 2) throw DataError("local_entropy_map: need >= 2 bins");
    const Tensor& v = noise.values;
    const int c = v.dim(0), h = v.dim(1), w = v.dim(2);
    if (window > std::min(h, w)) throw DataError("local_entropy_map: window exceeds image");

    // channel-mean |noise|, min-max scaled per image
    Tensor field({h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (std::int64_t p = 0; p < plane; ++p) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += std::fabs(v[static_cast<std::int64_t>(ch) * plane + p]);
        field[p] = s / c;
    }
    double lo = field[0], hi = field[0];
    for (std::int64_t p = 0; p < plane; ++p) {
        lo = std::min(lo, field[p]);
        hi = std::max(hi, field[p]);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::int64_t p = 0; p < plane; ++p) field[p] = (field[p] - lo) / span;

    const int gh = (h - window) / stride + 1;
    const int gw = (w - window) / stride + 1;
    EntropyMap m;
    m.window = window;
    m.stride = stride;
    m.bins = bins;
    m.values = Tensor({gh, gw});

    std::vector<std::int64_t> hist(static_cast<std::size_t>(bins));
    const double total = static_cast<double>(window) * window;
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            std::fill(hist.begin(), hist.end(), 0);
            for (int y = 0; y < window; ++y)
                for (int x = 0; x < window; ++x) {
                    const double val = field.at(gy * stride + y, gx * stride + x);
                    int b = static_cast<int>(val * bins);
                    if (b >= bins) b = bins - 1;  // val == 1.0 lands in the last bin
                    ++hist[static_cast<std::size_t>(b)];
                }
            double entropy = 0.0;
            for (int b = 0; b < bins; ++b) {
                if (hist[static_cast<std::size_t>(b)] == 0) continue;
                const double p = static_cast<double>(hist[static_cast<std::size_t>(b)]) / total;
                entropy -= p * std::log2(p);
            }
            m.values.at(gy, gx) = entropy;
        }
    }
    return m;
}

double rank_sum_p_greater(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw DataError("rank test: empty sample");
    struct Item {
        double v;
        int group;  // 0 = a, 1 = b
    };
    std::vector<Item> all;
    all.reserve(a.size() + b.size());
    for (double v : a) all.push_back({v, 0});
    for (double v : b) all.push_back({v, 1});
    std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });

    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    const double n = n1 + n2;

    // midranks with tie correction
    double rank_sum_a = 0.0;
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j + 1 < all.size() && all[j + 1].v == all[i].v) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k)
            if (all[k].group == 0) rank_sum_a += midrank;
        i = j + 1;
    }

    const double u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    const double mean_u = n1 * n2 / 2.0;
    const double var_u = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var_u <= 0.0) return 1.0;
    // continuity correction, one-sided H1: a > b
    const double z = (u - mean_u - 0.5) / std::sqrt(var_u);
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

void write_psd_csv(const PsdCurve& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write: " + path);
    f << "bin,power\n";
    char buf[80];
    for (std::size_t i = 0; i < c.power.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g", c.radial_bins[i], c.power[i]);
        f << buf << "\n";
    }
}

PsdCurve read_psd_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read: " + path);
    PsdCurve c;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("bad psd csv line: " + line);
        c.radial_bins.push_back(std::stod(line.substr(0, comma)));
        c.power.push_back(std::stod(line.substr(comma + 1)));
    }
    return c;
}

void write_entropy_csv(const EntropyMap& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write: " + path);
    char buf[40];
    for (int y = 0; y < m.values.dim(0); ++y) {
        for (int x = 0; x < m.values.dim(1); ++x) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.values.at(y, x));
            f << (x ? "," : "") << buf;
        }
        f << "\n";
    }
}

void write_psd_plot_png(const std::vector<PsdCurve>& curves, const std::string& path) {
    const int W = 480, H = 360, margin = 30;
    Image8 img;
    img.width = W;
    img.height = H;
    img.channels = 1;
    img.pixels.assign(static_cast<std::size_t>(W) * H, 255);

    auto put = [&](int x, int y, std::uint8_t v) {
        if (x >= 0 && x < W && y >= 0 && y < H)
            img.pixels[static_cast<std::size_t>(y) * W + x] = v;
    };
    for (int x = margin; x < W - margin; ++x) {
        put(x, H - margin, 0);
        put(x, margin, 0);
    }
    for (int y = margin; y < H - margin; ++y) {
        put(margin, y, 0);
        put(W - margin, y, 0);
    }

    double lo = 1e300, hi = -1e300;
    for (const auto& c : curves)
        for (std::size_t i = 1; i < c.power.size(); ++i)
            if (c.power[i] > 0) {
                lo = std::min(lo, std::log10(c.power[i]));
                hi = std::max(hi, std::log10(c.power[i]));
            }
    if (hi <= lo) hi = lo + 1.0;

    int shade = 0;
    for (const auto& c : curves) {
        int px = -1, py = -1;
        for (std::size_t i = 1; i < c.power.size(); ++i) {
            if (c.power[i] <= 0 || c.radial_bins[i] <= 0) continue;
            const double fx = (std::log10(c.radial_bins[i]) - std::log10(c.radial_bins[1])) /
                              (std::log10(0.5) - std::log10(c.radial_bins[1]) + 1e-12);
            const double fy = (std::log10(c.power[i]) - lo) / (hi - lo);
            const int x = margin + static_cast<int>(fx * (W - 2 * margin));
            const int y = H - margin - static_cast<int>(fy * (H - 2 * margin));
            if (px >= 0) {
                const int steps = std::max(std::abs(x - px), std::abs(y - py)) + 1;
                for (int s = 0; s <= steps; ++s)
                    put(px + (x - px) * s / steps, py + (y - py) * s / steps,
                        static_cast<std::uint8_t>(shade));
            }
            px = x;
            py = y;
        }
        shade = std::min(200, shade + 120);
    }
    write_png(path, img);
}

void write_entropy_png(const EntropyMap& m, const std::string& path) {
    const double max_e = std::log2(static_cast<double>(m.bins));
    Image8 img;
    img.width = m.values.dim(1);
    img.height = m.values.dim(0);
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (std::int64_t i = 0; i < m.values.size(); ++i)
        img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(
            std::lround(std::clamp(m.values[i] / max_e, 0.0, 1.0) * 255.0));
    write_png(path, img);
}

}  // namespace anl
