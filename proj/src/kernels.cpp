#include "anl/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace anl::kernels {

namespace {

std::atomic<Exec> g_default{Exec::Parallel};

// Runs f(i) for i in [0, n). The parallel path must only be used when f
// writes disjoint outputs per index.
template <class F>
void for_range(std::int64_t n, Exec e, F&& f) {
    if (e == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) f(i);
    } else {
        for (std::int64_t i = 0; i < n; ++i) f(i);
    }
}

// Four independent accumulator chains; breaks the FMA latency dependency and
// keeps a fixed summation order.
double dot_unrolled(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

double dot_strided(const double* a, const double* b, int n, int stride_b) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i * stride_b];
        s1 += a[i + 1] * b[(i + 1) * stride_b];
        s2 += a[i + 2] * b[(i + 2) * stride_b];
        s3 += a[i + 3] * b[(i + 3) * stride_b];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i * stride_b];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace

Exec default_exec() { return g_default.load(std::memory_order_relaxed); }
void set_default_exec(Exec e) { g_default.store(e, std::memory_order_relaxed); }

void conv2d_forward(const double* in, const double* w, const double* b, double* out,
                    const ConvShape& s, Exec e) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::int64_t in_plane = static_cast<std::int64_t>(s.in_h) * s.in_w;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

    for_range(static_cast<std::int64_t>(s.n) * s.out_c, e, [&](std::int64_t idx) {
        const int n = static_cast<int>(idx / s.out_c);
        const int oc = static_cast<int>(idx % s.out_c);
        double* dst = out + (static_cast<std::int64_t>(n) * s.out_c + oc) * out_plane;
        const double bias = b ? b[oc] : 0.0;
        for (std::int64_t i = 0; i < out_plane; ++i) dst[i] = bias;
        for (int ic = 0; ic < s.in_c; ++ic) {
            const double* src = in + (static_cast<std::int64_t>(n) * s.in_c + ic) * in_plane;
            const double* ker = w + ((static_cast<std::int64_t>(oc) * s.in_c + ic) * s.k) * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                for (int kx = 0; kx < s.k; ++kx) {
                    const double wv = ker[ky * s.k + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        double* orow = dst + static_cast<std::int64_t>(oy) * ow;
                        const double* irow = src + static_cast<std::int64_t>(iy) * s.in_w;
                        // ox range with ix = ox*stride + kx - pad inside [0, in_w)
                        int ox0 = 0;
                        while (ox0 < ow && ox0 * s.stride + kx - s.pad < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * s.stride + kx - s.pad >= s.in_w) --ox1;
                        const int off = kx - s.pad;
                        if (s.stride == 1) {
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox + off];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox)
                                orow[ox] += wv * irow[ox * s.stride + off];
                        }
                    }
                }
            }
        }
    });
}

void conv2d_backward_input(const double* gout, const double* w, double* gin,
                           const ConvShape& s, Exec e) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::int64_t in_plane = static_cast<std::int64_t>(s.in_h) * s.in_w;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

    // Scatter form over rows; each task owns one full gin plane, so writes
    // stay disjoint across the parallel loop and the inner order is fixed.
    for_range(static_cast<std::int64_t>(s.n) * s.in_c, e, [&](std::int64_t idx) {
        const int n = static_cast<int>(idx / s.in_c);
        const int ic = static_cast<int>(idx % s.in_c);
        double* dst = gin + (static_cast<std::int64_t>(n) * s.in_c + ic) * in_plane;
        for (std::int64_t i = 0; i < in_plane; ++i) dst[i] = 0.0;
        for (int oc = 0; oc < s.out_c; ++oc) {
            const double* g = gout + (static_cast<std::int64_t>(n) * s.out_c + oc) * out_plane;
            const double* ker = w + ((static_cast<std::int64_t>(oc) * s.in_c + ic) * s.k) * s.k;
            for (int ky = 0; ky < s.k; ++ky) {
                for (int kx = 0; kx < s.k; ++kx) {
                    const double wv = ker[ky * s.k + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        double* drow = dst + static_cast<std::int64_t>(iy) * s.in_w;
                        const double* grow = g + static_cast<std::int64_t>(oy) * ow;
                        int ox0 = 0;
                        while (ox0 < ow && ox0 * s.stride + kx - s.pad < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * s.stride + kx - s.pad >= s.in_w) --ox1;
                        const int off = kx - s.pad;
                        if (s.stride == 1) {
                            for (int ox = ox0; ox < ox1; ++ox) drow[ox + off] += wv * grow[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox)
                                drow[ox * s.stride + off] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
}

void conv2d_backward_params(const double* in, const double* gout, double* gw, double* gb,
                            const ConvShape& s, Exec e) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::int64_t in_plane = static_cast<std::int64_t>(s.in_h) * s.in_w;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

    // One task per (oc, ic) weight tile; batch/spatial loops stay serial
    // inside so accumulation order is fixed.
    for_range(static_cast<std::int64_t>(s.out_c) * s.in_c, e, [&](std::int64_t idx) {
        const int oc = static_cast<int>(idx / s.in_c);
        const int ic = static_cast<int>(idx % s.in_c);
        double* wtile = gw + ((static_cast<std::int64_t>(oc) * s.in_c + ic) * s.k) * s.k;
        for (int ky = 0; ky < s.k; ++ky) {
            for (int kx = 0; kx < s.k; ++kx) {
                double acc = 0.0;
                for (int n = 0; n < s.n; ++n) {
                    const double* g = gout + (static_cast<std::int64_t>(n) * s.out_c + oc) * out_plane;
                    const double* src = in + (static_cast<std::int64_t>(n) * s.in_c + ic) * in_plane;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * s.stride + ky - s.pad;
                        if (iy < 0 || iy >= s.in_h) continue;
                        const double* grow = g + static_cast<std::int64_t>(oy) * ow;
                        const double* irow = src + static_cast<std::int64_t>(iy) * s.in_w;
                        int ox0 = 0;
                        while (ox0 < ow && ox0 * s.stride + kx - s.pad < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * s.stride + kx - s.pad >= s.in_w) --ox1;
                        const int off = kx - s.pad;
                        if (s.stride == 1) {
                            acc += dot_unrolled(grow + ox0, irow + ox0 + off, ox1 - ox0);
                        } else {
                            acc += dot_strided(grow + ox0, irow + ox0 * s.stride + off,
                                               ox1 - ox0, s.stride);
                        }
                    }
                }
                wtile[ky * s.k + kx] += acc;
            }
        }
    });

    if (gb) {
        for_range(s.out_c, e, [&](std::int64_t oc) {
            double acc = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const double* g = gout + (static_cast<std::int64_t>(n) * s.out_c + oc) * out_plane;
                for (std::int64_t i = 0; i < out_plane; ++i) acc += g[i];
            }
            gb[oc] += acc;
        });
    }
}

void linear_forward(const double* in, const double* w, const double* b, double* out,
                    int n, int in_f, int out_f, Exec e) {
    for_range(static_cast<std::int64_t>(n) * out_f, e, [&](std::int64_t idx) {
        const int i = static_cast<int>(idx / out_f);
        const int o = static_cast<int>(idx % out_f);
        const double* x = in + static_cast<std::int64_t>(i) * in_f;
        const double* wr = w + static_cast<std::int64_t>(o) * in_f;
        out[idx] = (b ? b[o] : 0.0) + dot_unrolled(wr, x, in_f);
    });
}

void linear_backward_input(const double* gout, const double* w, double* gin,
                           int n, int in_f, int out_f, Exec e) {
    for_range(static_cast<std::int64_t>(n) * in_f, e, [&](std::int64_t idx) {
        const int i = static_cast<int>(idx / in_f);
        const int j = static_cast<int>(idx % in_f);
        const double* g = gout + static_cast<std::int64_t>(i) * out_f;
        double acc = 0.0;
        for (int o = 0; o < out_f; ++o) acc += g[o] * w[static_cast<std::int64_t>(o) * in_f + j];
        gin[idx] = acc;
    });
}

void linear_backward_params(const double* in, const double* gout, double* gw, double* gb,
                            int n, int in_f, int out_f, Exec e) {
    for_range(out_f, e, [&](std::int64_t o) {
        double* wr = gw + o * in_f;
        double bacc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double g = gout[static_cast<std::int64_t>(i) * out_f + o];
            const double* x = in + static_cast<std::int64_t>(i) * in_f;
            for (int j = 0; j < in_f; ++j) wr[j] += g * x[j];
            bacc += g;
        }
        if (gb) gb[o] += bacc;
    });
}

void silu_forward(const double* in, double* out, std::int64_t n, Exec e) {
    for_range(n, e, [&](std::int64_t i) {
        const double x = in[i];
        out[i] = x / (1.0 + std::exp(-x));
    });
}

void silu_backward(const double* in, const double* gout, double* gin, std::int64_t n, Exec e) {
    for_range(n, e, [&](std::int64_t i) {
        const double x = in[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        gin[i] = gout[i] * s * (1.0 + x * (1.0 - s));
    });
}

void upsample2x_forward(const double* in, double* out, int n, int c, int h, int w, Exec e) {
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    const std::int64_t ip = static_cast<std::int64_t>(h) * w;
    const std::int64_t op = ip * 4;
    for_range(planes, e, [&](std::int64_t p) {
        const double* src = in + p * ip;
        double* dst = out + p * op;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double v = src[static_cast<std::int64_t>(y) * w + x];
                double* d = dst + (static_cast<std::int64_t>(2 * y) * (2 * w)) + 2 * x;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
        }
    });
}

void upsample2x_backward(const double* gout, double* gin, int n, int c, int h, int w, Exec e) {
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    const std::int64_t ip = static_cast<std::int64_t>(h) * w;
    const std::int64_t op = ip * 4;
    for_range(planes, e, [&](std::int64_t p) {
        const double* g = gout + p * op;
        double* dst = gin + p * ip;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double* s = g + (static_cast<std::int64_t>(2 * y) * (2 * w)) + 2 * x;
                dst[static_cast<std::int64_t>(y) * w + x] =
                    s[0] + s[1] + s[2 * w] + s[2 * w + 1];
            }
        }
    });
}

void gap_forward(const double* in, double* out, int n, int c, int hw, Exec e) {
    for_range(static_cast<std::int64_t>(n) * c, e, [&](std::int64_t idx) {
        const double* src = in + idx * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += src[i];
        out[idx] = acc / hw;
    });
}

void gap_backward(const double* gout, double* gin, int n, int c, int hw, Exec e) {
    for_range(static_cast<std::int64_t>(n) * c, e, [&](std::int64_t idx) {
        const double g = gout[idx] / hw;
        double* dst = gin + idx * hw;
        for (int i = 0; i < hw; ++i) dst[i] = g;
    });
}

void broadcast_mul_hw_forward(const double* in, const double* map, double* out,
                              int n, int c, int h, int w, Exec e) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for_range(static_cast<std::int64_t>(n) * c, e, [&](std::int64_t idx) {
        const std::int64_t ni = idx / c;
        const double* m = map + ni * plane;
        const double* src = in + idx * plane;
        double* dst = out + idx * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * m[i];
    });
}

void broadcast_mul_hw_backward(const double* gout, const double* map, double* gin,
                               int n, int c, int h, int w, Exec e) {
    // The map is a constant in the graph; only the feature gradient is needed.
    broadcast_mul_hw_forward(gout, map, gin, n, c, h, w, e);
}

void bilinear_resize(const double* in, int c, int ih, int iw, double* out, int oh, int ow,
                     Exec e) {
    if (ih == oh && iw == ow) {
        std::memcpy(out, in, sizeof(double) * static_cast<std::size_t>(c) * ih * iw);
        return;
    }
    const double sy = static_cast<double>(ih) / oh;
    const double sx = static_cast<double>(iw) / ow;
    for_range(static_cast<std::int64_t>(c) * oh, e, [&](std::int64_t idx) {
        const int ch = static_cast<int>(idx / oh);
        const int oy = static_cast<int>(idx % oh);
        const double* plane = in + static_cast<std::int64_t>(ch) * ih * iw;
        double* row = out + (static_cast<std::int64_t>(ch) * oh + oy) * ow;
        const double fy = (oy + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        const int y0c = std::clamp(y0, 0, ih - 1);
        const int y1c = std::clamp(y0 + 1, 0, ih - 1);
        for (int ox = 0; ox < ow; ++ox) {
            const double fx = (ox + 0.5) * sx - 0.5;
            const int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            const int x0c = std::clamp(x0, 0, iw - 1);
            const int x1c = std::clamp(x0 + 1, 0, iw - 1);
            const double v00 = plane[static_cast<std::int64_t>(y0c) * iw + x0c];
            const double v01 = plane[static_cast<std::int64_t>(y0c) * iw + x1c];
            const double v10 = plane[static_cast<std::int64_t>(y1c) * iw + x0c];
            const double v11 = plane[static_cast<std::int64_t>(y1c) * iw + x1c];
            const double top = v00 + (v01 - v00) * wx;
            const double bot = v10 + (v11 - v10) * wx;
            row[ox] = top + (bot - top) * wy;
        }
    });
}

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT of a length-n line (n power of two).
void fft_line(double* re, double* im, int n, std::int64_t stride) {
    // bit reversal
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i * stride], re[j * stride]);
            std::swap(im[i * stride], im[j * stride]);
        }
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / len;
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (int i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (int j = 0; j < len / 2; ++j) {
                const std::int64_t a = (i + j) * stride;
                const std::int64_t b = (i + j + len / 2) * stride;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

void dft_line(const double* in_re, const double* in_im, double* out_re, double* out_im,
              int n, std::int64_t stride) {
    for (int k = 0; k < n; ++k) {
        double ar = 0.0, ai = 0.0;
        for (int j = 0; j < n; ++j) {
            const double ang = -2.0 * M_PI * k * j / n;
            const double c = std::cos(ang), s = std::sin(ang);
            const double xr = in_re[j * stride];
            const double xi = in_im ? in_im[j * stride] : 0.0;
            ar += xr * c - xi * s;
            ai += xr * s + xi * c;
        }
        out_re[k * stride] = ar;
        out_im[k * stride] = ai;
    }
}

}  // namespace

void dft2d(const double* in, double* re, double* im, int h, int w, Exec e) {
    std::memcpy(re, in, sizeof(double) * static_cast<std::size_t>(h) * w);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) im[i] = 0.0;

    // rows
    if (is_pow2(w)) {
        for_range(h, e, [&](std::int64_t y) { fft_line(re + y * w, im + y * w, w, 1); });
    } else {
        std::vector<double> tr(static_cast<std::size_t>(h) * w), ti(tr.size());
        for_range(h, e, [&](std::int64_t y) {
            dft_line(re + y * w, im + y * w, tr.data() + y * w, ti.data() + y * w, w, 1);
        });
        std::memcpy(re, tr.data(), sizeof(double) * tr.size());
        std::memcpy(im, ti.data(), sizeof(double) * ti.size());
    }
    // columns
    if (is_pow2(h)) {
        for_range(w, e, [&](std::int64_t x) { fft_line(re + x, im + x, h, w); });
    } else {
        std::vector<double> tr(static_cast<std::size_t>(h) * w), ti(tr.size());
        for_range(w, e, [&](std::int64_t x) {
            dft_line(re + x, im + x, tr.data() + x, ti.data() + x, h, w);
        });
        std::memcpy(re, tr.data(), sizeof(double) * tr.size());
        std::memcpy(im, ti.data(), sizeof(double) * ti.size());
    }
}

double reduce_sum(const double* x, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

}  // namespace anl::kernels
