#pragma once

#include <cstdint>

namespace anl::kernels {

// Every kernel has a serial reference path and an OpenMP path. Parallel loops
// run only over independent output elements and each element is accumulated
// in the same inner order as the serial path, so both paths produce
// bit-identical results for any thread count. Tests assert exact equality.
enum class Exec { Serial, Parallel };

Exec default_exec();
void set_default_exec(Exec e);

struct ConvShape {
    int n = 1;      // batch
    int in_c = 1;
    int in_h = 1;
    int in_w = 1;
    int out_c = 1;
    int k = 3;      // square kernel
    int stride = 1;
    int pad = 0;

    int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
};

// in:  n * in_c * in_h * in_w
// w:   out_c * in_c * k * k
// b:   out_c (may be nullptr)
// out: n * out_c * out_h * out_w
void conv2d_forward(const double* in, const double* w, const double* b, double* out,
                    const ConvShape& s, Exec e = default_exec());

void conv2d_backward_input(const double* gout, const double* w, double* gin,
                           const ConvShape& s, Exec e = default_exec());

// gw/gb are accumulated into (callers zero them at the start of a step).
void conv2d_backward_params(const double* in, const double* gout, double* gw, double* gb,
                            const ConvShape& s, Exec e = default_exec());

// in: n * in_f, w: out_f * in_f, b: out_f, out: n * out_f
void linear_forward(const double* in, const double* w, const double* b, double* out,
                    int n, int in_f, int out_f, Exec e = default_exec());
void linear_backward_input(const double* gout, const double* w, double* gin,
                           int n, int in_f, int out_f, Exec e = default_exec());
void linear_backward_params(const double* in, const double* gout, double* gw, double* gb,
                            int n, int in_f, int out_f, Exec e = default_exec());

void silu_forward(const double* in, double* out, std::int64_t n, Exec e = default_exec());
void silu_backward(const double* in, const double* gout, double* gin, std::int64_t n,
                   Exec e = default_exec());

// Nearest-neighbour 2x upsample, NCHW.
void upsample2x_forward(const double* in, double* out, int n, int c, int h, int w,
                        Exec e = default_exec());
void upsample2x_backward(const double* gout, double* gin, int n, int c, int h, int w,
                         Exec e = default_exec());

// out: n * c (mean over h*w)
void gap_forward(const double* in, double* out, int n, int c, int hw, Exec e = default_exec());
void gap_backward(const double* gout, double* gin, int n, int c, int hw, Exec e = default_exec());

// Per-sample H*W map broadcast-multiplied over all channels.
// in/out: n*c*h*w, map: n*h*w.
void broadcast_mul_hw_forward(const double* in, const double* map, double* out,
                              int n, int c, int h, int w, Exec e = default_exec());
void broadcast_mul_hw_backward(const double* gout, const double* map, double* gin,
                               int n, int c, int h, int w, Exec e = default_exec());

// Bilinear resize with pixel-center alignment and edge clamping, per channel.
// in: c * ih * iw, out: c * oh * ow.
void bilinear_resize(const double* in, int c, int ih, int iw, double* out, int oh, int ow,
                     Exec e = default_exec());

// Forward 2-D DFT of a real field; radix-2 FFT rows/columns when the side is a
// power of two, direct DFT otherwise. re/im: h*w.
void dft2d(const double* in, double* re, double* im, int h, int w, Exec e = default_exec());

// Fixed-order serial reduction; kept out of the parallel switch so that sums
// never depend on thread count.
double reduce_sum(const double* x, std::int64_t n);

}  // namespace anl::kernels
