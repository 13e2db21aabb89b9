#include "anl/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "anl/errors.hpp"

namespace anl::nn {

using kernels::ConvShape;

Conv2d::Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad)
    : w({out_c, in_c, k, k}),
      b({out_c}),
      gw({out_c, in_c, k, k}),
      gb({out_c}),
      name_(std::move(name)),
      in_c_(in_c),
      out_c_(out_c),
      k_(k),
      stride_(stride),
      pad_(pad) {}

void Conv2d::init_he(Rng& rng) {
    const double scale = std::sqrt(2.0 / (in_c_ * k_ * k_));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.gaussian() * scale;
    b.fill(0.0);
}

void Conv2d::init_zero() {
    w.fill(0.0);
    b.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) {
    cached_in_ = x;
    ConvShape s{x.dim(0), in_c_, x.dim(2), x.dim(3), out_c_, k_, stride_, pad_};
    Tensor out({s.n, s.out_c, s.out_h(), s.out_w()});
    kernels::conv2d_forward(x.data(), w.data(), b.data(), out.data(), s);
    return out;
}

Tensor Conv2d::backward(const Tensor& gout) {
    const Tensor& x = cached_in_;
    ConvShape s{x.dim(0), in_c_, x.dim(2), x.dim(3), out_c_, k_, stride_, pad_};
    kernels::conv2d_backward_params(x.data(), gout.data(), gw.data(), gb.data(), s);
    Tensor gin(x.shape());
    kernels::conv2d_backward_input(gout.data(), w.data(), gin.data(), s);
    return gin;
}

void Conv2d::collect(std::vector<ParamRef>& out) {
    out.push_back({name_ + ".w", &w, &gw});
    out.push_back({name_ + ".b", &b, &gb});
}

Linear::Linear(std::string name, int in_f, int out_f)
    : w({out_f, in_f}), b({out_f}), gw({out_f, in_f}), gb({out_f}),
      name_(std::move(name)), in_f_(in_f), out_f_(out_f) {}

void Linear::init_he(Rng& rng) {
    const double scale = std::sqrt(2.0 / in_f_);
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.gaussian() * scale;
    b.fill(0.0);
}

void Linear::init_zero() {
    w.fill(0.0);
    b.fill(0.0);
}

Tensor Linear::forward(const Tensor& x) {
    cached_in_ = x;
    const int n = x.dim(0);
    Tensor out({n, out_f_});
    kernels::linear_forward(x.data(), w.data(), b.data(), out.data(), n, in_f_, out_f_);
    return out;
}

Tensor Linear::backward(const Tensor& gout) {
    const int n = cached_in_.dim(0);
    kernels::linear_backward_params(cached_in_.data(), gout.data(), gw.data(), gb.data(), n,
                                    in_f_, out_f_);
    Tensor gin(cached_in_.shape());
    kernels::linear_backward_input(gout.data(), w.data(), gin.data(), n, in_f_, out_f_);
    return gin;
}

void Linear::collect(std::vector<ParamRef>& out) {
    out.push_back({name_ + ".w", &w, &gw});
    out.push_back({name_ + ".b", &b, &gb});
}

Tensor SiLU::forward(const Tensor& x) {
    cached_in_ = x;
    Tensor out(x.shape());
    kernels::silu_forward(x.data(), out.data(), x.size());
    return out;
}

Tensor SiLU::backward(const Tensor& gout) {
    Tensor gin(cached_in_.shape());
    kernels::silu_backward(cached_in_.data(), gout.data(), gin.data(), cached_in_.size());
    return gin;
}

Tensor Upsample2x::forward(const Tensor& x) {
    n_ = x.dim(0);
    c_ = x.dim(1);
    h_ = x.dim(2);
    w_ = x.dim(3);
    Tensor out({n_, c_, 2 * h_, 2 * w_});
    kernels::upsample2x_forward(x.data(), out.data(), n_, c_, h_, w_);
    return out;
}

Tensor Upsample2x::backward(const Tensor& gout) {
    Tensor gin({n_, c_, h_, w_});
    kernels::upsample2x_backward(gout.data(), gin.data(), n_, c_, h_, w_);
    return gin;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    n_ = x.dim(0);
    c_ = x.dim(1);
    h_ = x.dim(2);
    w_ = x.dim(3);
    Tensor out({n_, c_});
    kernels::gap_forward(x.data(), out.data(), n_, c_, h_ * w_);
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& gout) {
    Tensor gin({n_, c_, h_, w_});
    kernels::gap_backward(gout.data(), gin.data(), n_, c_, h_ * w_);
    return gin;
}

Tensor sinusoidal_embedding(const std::vector<int>& t, int dim) {
    if (dim % 2 != 0) throw DataError("time embedding dim must be even");
    const int half = dim / 2;
    Tensor out({static_cast<int>(t.size()), dim});
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (int j = 0; j < half; ++j) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(j) / std::max(1, half - 1));
            const double arg = static_cast<double>(t[i]) * freq;
            out.at(static_cast<int>(i), j) = std::sin(arg);
            out.at(static_cast<int>(i), half + j) = std::cos(arg);
        }
    }
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    Tensor out = x;
    const int n = x.dim(0), c = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double v = bias.at(i, ch);
            double* dst = out.data() + (static_cast<std::int64_t>(i) * c + ch) * plane;
            for (std::int64_t p = 0; p < plane; ++p) dst[p] += v;
        }
    }
    return out;
}

Tensor channel_bias_grad(const Tensor& gout) {
    const int n = gout.dim(0), c = gout.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(gout.dim(2)) * gout.dim(3);
    Tensor g({n, c});
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double* src = gout.data() + (static_cast<std::int64_t>(i) * c + ch) * plane;
            double acc = 0.0;
            for (std::int64_t p = 0; p < plane; ++p) acc += src[p];
            g.at(i, ch) = acc;
        }
    }
    return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor out({n, ca + cb, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<std::int64_t>(i) * (ca + cb) * plane,
                    a.data() + static_cast<std::int64_t>(i) * ca * plane,
                    sizeof(double) * static_cast<std::size_t>(ca * plane));
        std::memcpy(out.data() + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane,
                    b.data() + static_cast<std::int64_t>(i) * cb * plane,
                    sizeof(double) * static_cast<std::size_t>(cb * plane));
    }
    return out;
}

void split_channels(const Tensor& g, int c_a, Tensor& ga, Tensor& gb) {
    const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
    const int c_b = c - c_a;
    ga = Tensor({n, c_a, h, w});
    gb = Tensor({n, c_b, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::memcpy(ga.data() + static_cast<std::int64_t>(i) * c_a * plane,
                    g.data() + static_cast<std::int64_t>(i) * c * plane,
                    sizeof(double) * static_cast<std::size_t>(c_a * plane));
        std::memcpy(gb.data() + static_cast<std::int64_t>(i) * c_b * plane,
                    g.data() + (static_cast<std::int64_t>(i) * c + c_a) * plane,
                    sizeof(double) * static_cast<std::size_t>(c_b * plane));
    }
}

Adam::Adam(std::vector<ParamRef> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.value->size()), 0.0);
        v_.emplace_back(static_cast<std::size_t>(p.value->size()), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.grad->fill(0.0);
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        double* th = params_[i].value->data();
        const double* g = params_[i].grad->data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const std::int64_t n = params_[i].value->size();
        for (std::int64_t j = 0; j < n; ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            th[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

std::int64_t Adam::param_count() const { return anl::nn::param_count(params_); }

std::int64_t param_count(const std::vector<ParamRef>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.value->size();
    return n;
}

}  // namespace anl::nn
