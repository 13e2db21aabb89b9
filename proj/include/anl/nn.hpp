#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anl/kernels.hpp"
#include "anl/rng.hpp"
#include "anl/tensor.hpp"

namespace anl::nn {

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

// Layers cache what backward needs during forward, so one instance handles
// one site in the graph. Gradients accumulate; call zero_grad between steps.

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad);

    void init_he(Rng& rng);
    void init_zero();

    Tensor forward(const Tensor& x);           // x: N,C,H,W
    Tensor backward(const Tensor& gout);       // returns dL/dx

    void collect(std::vector<ParamRef>& out);

    int in_c() const { return in_c_; }
    int out_c() const { return out_c_; }

    Tensor w, b, gw, gb;

private:
    std::string name_;
    int in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    Tensor cached_in_;
};

class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_f, int out_f);

    void init_he(Rng& rng);
    void init_zero();

    Tensor forward(const Tensor& x);           // x: N,F
    Tensor backward(const Tensor& gout);

    void collect(std::vector<ParamRef>& out);

    Tensor w, b, gw, gb;

private:
    std::string name_;
    int in_f_ = 0, out_f_ = 0;
    Tensor cached_in_;
};

class SiLU {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gout);

private:
    Tensor cached_in_;
};

class Upsample2x {
public:
    Tensor forward(const Tensor& x);           // N,C,H,W -> N,C,2H,2W
    Tensor backward(const Tensor& gout);

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

class GlobalAvgPool {
public:
    Tensor forward(const Tensor& x);           // N,C,H,W -> N,C
    Tensor backward(const Tensor& gout);

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

// Sinusoidal embedding of integer timesteps; dim must be even.
Tensor sinusoidal_embedding(const std::vector<int>& t, int dim);

// Adds a per-channel bias (N,C) to a feature map (N,C,H,W). Backward splits
// the gradient between the map (identity) and the bias (spatial sum).
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor channel_bias_grad(const Tensor& gout);  // N,C,H,W -> N,C

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int c_a, Tensor& ga, Tensor& gb);

class Adam {
public:
    Adam() = default;
    Adam(std::vector<ParamRef> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void zero_grad();
    void step();
    void set_lr(double lr) { lr_ = lr; }
    std::int64_t param_count() const;

private:
    std::vector<ParamRef> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
};

std::int64_t param_count(const std::vector<ParamRef>& params);

}  // namespace anl::nn
