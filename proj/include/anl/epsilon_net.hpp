#pragma once

#include <memory>
#include <string>
#include <vector>

#include "anl/estimator.hpp"
#include "anl/nn.hpp"
#include "anl/rng.hpp"
#include "anl/schedule.hpp"
#include "anl/tensor.hpp"

namespace anl {

struct EpsilonNetConfig {
    int channels = 1;
    int image_hw = 32;
    int base_width = 8;   // level i has width base_width << i
    int levels = 2;       // >= 1; each extra level halves resolution once
    int time_dim = 32;
    int out_mult = 1;     // 1 -> C output channels, 2 -> 2C (noise + extra)
};

// Residual block with a timestep-embedding channel bias between the convs.
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(const std::string& name, int channels, int time_dim);

    void init(Rng& rng);
    // temb: N x time_dim (shared trunk output)
    Tensor forward(const Tensor& x, const Tensor& temb);
    // Returns dL/dx; adds this block's dL/dtemb into gtemb.
    Tensor backward(const Tensor& gout, Tensor& gtemb);
    void collect(std::vector<nn::ParamRef>& out);

private:
    nn::Conv2d conv1_, conv2_;
    nn::Linear proj_;
    nn::SiLU act1_, act2_;
};

// Small U-shaped encoder/decoder predicting the noise content of x at step t.
class EpsilonNet {
public:
    EpsilonNet() = default;
    explicit EpsilonNet(const EpsilonNetConfig& cfg);

    void init(Rng& rng);

    Tensor forward(const Tensor& x, const std::vector<int>& t);
    Tensor backward(const Tensor& gout);

    std::vector<nn::ParamRef> params();
    const EpsilonNetConfig& config() const { return cfg_; }

private:
    EpsilonNetConfig cfg_;
    nn::Linear temb_fc_;
    nn::SiLU temb_act_;
    nn::Conv2d stem_;
    std::vector<ResBlock> enc_blocks_;    // levels-1 blocks at decreasing res
    std::vector<nn::Conv2d> down_;        // stride-2 transitions
    ResBlock mid_;
    std::vector<nn::Conv2d> up_;          // post-upsample channel reducers
    std::vector<nn::Conv2d> fuse_;        // after skip concat
    std::vector<nn::SiLU> fuse_act_;
    std::vector<nn::Upsample2x> upsample_;
    nn::Conv2d out_;
    Tensor temb_cached_;
};

// A trained (or trainable) diffusion model: the estimator network plus the
// schedule it was built for.
class DiffusionModel : public NoiseEstimator {
public:
    DiffusionModel() = default;
    DiffusionModel(const EpsilonNetConfig& cfg, NoiseSchedule sched)
        : net(cfg), schedule(std::move(sched)) {}

    EpsilonNet net;
    NoiseSchedule schedule;
    bool is_trained = false;
    std::string checkpoint_id = "unsaved";

    Tensor predict(const Tensor& x, const std::vector<int>& t) override {
        return net.forward(x, t);
    }
    int channels() const override { return net.config().channels; }
    int out_channels() const override {
        return net.config().channels * net.config().out_mult;
    }
    int image_hw() const override { return net.config().image_hw; }
    int timestep_count() const override { return schedule.steps(); }
    std::string id() const override { return checkpoint_id; }
    bool trained() const override { return is_trained; }
};

struct DiffusionTrainConfig {
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct DiffusionTrainResult {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch, fixed (t, eps) draws
    double initial_val_loss = 0.0;
};

// Denoising objective: mean over batch elements of (eps_hat - eps)^2.
// Aborts with NumericalError on non-finite loss. Persists the loss curve to
// loss_csv_path when non-empty.
DiffusionTrainResult train_epsilon_net(DiffusionModel& model,
                                       const std::vector<Tensor>& train_images,
                                       const std::vector<Tensor>& val_images,
                                       const DiffusionTrainConfig& cfg,
                                       const std::string& loss_csv_path);

}  // namespace anl
