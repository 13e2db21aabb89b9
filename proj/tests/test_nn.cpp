#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "anl/detector.hpp"
#include "anl/epsilon_net.hpp"
#include "anl/nn.hpp"
#include "anl/rng.hpp"
#include "doctest.h"

using namespace anl;

namespace {

// Central-difference check over every parameter of a scalar loss. Where the
// gradient is essentially zero the finite difference is pure roundoff noise
// (~eps*|L|/2h), so those entries get an absolute gate instead of a relative
// one. Returns the worst relative error over the meaningful entries.
double max_grad_rel_err(std::vector<nn::ParamRef>& params,
                        const std::function<double()>& loss_fn,
                        const std::function<void()>& backward_fn, double h = 1e-5) {
    for (auto& p : params) p.grad->fill(0.0);
    backward_fn();

    double worst = 0.0;
    for (auto& p : params) {
        for (std::int64_t i = 0; i < p.value->size(); ++i) {
            const double orig = (*p.value)[i];
            (*p.value)[i] = orig + h;
            const double lp = loss_fn();
            (*p.value)[i] = orig - h;
            const double lm = loss_fn();
            (*p.value)[i] = orig;
            const double num = (lp - lm) / (2.0 * h);
            const double ana = (*p.grad)[i];
            const double scale = std::max(std::fabs(num), std::fabs(ana));
            if (scale < 1e-6) {
                REQUIRE(std::fabs(num - ana) < 1e-8);
                continue;
            }
            worst = std::max(worst, std::fabs(num - ana) / scale);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("adam minimizes a quadratic") {
    Tensor theta({4});
    Tensor grad({4});
    theta.fill(3.0);
    std::vector<nn::ParamRef> params{{"theta", &theta, &grad}};
    nn::Adam opt(params, 0.1);
    for (int step = 0; step < 400; ++step) {
        opt.zero_grad();
        for (int i = 0; i < 4; ++i) grad[i] = 2.0 * theta[i];
        opt.step();
    }
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(theta[i]) < 1e-2);
}

TEST_CASE("sinusoidal embedding shape and range") {
    auto e = nn::sinusoidal_embedding({1, 5, 100}, 8);
    CHECK(e.shape() == std::vector<int>{3, 8});
    for (std::int64_t i = 0; i < e.size(); ++i) {
        CHECK(e[i] >= -1.0);
        CHECK(e[i] <= 1.0);
    }
    // t=0 embeds to sin=0, cos=1
    auto z = nn::sinusoidal_embedding({0}, 4);
    CHECK(z.at(0, 0) == 0.0);
    CHECK(z.at(0, 2) == 1.0);
}

TEST_CASE("concat/split channels are inverses") {
    Rng rng(20);
    Tensor a({2, 3, 4, 4}), b({2, 2, 4, 4});
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.gaussian();
    for (std::int64_t i = 0; i < b.size(); ++i) b[i] = rng.gaussian();
    Tensor cat = nn::concat_channels(a, b);
    CHECK(cat.shape() == std::vector<int>{2, 5, 4, 4});
    Tensor a2, b2;
    nn::split_channels(cat, 3, a2, b2);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a2[i] == a[i]);
    for (std::int64_t i = 0; i < b.size(); ++i) CHECK(b2[i] == b[i]);
}

TEST_CASE("layer-level gradient checks") {
    Rng rng(21);

    SUBCASE("conv2d + silu chain") {
        nn::Conv2d conv("c", 2, 3, 3, 2, 1);
        conv.init_he(rng);
        nn::SiLU act;
        Tensor x({1, 2, 6, 6});
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
        Tensor target({1, 3, 3, 3});
        for (std::int64_t i = 0; i < target.size(); ++i) target[i] = rng.gaussian();

        auto loss_fn = [&]() {
            Tensor out = act.forward(conv.forward(x));
            double l = 0.0;
            for (std::int64_t i = 0; i < out.size(); ++i) {
                const double d = out[i] - target[i];
                l += d * d;
            }
            return l;
        };
        auto backward_fn = [&]() {
            Tensor out = act.forward(conv.forward(x));
            Tensor g(out.shape());
            for (std::int64_t i = 0; i < out.size(); ++i) g[i] = 2.0 * (out[i] - target[i]);
            conv.backward(act.backward(g));
        };
        std::vector<nn::ParamRef> params;
        conv.collect(params);
        CHECK(max_grad_rel_err(params, loss_fn, backward_fn) < 1e-6);
    }

    SUBCASE("linear") {
        nn::Linear fc("f", 5, 3);
        fc.init_he(rng);
        Tensor x({2, 5});
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
        auto loss_fn = [&]() {
            Tensor out = fc.forward(x);
            double l = 0.0;
            for (std::int64_t i = 0; i < out.size(); ++i) l += out[i] * out[i];
            return l;
        };
        auto backward_fn = [&]() {
            Tensor out = fc.forward(x);
            Tensor g(out.shape());
            for (std::int64_t i = 0; i < out.size(); ++i) g[i] = 2.0 * out[i];
            fc.backward(g);
        };
        std::vector<nn::ParamRef> params;
        fc.collect(params);
        CHECK(max_grad_rel_err(params, loss_fn, backward_fn) < 1e-6);
    }
}

TEST_CASE("epsilon-net denoising loss gradient check (toy, <= 1000 params)") {
    EpsilonNetConfig cfg;
    cfg.channels = 1;
    cfg.image_hw = 8;
    cfg.base_width = 2;
    cfg.levels = 2;
    cfg.time_dim = 4;
    EpsilonNet net(cfg);
    Rng rng(22);
    net.init(rng);
    auto params = net.params();
    const std::int64_t n_params = nn::param_count(params);
    CHECK(n_params <= 1000);

    Tensor x({2, 1, 8, 8});
    Tensor target({2, 1, 8, 8});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
    for (std::int64_t i = 0; i < target.size(); ++i) target[i] = rng.gaussian();
    const std::vector<int> ts{1, 3};

    auto loss_fn = [&]() {
        Tensor out = net.forward(x, ts);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.size(); ++i) {
            const double d = out[i] - target[i];
            l += d * d;
        }
        return l / static_cast<double>(out.size());
    };
    auto backward_fn = [&]() {
        Tensor out = net.forward(x, ts);
        Tensor g(out.shape());
        for (std::int64_t i = 0; i < out.size(); ++i)
            g[i] = 2.0 * (out[i] - target[i]) / static_cast<double>(out.size());
        net.backward(g);
    };
    // the head starts zero-initialized; nudge all params off zero for a
    // non-degenerate check
    {
        Rng jitter(23);
        for (auto& p : params)
            for (std::int64_t i = 0; i < p.value->size(); ++i)
                (*p.value)[i] += 0.05 * jitter.gaussian();
    }
    CHECK(max_grad_rel_err(params, loss_fn, backward_fn) < 1e-4);
}

TEST_CASE("full detector gradient check (toy, <= 5000 params)") {
    DetectorConfig cfg;
    cfg.input_mode = InputMode::Noise;
    cfg.use_attention = true;
    cfg.backbone_width = 2;
    cfg.backbone_stages = 3;
    cfg.channels = 1;
    cfg.input_hw = 8;
    DetectorNet net(cfg);
    Rng rng(24);
    net.init(rng);
    auto params = net.params();
    CHECK(nn::param_count(params) <= 5000);

    Tensor x({2, 1, 8, 8});
    Tensor attn({2, 8, 8});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
    for (std::int64_t i = 0; i < attn.size(); ++i) attn[i] = rng.uniform();
    const std::vector<int> labels{1, 0};

    auto loss_fn = [&]() {
        Tensor logits = net.forward_logits(x, &attn);
        std::vector<Prediction> preds;
        for (std::int64_t i = 0; i < logits.size(); ++i)
            preds.push_back(prediction_from_logit(logits[i]));
        return bce_loss(preds, labels);
    };
    auto backward_fn = [&]() {
        Tensor logits = net.forward_logits(x, &attn);
        Tensor g({2, 1});
        for (std::int64_t i = 0; i < logits.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i]));
            g[i] = (p - static_cast<double>(labels[static_cast<std::size_t>(i)])) / 2.0;
        }
        net.backward_logits(g);
    };
    {
        Rng jitter(25);
        for (auto& p : params)
            for (std::int64_t i = 0; i < p.value->size(); ++i)
                (*p.value)[i] += 0.05 * jitter.gaussian();
    }
    CHECK(max_grad_rel_err(params, loss_fn, backward_fn) < 1e-4);
}
