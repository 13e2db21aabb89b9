#include "anl/epsilon_net.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "anl/errors.hpp"

namespace anl {

ResBlock::ResBlock(const std::string& name, int channels, int time_dim)
    : conv1_(name + ".conv1", channels, channels, 3, 1, 1),
      conv2_(name + ".conv2", channels, channels, 3, 1, 1),
      proj_(name + ".temb", time_dim, channels) {}

void ResBlock::init(Rng& rng) {
    conv1_.init_he(rng);
    conv2_.init_he(rng);
    proj_.init_he(rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& temb) {
    Tensor h = act1_.forward(conv1_.forward(x));
    Tensor bias = proj_.forward(temb);  // N,C
    h = nn::add_channel_bias(h, bias);
    h = act2_.forward(conv2_.forward(h));
    Tensor out = x;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += h[i];
    return out;
}

Tensor ResBlock::backward(const Tensor& gout, Tensor& gtemb) {
    Tensor gh = conv2_.backward(act2_.backward(gout));
    Tensor gbias = nn::channel_bias_grad(gh);
    Tensor gt = proj_.backward(gbias);
    for (std::int64_t i = 0; i < gtemb.size(); ++i) gtemb[i] += gt[i];
    Tensor gx = conv1_.backward(act1_.backward(gh));
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
    return gx;
}

void ResBlock::collect(std::vector<nn::ParamRef>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
    proj_.collect(out);
}

EpsilonNet::EpsilonNet(const EpsilonNetConfig& cfg) : cfg_(cfg) {
    if (cfg.levels < 1) throw DataError("epsilon net needs >= 1 level");
    const int hw_at_bottom = cfg.image_hw >> (cfg.levels - 1);
    if (hw_at_bottom < 2 && cfg.levels > 1)
        throw DataError("too many levels for image size");

    temb_fc_ = nn::Linear("temb.fc", cfg.time_dim, cfg.time_dim);
    stem_ = nn::Conv2d("stem", cfg.channels, cfg.base_width, 3, 1, 1);

    for (int i = 0; i + 1 < cfg.levels; ++i) {
        const int wi = cfg.base_width << i;
        enc_blocks_.emplace_back("enc" + std::to_string(i), wi, cfg.time_dim);
        down_.emplace_back("down" + std::to_string(i), wi, wi * 2, 3, 2, 1);
    }
    const int w_bottom = cfg.base_width << (cfg.levels - 1);
    mid_ = ResBlock("mid", w_bottom, cfg.time_dim);
    for (int i = cfg.levels - 2; i >= 0; --i) {
        const int wi = cfg.base_width << i;
        up_.emplace_back("up" + std::to_string(i), wi * 2, wi, 3, 1, 1);
        fuse_.emplace_back("fuse" + std::to_string(i), wi * 2, wi, 3, 1, 1);
        fuse_act_.emplace_back();
        upsample_.emplace_back();
    }
    out_ = nn::Conv2d("out", cfg.base_width, cfg.channels * cfg.out_mult, 3, 1, 1);
}

void EpsilonNet::init(Rng& rng) {
    temb_fc_.init_he(rng);
    stem_.init_he(rng);
    for (auto& b : enc_blocks_) b.init(rng);
    for (auto& d : down_) d.init_he(rng);
    mid_.init(rng);
    for (auto& u : up_) u.init_he(rng);
    for (auto& f : fuse_) f.init_he(rng);
    // Zero-init head: the untrained net predicts zero noise, which makes the
    // initial denoising loss the analytic E||eps||^2 baseline.
    out_.init_zero();
}

Tensor EpsilonNet::forward(const Tensor& x, const std::vector<int>& t) {
    temb_cached_ = temb_act_.forward(temb_fc_.forward(nn::sinusoidal_embedding(t, cfg_.time_dim)));

    Tensor h = stem_.forward(x);
    std::vector<Tensor> skips;
    for (std::size_t i = 0; i + 1 < static_cast<std::size_t>(cfg_.levels); ++i) {
        h = enc_blocks_[i].forward(h, temb_cached_);
        skips.push_back(h);
        h = down_[i].forward(h);
    }
    h = mid_.forward(h, temb_cached_);
    for (std::size_t j = 0; j < up_.size(); ++j) {
        h = upsample_[j].forward(h);
        h = up_[j].forward(h);
        const Tensor& skip = skips[skips.size() - 1 - j];
        h = fuse_act_[j].forward(fuse_[j].forward(nn::concat_channels(h, skip)));
    }
    return out_.forward(h);
}

Tensor EpsilonNet::backward(const Tensor& gout) {
    Tensor gtemb(temb_cached_.shape());

    Tensor g = out_.backward(gout);
    std::vector<Tensor> gskips(up_.size());
    for (int j = static_cast<int>(up_.size()) - 1; j >= 0; --j) {
        Tensor gcat = fuse_[j].backward(fuse_act_[j].backward(g));
        Tensor gup, gskip;
        nn::split_channels(gcat, up_[j].out_c(), gup, gskip);
        gskips[static_cast<std::size_t>(j)] = std::move(gskip);
        g = upsample_[j].backward(up_[j].backward(gup));
    }
    g = mid_.backward(g, gtemb);
    for (int i = static_cast<int>(enc_blocks_.size()) - 1; i >= 0; --i) {
        g = down_[i].backward(g);
        // decoder step j touches skip from encoder level (levels-2-j)
        const std::size_t j = up_.size() - 1 - static_cast<std::size_t>(i);
        const Tensor& gs = gskips[j];
        for (std::int64_t k = 0; k < g.size(); ++k) g[k] += gs[k];
        g = enc_blocks_[i].backward(g, gtemb);
    }
    g = stem_.backward(g);
    temb_fc_.backward(temb_act_.backward(gtemb));
    return g;
}

std::vector<nn::ParamRef> EpsilonNet::params() {
    std::vector<nn::ParamRef> out;
    temb_fc_.collect(out);
    stem_.collect(out);
    for (auto& b : enc_blocks_) b.collect(out);
    for (auto& d : down_) d.collect(out);
    mid_.collect(out);
    for (auto& u : up_) u.collect(out);
    for (auto& f : fuse_) f.collect(out);
    out_.collect(out);
    return out;
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& images, const std::vector<int>& idx) {
    const auto& s = images[static_cast<std::size_t>(idx[0])].shape();
    Tensor out({static_cast<int>(idx.size()), s[0], s[1], s[2]});
    const std::int64_t per = Tensor::count(s);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor& img = images[static_cast<std::size_t>(idx[i])];
        for (std::int64_t j = 0; j < per; ++j) out[static_cast<std::int64_t>(i) * per + j] = img[j];
    }
    return out;
}

}  // namespace

DiffusionTrainResult train_epsilon_net(DiffusionModel& model,
                                       const std::vector<Tensor>& train_images,
                                       const std::vector<Tensor>& val_images,
                                       const DiffusionTrainConfig& cfg,
                                       const std::string& loss_csv_path) {
    if (train_images.empty()) throw DataError("empty training corpus");
    const int T = model.schedule.steps();
    const int C = model.net.config().channels;
    const int HW = model.net.config().image_hw;
    const std::int64_t per = static_cast<std::int64_t>(C) * HW * HW;

    auto params = model.net.params();
    nn::Adam opt(params, cfg.lr);

    // Noised versions of the val set with frozen draws, so the held-out loss
    // is comparable across epochs.
    auto eval_val = [&]() -> double {
        if (val_images.empty()) return 0.0;
        double total = 0.0;
        std::int64_t count = 0;
        const int vb = 16;
        for (std::size_t start = 0; start < val_images.size(); start += vb) {
            const std::size_t n = std::min<std::size_t>(vb, val_images.size() - start);
            Tensor xb({static_cast<int>(n), C, HW, HW});
            Tensor eb({static_cast<int>(n), C, HW, HW});
            std::vector<int> ts(n);
            for (std::size_t i = 0; i < n; ++i) {
                Rng r(derive_seed(cfg.seed, 0x7a1u, start + i));
                const int t = r.uniform_int(1, T);
                ts[i] = t;
                const double sa = std::sqrt(model.schedule.alpha_bar(t));
                const double sn = std::sqrt(1.0 - model.schedule.alpha_bar(t));
                const Tensor& x0 = val_images[start + i];
                for (std::int64_t j = 0; j < per; ++j) {
                    const double eps = r.gaussian();
                    eb[static_cast<std::int64_t>(i) * per + j] = eps;
                    xb[static_cast<std::int64_t>(i) * per + j] = sa * x0[j] + sn * eps;
                }
            }
            Tensor pred = model.net.forward(xb, ts);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < per; ++j) {
                    const double d = pred[static_cast<std::int64_t>(i) * per + j] -
                                     eb[static_cast<std::int64_t>(i) * per + j];
                    total += d * d;
                }
            }
            count += static_cast<std::int64_t>(n) * per;
        }
        return total / static_cast<double>(count);
    };

    DiffusionTrainResult res;
    res.initial_val_loss = eval_val();

    std::vector<int> order(train_images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::int64_t epoch_elems = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t n = std::min<std::size_t>(cfg.batch, order.size() - start);
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(start + n));
            Tensor xb = stack_batch(train_images, idx);
            Tensor eb({static_cast<int>(n), C, HW, HW});
            std::vector<int> ts(n);
            for (std::size_t i = 0; i < n; ++i) {
                Rng r(derive_seed(cfg.seed, 2 + static_cast<std::uint64_t>(epoch),
                                  start + i));
                const int t = r.uniform_int(1, T);
                ts[i] = t;
                const double sa = std::sqrt(model.schedule.alpha_bar(t));
                const double sn = std::sqrt(1.0 - model.schedule.alpha_bar(t));
                for (std::int64_t j = 0; j < per; ++j) {
                    const double eps = r.gaussian();
                    eb[static_cast<std::int64_t>(i) * per + j] = eps;
                    xb[static_cast<std::int64_t>(i) * per + j] =
                        sa * xb[static_cast<std::int64_t>(i) * per + j] + sn * eps;
                }
            }

            opt.zero_grad();
            Tensor pred = model.net.forward(xb, ts);
            const std::int64_t total = static_cast<std::int64_t>(n) * per;
            Tensor grad(pred.shape());
            double loss = 0.0;
            // When the net emits extra channels, the objective covers the
            // noise channels only.
            for (std::size_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < per; ++j) {
                    const std::int64_t pi =
                        static_cast<std::int64_t>(i) * (per * model.net.config().out_mult) + j;
                    const double d = pred[pi] - eb[static_cast<std::int64_t>(i) * per + j];
                    loss += d * d;
                    grad[pi] = 2.0 * d / static_cast<double>(total);
                }
            }
            loss /= static_cast<double>(total);
            if (!std::isfinite(loss))
                throw NumericalError("non-finite denoising loss at epoch " +
                                     std::to_string(epoch) + " batch offset " +
                                     std::to_string(start));
            model.net.backward(grad);
            opt.step();
            epoch_loss += loss * static_cast<double>(total);
            epoch_elems += total;
        }
        res.train_loss.push_back(epoch_loss / static_cast<double>(epoch_elems));
        res.val_loss.push_back(eval_val());
    }

    model.is_trained = true;

    if (!loss_csv_path.empty()) {
        std::ofstream f(loss_csv_path);
        f << "epoch,train_loss,val_loss\n";
        char buf[64];
        for (std::size_t i = 0; i < res.train_loss.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g", i, res.train_loss[i],
                          res.val_loss[i]);
            f << buf << "\n";
        }
    }
    return res;
}

}  // namespace anl
