#include "anl/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "anl/errors.hpp"
#include "anl/rng.hpp"

namespace anl {

LatentImage q_sample(const LatentImage& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    sched.require_valid_t(t);
    if (!x0.pixels.same_shape(eps)) throw DataError("q_sample: eps shape mismatch");
    const double sa = std::sqrt(sched.alpha_bar(t));
    const double sn = std::sqrt(1.0 - sched.alpha_bar(t));
    LatentImage out;
    out.pixels = Tensor(x0.pixels.shape());
    for (std::int64_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = sa * x0.pixels[i] + sn * eps[i];
    out.step = t;
    return out;
}

PosteriorParams posterior_from_eps(const Tensor& x_t, const Tensor& eps, int t,
                                   const NoiseSchedule& sched) {
    sched.require_valid_t(t);
    if (!x_t.same_shape(eps)) throw DataError("posterior: eps shape mismatch");
    PosteriorParams p;
    p.variance = sched.posterior_variance(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    p.mean = Tensor(x_t.shape());
    for (std::int64_t i = 0; i < x_t.size(); ++i)
        p.mean[i] = inv_sqrt_alpha * (x_t[i] - coef * eps[i]);
    return p;
}

namespace {

// First C channels of a possibly 2C-channel prediction, for one sample of a
// batch output.
Tensor noise_slice(const Tensor& pred, int sample, int c, int h, int w) {
    Tensor out({c, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const int pc = pred.dim(1);
    const double* src = pred.data() + static_cast<std::int64_t>(sample) * pc * plane;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(c) * plane; ++i) out[i] = src[i];
    return out;
}

}  // namespace

PosteriorParams posterior_params(const LatentImage& x_t, int t, NoiseEstimator& net,
                                 const NoiseSchedule& sched) {
    sched.require_valid_t(t);
    const int c = net.channels(), hw = net.image_hw();
    Tensor batch({1, c, hw, hw});
    for (std::int64_t i = 0; i < x_t.pixels.size(); ++i) batch[i] = x_t.pixels[i];
    Tensor pred = net.predict(batch, {t});
    Tensor eps = noise_slice(pred, 0, c, hw, hw);
    return posterior_from_eps(x_t.pixels, eps, t, sched);
}

std::vector<LatentImage> reverse_sample_batch(NoiseEstimator& net, const NoiseSchedule& sched,
                                              const std::vector<std::uint64_t>& seeds,
                                              int max_batch) {
    if (!net.trained()) throw DataError("reverse_sample: estimator is not trained");
    const int T = sched.steps();
    const int c = net.channels(), hw = net.image_hw();
    const std::int64_t per = static_cast<std::int64_t>(c) * hw * hw;

    std::vector<LatentImage> results(seeds.size());
    for (std::size_t start = 0; start < seeds.size(); start += max_batch) {
        const std::size_t n = std::min<std::size_t>(max_batch, seeds.size() - start);
        std::vector<Rng> streams;
        streams.reserve(n);
        Tensor x({static_cast<int>(n), c, hw, hw});
        for (std::size_t i = 0; i < n; ++i) {
            streams.emplace_back(seeds[start + i]);
            for (std::int64_t j = 0; j < per; ++j)
                x[static_cast<std::int64_t>(i) * per + j] = streams[i].gaussian();
        }
        for (int t = T; t >= 1; --t) {
            std::vector<int> ts(n, t);
            Tensor pred = net.predict(x, ts);
            const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
            const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
            const double sigma = std::sqrt(sched.posterior_variance(t));
            const int pc = net.out_channels();
            const std::int64_t pred_per = static_cast<std::int64_t>(pc) * hw * hw;
            for (std::size_t i = 0; i < n; ++i) {
                double* xi = x.data() + static_cast<std::int64_t>(i) * per;
                const double* ei = pred.data() + static_cast<std::int64_t>(i) * pred_per;
                if (t > 1) {
                    for (std::int64_t j = 0; j < per; ++j) {
                        const double mean = inv_sqrt_alpha * (xi[j] - coef * ei[j]);
                        xi[j] = mean + sigma * streams[i].gaussian();
                    }
                } else {
                    for (std::int64_t j = 0; j < per; ++j)
                        xi[j] = inv_sqrt_alpha * (xi[j] - coef * ei[j]);
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            LatentImage img;
            img.pixels = Tensor({c, hw, hw});
            for (std::int64_t j = 0; j < per; ++j)
                img.pixels[j] = std::clamp(x[static_cast<std::int64_t>(i) * per + j], -1.0, 1.0);
            img.step = 0;
            results[start + i] = std::move(img);
        }
    }
    return results;
}

LatentImage reverse_sample(NoiseEstimator& net, const NoiseSchedule& sched, std::uint64_t seed) {
    return reverse_sample_batch(net, sched, {seed}, 1)[0];
}

}  // namespace anl
