#pragma once

#include <cstdint>
#include <vector>

#include "anl/estimator.hpp"
#include "anl/schedule.hpp"
#include "anl/tensor.hpp"

namespace anl {

// An image in diffusion state: pixels in [-1,1], step 0 means clean.
struct LatentImage {
    Tensor pixels;  // C,H,W
    int step = 0;
};

struct PosteriorParams {
    Tensor mean;            // C,H,W
    double variance = 0.0;  // isotropic sigma_t^2
};

// Closed-form forward jump: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
LatentImage q_sample(const LatentImage& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Reverse-step parameters from an explicit noise estimate.
PosteriorParams posterior_from_eps(const Tensor& x_t, const Tensor& eps, int t,
                                   const NoiseSchedule& sched);

// Same, with the estimate produced by the network.
PosteriorParams posterior_params(const LatentImage& x_t, int t, NoiseEstimator& net,
                                 const NoiseSchedule& sched);

// Full T..1 ancestral chain from seeded standard-normal x_T; z is forced to
// zero at t=1 where sigma_1 = 0. The result is clamped to [-1,1] and is
// bit-deterministic given (seed, parameters, schedule).
LatentImage reverse_sample(NoiseEstimator& net, const NoiseSchedule& sched, std::uint64_t seed);

// Batched variant; sample i consumes exactly the stream of seeds[i], so the
// output per seed is identical to reverse_sample regardless of batching.
std::vector<LatentImage> reverse_sample_batch(NoiseEstimator& net, const NoiseSchedule& sched,
                                              const std::vector<std::uint64_t>& seeds,
                                              int max_batch = 64);

}  // namespace anl
