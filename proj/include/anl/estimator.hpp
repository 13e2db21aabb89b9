#pragma once

#include <string>
#include <vector>

#include "anl/tensor.hpp"

namespace anl {

// A noise-estimation network: maps a batch of images (N,C,H,W) at timesteps t
// to predicted noise. Implementations may emit C or 2C output channels; when
// 2C, channels [0,C) are the noise estimate and the rest is ignored by
// probing code.
class NoiseEstimator {
public:
    virtual ~NoiseEstimator() = default;

    virtual Tensor predict(const Tensor& x, const std::vector<int>& t) = 0;

    virtual int channels() const = 0;
    virtual int out_channels() const = 0;
    virtual int image_hw() const = 0;
    virtual int timestep_count() const = 0;
    virtual std::string id() const = 0;
    virtual bool trained() const = 0;
};

}  // namespace anl
