#pragma once

#include <vector>

namespace anl {

// Variance schedule of the forward diffusion chain. Timesteps are 1-based:
// beta(t), alpha(t), alpha_bar(t) are defined for t in [1, T], and
// alpha_bar(0) == 1 by convention so the posterior variance vanishes at t=1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    // beta[i] is the variance for timestep t = i+1. Validates 0 < beta < 1.
    static NoiseSchedule from_betas(std::vector<double> betas);

    int steps() const { return static_cast<int>(beta_.size()); }

    double beta(int t) const { return beta_[static_cast<std::size_t>(t - 1)]; }
    double alpha(int t) const { return alpha_[static_cast<std::size_t>(t - 1)]; }

    // alpha_bar(0) == 1.
    double alpha_bar(int t) const {
        return t == 0 ? 1.0 : alpha_bar_[static_cast<std::size_t>(t - 1)];
    }

    // Posterior variance sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
    double posterior_variance(int t) const;

    void require_valid_t(int t) const;

    const std::vector<double>& betas() const { return beta_; }

private:
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
};

// beta[t] = beta_start + (t-1)/(T-1) * (beta_end - beta_start), t in [1, T].
// T == 1 degenerates to beta = [beta_start].
NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end);

}  // namespace anl
