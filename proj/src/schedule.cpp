#include "anl/schedule.hpp"

#include <string>

#include "anl/errors.hpp"

namespace anl {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw DataError("noise schedule needs at least one step");
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0))
            throw DataError("beta[" + std::to_string(i + 1) + "] out of (0,1): " +
                            std::to_string(betas[i]));
    }
    NoiseSchedule s;
    s.beta_ = std::move(betas);
    s.alpha_.resize(s.beta_.size());
    s.alpha_bar_.resize(s.beta_.size());
    double running = 1.0;
    for (std::size_t i = 0; i < s.beta_.size(); ++i) {
        s.alpha_[i] = 1.0 - s.beta_[i];
        running *= s.alpha_[i];
        s.alpha_bar_[i] = running;
    }
    return s;
}

double NoiseSchedule::posterior_variance(int t) const {
    require_valid_t(t);
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
}

void NoiseSchedule::require_valid_t(int t) const {
    if (t < 1 || t > steps())
        throw DataError("timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(steps()) + "]");
}

NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw DataError("schedule step count must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw DataError("need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    if (steps == 1) {
        betas[0] = beta_start;
    } else {
        for (int t = 1; t <= steps; ++t)
            betas[static_cast<std::size_t>(t - 1)] =
                beta_start + (static_cast<double>(t - 1) / (steps - 1)) * (beta_end - beta_start);
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

}  // namespace anl
