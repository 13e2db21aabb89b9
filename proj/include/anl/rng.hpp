#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace anl {

// Deterministic RNG. mt19937_64 is fully specified by the standard, and the
// gaussian/shuffle transforms are implemented here rather than taken from
// <random> distributions, whose algorithms are implementation-defined.
// Same seed => same stream on every platform/compiler.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller, pairs cached.
    double gaussian();

    // Inclusive range, rejection-sampled so the mapping is unbiased.
    int uniform_int(int lo, int hi);

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(0, i);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable mixing of a base seed with stream indices, so per-image / per-epoch
// streams are independent of processing order and thread schedule.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace anl
