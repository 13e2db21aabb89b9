#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "anl/attention.hpp"
#include "anl/errors.hpp"
#include "anl/rng.hpp"
#include "doctest.h"

using namespace anl;

namespace {

PredictedNoise make_noise(Tensor values, int t = 1) {
    PredictedNoise n;
    n.values = std::move(values);
    n.timestep = t;
    n.probe_id = "test";
    return n;
}

Tensor random_noise_tensor(int c, int h, int w, Rng& rng) {
    Tensor t({c, h, w});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
    return t;
}

}  // namespace

TEST_CASE("forced min-max arithmetic on a 2x2 single-channel map") {
    Tensor v({1, 2, 2});
    v.at(0, 0, 0) = 1.0;
    v.at(0, 0, 1) = -1.0;
    v.at(0, 1, 0) = 2.0;
    v.at(0, 1, 1) = 0.0;
    auto a = build_attention(make_noise(std::move(v)));
    CHECK(a.weights.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a.weights.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a.weights.at(1, 0) == 1.0);
    CHECK(a.weights.at(1, 1) == 0.0);
}

TEST_CASE("constant noise map normalizes to all-ones") {
    auto a = build_attention(make_noise(Tensor::full({2, 3, 3}, -0.7)));
    for (std::int64_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == 1.0);
}

TEST_CASE("channel mean of (3, -1) is 2 before normalization") {
    Tensor v({2, 1, 2});
    v.at(0, 0, 0) = 3.0;
    v.at(1, 0, 0) = -1.0;
    v.at(0, 0, 1) = 0.0;
    v.at(1, 0, 1) = 0.0;
    // abs-means: [2, 0] -> normalized [1, 0]
    auto a = build_attention(make_noise(std::move(v)));
    CHECK(a.weights.at(0, 0) == 1.0);
    CHECK(a.weights.at(0, 1) == 0.0);
}

TEST_CASE("non-finite noise is rejected") {
    Tensor v = Tensor::full({1, 2, 2}, 1.0);
    v[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(build_attention(make_noise(std::move(v))), DataError);
}

TEST_CASE("positive-scale invariance is exact for lossless scales") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor v = random_noise_tensor(rng.uniform_int(1, 3), 6, 6, rng);
        Tensor scaled = v;
        // power-of-two scaling multiplies every value exactly
        const double c = std::ldexp(1.0, rng.uniform_int(-8, 8));
        for (std::int64_t i = 0; i < scaled.size(); ++i) scaled[i] *= c;
        auto a = build_attention(make_noise(v));
        auto b = build_attention(make_noise(std::move(scaled)));
        for (std::int64_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == b.weights[i]);
    }
    // arbitrary positive scales agree to rounding error
    for (int rep = 0; rep < 50; ++rep) {
        Tensor v = random_noise_tensor(2, 5, 5, rng);
        Tensor scaled = v;
        const double c = std::exp(rng.gaussian());
        for (std::int64_t i = 0; i < scaled.size(); ++i) scaled[i] *= c;
        auto a = build_attention(make_noise(v));
        auto b = build_attention(make_noise(std::move(scaled)));
        for (std::int64_t i = 0; i < a.weights.size(); ++i)
            CHECK(a.weights[i] == doctest::Approx(b.weights[i]).epsilon(1e-12));
    }
}

TEST_CASE("channel permutation leaves the map bit-identical") {
    Rng rng(32);
    for (int rep = 0; rep < 50; ++rep) {
        const int c = rng.uniform_int(2, 4);
        Tensor v = random_noise_tensor(c, 5, 5, rng);
        std::vector<int> perm(static_cast<std::size_t>(c));
        for (int i = 0; i < c; ++i) perm[static_cast<std::size_t>(i)] = i;
        rng.shuffle(perm);
        Tensor pv({c, 5, 5});
        const std::int64_t plane = 25;
        for (int ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < plane; ++p)
                pv[static_cast<std::int64_t>(ch) * plane + p] =
                    v[static_cast<std::int64_t>(perm[static_cast<std::size_t>(ch)]) * plane + p];
        auto a = build_attention(make_noise(std::move(v)));
        auto b = build_attention(make_noise(std::move(pv)));
        for (std::int64_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == b.weights[i]);
    }
}

TEST_CASE("range and monotonicity invariants") {
    Rng rng(33);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor v = random_noise_tensor(rng.uniform_int(1, 3), 8, 8, rng);
        const int c = v.dim(0);
        auto a = build_attention(make_noise(v));
        double lo = 1.0, hi = 0.0;
        for (std::int64_t i = 0; i < a.weights.size(); ++i) {
            CHECK(a.weights[i] >= 0.0);
            CHECK(a.weights[i] <= 1.0);
            lo = std::min(lo, a.weights[i]);
            hi = std::max(hi, a.weights[i]);
        }
        // non-degenerate inputs attain both endpoints
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);

        // strictly larger pre-normalization abs-mean => strictly larger weight
        const std::int64_t plane = 64;
        auto abs_mean = [&](std::int64_t p) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch) s += std::fabs(v[ch * plane + p]);
            return s / c;
        };
        for (int pair = 0; pair < 16; ++pair) {
            const std::int64_t p = rng.uniform_int(0, 63), q = rng.uniform_int(0, 63);
            if (abs_mean(p) > abs_mean(q) + 1e-12) CHECK(a.weights[p] > a.weights[q]);
        }
    }
}

TEST_CASE("resize: identity, constant, checkerboard oracle") {
    Rng rng(34);
    AttentionMap a;
    a.weights = Tensor({4, 4});
    for (std::int64_t i = 0; i < 16; ++i) a.weights[i] = rng.uniform();
    a.source_timestep = 1;

    auto same = resize_attention(a, 4, 4);
    for (std::int64_t i = 0; i < 16; ++i) CHECK(same.weights[i] == a.weights[i]);
    CHECK(same.source_timestep == 1);

    AttentionMap c;
    c.weights = Tensor::full({3, 5}, 0.25);
    auto cr = resize_attention(c, 7, 2);
    for (std::int64_t i = 0; i < cr.weights.size(); ++i)
        CHECK(cr.weights[i] == doctest::Approx(0.25).epsilon(1e-15));

    AttentionMap cb;
    cb.weights = Tensor({4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) cb.weights.at(y, x) = static_cast<double>((x + y) % 2);
    auto half = resize_attention(cb, 2, 2);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(half.weights[i] == doctest::Approx(0.5));

    CHECK_THROWS_AS(resize_attention(a, 0, 4), DataError);
    CHECK_THROWS_AS(resize_attention(a, 4, -1), DataError);
}

TEST_CASE("resize keeps the range inside [0,1]") {
    Rng rng(35);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor v = random_noise_tensor(1, 7, 9, rng);
        auto a = build_attention(make_noise(std::move(v)));
        auto r = resize_attention(a, rng.uniform_int(1, 12), rng.uniform_int(1, 12));
        for (std::int64_t i = 0; i < r.weights.size(); ++i) {
            CHECK(r.weights[i] >= 0.0);
            CHECK(r.weights[i] <= 1.0);
        }
    }
}
