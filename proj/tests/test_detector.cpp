#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "anl/attention.hpp"
#include "anl/checkpoint.hpp"
#include "anl/detector.hpp"
#include "anl/errors.hpp"
#include "anl/kernels.hpp"
#include "anl/rng.hpp"
#include "doctest.h"

using namespace anl;
namespace fs = std::filesystem;

namespace {

DetectorConfig toy_cfg(bool attention) {
    DetectorConfig cfg;
    cfg.input_mode = InputMode::Noise;
    cfg.use_attention = attention;
    cfg.backbone_width = 4;
    cfg.backbone_stages = 3;
    cfg.channels = 1;
    cfg.input_hw = 16;
    return cfg;
}

Tensor random_batch(int n, int c, int hw, Rng& rng) {
    Tensor t({n, c, hw, hw});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
    return t;
}

std::vector<DetectorExample> synthetic_examples(int n_real, int n_fake, int hw,
                                                std::uint64_t seed, bool with_attention) {
    std::vector<DetectorExample> out;
    for (int i = 0; i < n_real + n_fake; ++i) {
        const bool fake = i >= n_real;
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), fake));
        DetectorExample ex;
        ex.input = Tensor({1, hw, hw});
        if (fake) {
            // white noise
            for (std::int64_t j = 0; j < ex.input.size(); ++j) ex.input[j] = rng.gaussian();
        } else {
            // smooth structured field
            const double fx = 0.5 + rng.uniform(), fy = 0.5 + rng.uniform();
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x)
                    ex.input.at(0, y, x) =
                        std::sin(2 * M_PI * (fx * x + fy * y) / hw) +
                        0.1 * rng.gaussian();
        }
        ex.label = fake ? 1 : 0;
        ex.hash = "h" + std::to_string(i);
        ex.generator = fake ? "g" : "-";
        if (with_attention) {
            PredictedNoise pn;
            pn.values = ex.input;
            pn.timestep = 1;
            ex.attention = build_attention(pn).weights;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

TEST_CASE("bce analytic values") {
    // z = 0 -> p = 0.5 -> loss = ln 2
    std::vector<Prediction> preds{prediction_from_logit(0.0)};
    CHECK(bce_loss(preds, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(preds, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(preds, {1}) == doctest::Approx(0.693147).epsilon(1e-6));

    // clamp boundary: y = 1, p -> 1 gives loss -log(1 - 1e-7) ~ 1e-7
    Prediction sure;
    sure.logit = 100.0;
    sure.p = 1.0;
    sure.label = 1;
    CHECK(bce_loss({sure}, {1}) == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));
    CHECK(bce_loss({sure}, {1}) == doctest::Approx(1e-7).epsilon(1e-2));

    // hand computation: p = [0.9, 0.2], y = [1, 0]
    Prediction a, b;
    a.p = 0.9;
    b.p = 0.2;
    const double expect = -(std::log(0.9) + std::log(0.8)) / 2.0;
    CHECK(bce_loss({a, b}, {1, 0}) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(bce_loss({a, b}, {1, 0}) == doctest::Approx(0.164252).epsilon(1e-6));

    CHECK_THROWS_AS(bce_loss({}, {}), DataError);
    CHECK_THROWS_AS(bce_loss({a}, {1, 0}), DataError);
}

TEST_CASE("bce matches a scalar re-implementation to 1e-12") {
    Rng rng(50);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = rng.uniform_int(1, 64);
        std::vector<Prediction> preds(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            preds[static_cast<std::size_t>(i)] = prediction_from_logit(rng.gaussian() * 8.0);
            labels[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 0 : 1;
        }
        // independent scalar route: branch on the label, negate per term
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            double p = preds[static_cast<std::size_t>(i)].p;
            if (p < 1e-7) p = 1e-7;
            if (p > 1.0 - 1e-7) p = 1.0 - 1e-7;
            acc += labels[static_cast<std::size_t>(i)] == 1 ? -std::log(p) : -std::log(1.0 - p);
        }
        const double expect = acc / n;
        const double got = bce_loss(preds, labels);
        CHECK(std::fabs(got - expect) <= 1e-12 * std::max(1.0, std::fabs(expect)));
    }
}

TEST_CASE("prediction label follows the 0.5 threshold") {
    CHECK(prediction_from_logit(0.0).label == 1);  // p = 0.5 -> fake by convention
    CHECK(prediction_from_logit(-0.01).label == 0);
    CHECK(prediction_from_logit(3.0).label == 1);
    CHECK(prediction_from_logit(5.0).p == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))));
}

TEST_CASE("all-ones attention is bit-identical to attention disabled") {
    Rng rng(51);
    DetectorNet with_att(toy_cfg(true));
    DetectorNet without(toy_cfg(false));
    {
        Rng init(52);
        with_att.init(init);
    }
    {
        Rng init(52);
        without.init(init);
    }
    Tensor x = random_batch(3, 1, 16, rng);
    Tensor ones = Tensor::full({3, 16, 16}, 1.0);
    Tensor za = with_att.forward_logits(x, &ones);
    Tensor zb = without.forward_logits(x, nullptr);
    REQUIRE(za.size() == zb.size());
    for (std::int64_t i = 0; i < za.size(); ++i) CHECK(za[i] == zb[i]);
}

TEST_CASE("all-zero attention collapses the logit to the head bias") {
    Rng rng(53);
    DetectorNet net(toy_cfg(true));
    Rng init(54);
    net.init(init);
    // set a recognizable head bias
    auto params = net.params();
    for (auto& p : params)
        if (p.name == "head.b") (*p.value)[0] = 0.625;
    Tensor x = random_batch(2, 1, 16, rng);
    Tensor zeros({2, 16, 16});
    Tensor z = net.forward_logits(x, &zeros);
    for (std::int64_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.625);
}

TEST_CASE("modulated pooling equals hand arithmetic on a 2-channel 2x2 toy") {
    Tensor f({1, 2, 2, 2});
    Tensor a({1, 2, 2});
    Rng rng(55);
    for (std::int64_t i = 0; i < f.size(); ++i) f[i] = rng.gaussian();
    for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform();
    Tensor mod(f.shape());
    kernels::broadcast_mul_hw_forward(f.data(), a.data(), mod.data(), 1, 2, 2, 2);
    Tensor pooled({1, 2});
    kernels::gap_forward(mod.data(), pooled.data(), 1, 2, 4);
    for (int ch = 0; ch < 2; ++ch) {
        double acc = 0.0;
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) acc += f.at(0, ch, y, x) * a.at(0, y, x);
        CHECK(pooled.at(0, ch) == doctest::Approx(acc / 4.0).epsilon(1e-14));
    }
}

TEST_CASE("attention/config mismatch is rejected") {
    Rng rng(56);
    DetectorNet net(toy_cfg(true));
    Rng init(57);
    net.init(init);
    Tensor x = random_batch(1, 1, 16, rng);
    CHECK_THROWS_AS(net.forward_logits(x, nullptr), DataError);
    DetectorNet net2(toy_cfg(false));
    Rng init2(58);
    net2.init(init2);
    Tensor ones = Tensor::full({1, 16, 16}, 1.0);
    CHECK_THROWS_AS(net2.forward_logits(x, &ones), DataError);
}

TEST_CASE("training on a balanced toy set beats chance and is deterministic") {
    auto run = [&]() {
        DetectorModel model;
        model.cfg = toy_cfg(true);
        model.net = DetectorNet(model.cfg);
        Rng init(59);
        model.net.init(init);
        auto train = synthetic_examples(100, 100, 16, 60, true);
        auto val = synthetic_examples(16, 16, 16, 61, true);
        DetectorTrainConfig tc;  // defaults: lr 1e-5, batch 64, 20 epochs
        tc.seed = 62;
        auto res = train_detector(model, train, val, tc);
        return res;
    };
    auto res1 = run();
    CHECK(res1.train_loss.back() < std::log(2.0));
    CHECK(res1.best_epoch >= 0);
    CHECK(res1.class_ratio == doctest::Approx(1.0));

    auto res2 = run();
    REQUIRE(res1.train_loss.size() == res2.train_loss.size());
    for (std::size_t i = 0; i < res1.train_loss.size(); ++i)
        CHECK(res1.train_loss[i] == res2.train_loss[i]);
}

TEST_CASE("single-class training sets are rejected") {
    DetectorModel model;
    model.cfg = toy_cfg(false);
    model.net = DetectorNet(model.cfg);
    Rng init(63);
    model.net.init(init);
    auto only_real = synthetic_examples(10, 0, 16, 64, false);
    DetectorTrainConfig tc;
    CHECK_THROWS_AS(train_detector(model, only_real, {}, tc), DataError);
}

TEST_CASE("missing cache rows are enumerated before training") {
    const fs::path dir = fs::temp_directory_path() / "anl_test_missing_cache";
    fs::remove_all(dir);
    NoiseCache cache(dir.string());
    std::vector<ManifestRow> rows;
    for (int i = 0; i < 3; ++i) {
        ManifestRow r;
        r.path = "/nonexistent/img" + std::to_string(i) + ".png";
        r.label = i % 2 ? "fake" : "real";
        r.generator = i % 2 ? "g" : "-";
        r.split = "train";
        r.content_hash = std::string(64, static_cast<char>('a' + i));
        rows.push_back(r);
    }
    DetectorConfig cfg = toy_cfg(true);
    try {
        build_examples(rows, cache, "someprobe", cfg);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("img0.png") != std::string::npos);
        CHECK(msg.find("img1.png") != std::string::npos);
        CHECK(msg.find("img2.png") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("a detector training step leaves probe parameters untouched") {
    // checksum of the serialized probe before/after one training epoch
    const fs::path dir = fs::temp_directory_path() / "anl_test_probe_frozen";
    fs::remove_all(dir);
    fs::create_directories(dir);

    EpsilonNetConfig pcfg;
    pcfg.channels = 1;
    pcfg.image_hw = 16;
    pcfg.base_width = 4;
    pcfg.levels = 2;
    DiffusionModel probe(pcfg, build_linear_schedule(10, 1e-3, 0.05));
    Rng init(65);
    probe.net.init(init);
    probe.is_trained = true;
    const std::string ckpt = (dir / "probe.anlckpt").string();
    save_diffusion_checkpoint(probe, ckpt);
    const std::string before = sha256_file(ckpt);

    DetectorModel model;
    model.cfg = toy_cfg(true);
    model.net = DetectorNet(model.cfg);
    Rng dinit(66);
    model.net.init(dinit);
    auto train = synthetic_examples(20, 20, 16, 67, true);
    DetectorTrainConfig tc;
    tc.epochs = 1;
    train_detector(model, train, {}, tc);

    CHECK(sha256_file(ckpt) == before);
    fs::remove_all(dir);
}
