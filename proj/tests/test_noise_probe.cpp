#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "anl/checkpoint.hpp"
#include "anl/data_io.hpp"
#include "anl/epsilon_net.hpp"
#include "anl/errors.hpp"
#include "anl/noise_probe.hpp"
#include "anl/rng.hpp"
#include "doctest.h"

using namespace anl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Counts invocations so idempotence is observable.
class CountingEstimator : public NoiseEstimator {
public:
    CountingEstimator(int c, int hw, int T, int out_mult = 1)
        : c_(c), hw_(hw), T_(T), out_mult_(out_mult) {}
    Tensor predict(const Tensor& x, const std::vector<int>& t) override {
        calls += x.dim(0);
        Tensor out({x.dim(0), c_ * out_mult_, hw_, hw_});
        // deterministic function of (x, t): out_c = x_c * (1 + t/10);
        // extra channels get a marker value so slicing is observable
        const std::int64_t plane = static_cast<std::int64_t>(hw_) * hw_;
        for (int n = 0; n < x.dim(0); ++n) {
            const double scale = 1.0 + t[static_cast<std::size_t>(n)] / 10.0;
            for (int ch = 0; ch < c_ * out_mult_; ++ch)
                for (std::int64_t p = 0; p < plane; ++p)
                    out[(static_cast<std::int64_t>(n) * c_ * out_mult_ + ch) * plane + p] =
                        ch < c_
                            ? x[(static_cast<std::int64_t>(n) * c_ + ch) * plane + p] * scale
                            : 999.0;
        }
        return out;
    }
    int channels() const override { return c_; }
    int out_channels() const override { return c_ * out_mult_; }
    int image_hw() const override { return hw_; }
    int timestep_count() const override { return T_; }
    std::string id() const override { return "counting-estimator"; }
    bool trained() const override { return true; }

    mutable int calls = 0;

private:
    int c_, hw_, T_, out_mult_;
};

LatentImage random_image(int c, int hw, std::uint64_t seed) {
    Rng rng(seed);
    LatentImage img;
    img.pixels = Tensor({c, hw, hw});
    for (std::int64_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = rng.uniform() * 2 - 1;
    return img;
}

}  // namespace

TEST_CASE("estimate_noise is a pure function of (image, t)") {
    CountingEstimator net(1, 8, 20);
    auto img = random_image(1, 8, 90);
    auto a = estimate_noise(img, 1, net);
    auto b = estimate_noise(img, 1, net);
    CHECK(a.timestep == 1);
    CHECK(a.probe_id == "counting-estimator");
    REQUIRE(a.values.size() == b.values.size());
    for (std::int64_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
    CHECK(a.values.same_shape(img.pixels));  // output shape equals input shape
}

TEST_CASE("estimate_noise slices the first C channels of a 2C-channel network") {
    CountingEstimator net(1, 8, 20, 2);
    auto img = random_image(1, 8, 91);
    auto n = estimate_noise(img, 5, net);
    CHECK(n.values.dim(0) == 1);
    for (std::int64_t i = 0; i < n.values.size(); ++i) {
        CHECK(n.values[i] != 999.0);
        CHECK(n.values[i] == doctest::Approx(img.pixels[i] * 1.5).epsilon(1e-14));
    }
}

TEST_CASE("estimate_noise validates geometry and timestep") {
    CountingEstimator net(1, 8, 20);
    auto wrong = random_image(1, 16, 92);
    CHECK_THROWS_AS(estimate_noise(wrong, 1, net), DataError);
    auto img = random_image(1, 8, 93);
    CHECK_THROWS_AS(estimate_noise(img, 0, net), DataError);
    CHECK_THROWS_AS(estimate_noise(img, 21, net), DataError);
}

TEST_CASE("tensor files round-trip bit-exactly") {
    TempDir dir("anl_test_tensor_io");
    Rng rng(94);
    Tensor t({2, 5, 7});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
    const std::string path = (dir.path / "t.anlt").string();
    write_tensor_file(t, path);
    Tensor back = read_tensor_file(path);
    CHECK(back.shape() == t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);

    CHECK_THROWS_AS(read_tensor_file((dir.path / "missing.anlt").string()), DataError);
    const std::string junk = (dir.path / "junk.anlt").string();
    {
        std::ofstream f(junk);
        f << "garbage";
    }
    CHECK_THROWS_AS(read_tensor_file(junk), DataError);
}

TEST_CASE("batch_probe: empty manifest, idempotence, full enumeration") {
    TempDir corpus("anl_test_probe_corpus");
    TempDir cache_dir("anl_test_probe_cache");

    CountingEstimator net(1, 16, 20);

    // empty manifest -> empty cache, success
    {
        NoiseCache cache(cache_dir.path.string());
        DatasetManifest empty;
        auto stats = batch_probe(empty, 1, net, cache);
        CHECK(stats.probed == 0);
        CHECK(stats.skipped == 0);
        CHECK(cache.entries().empty());
    }

    CorpusConfig ccfg;
    ccfg.image_hw = 16;
    auto manifest = synthesize_real_corpus(20, 95, corpus.path.string(), ccfg);

    NoiseCache cache = NoiseCache::open(cache_dir.path.string());
    net.calls = 0;
    auto stats = batch_probe(manifest, 1, net, cache);
    CHECK(stats.probed == 20);
    CHECK(net.calls == 20);
    CHECK(cache.entries().size() == 20);
    for (const auto& e : cache.entries()) {
        CHECK(e.timestep == 1);
        CHECK(e.probe_id == "counting-estimator");
    }
    // every record's hash matches its manifest row
    for (const auto& row : manifest.rows) CHECK(cache.contains(row.content_hash, net.id(), 1));

    // rerun on a complete cache: zero estimator invocations
    net.calls = 0;
    auto stats2 = batch_probe(manifest, 1, net, cache);
    CHECK(stats2.probed == 0);
    CHECK(stats2.reused == 20);
    CHECK(net.calls == 0);

    // reopening from disk sees the same entries (index persisted atomically)
    NoiseCache reopened = NoiseCache::open(cache_dir.path.string());
    CHECK(reopened.entries().size() == 20);
    CHECK_FALSE(fs::exists(cache_dir.path / "index.json.tmp"));

    // cache round-trip: stored tensor equals a fresh probe bit-for-bit
    auto img = load_and_normalize(manifest.rows[0].path, 16);
    auto fresh = estimate_noise(img, 1, net);
    auto loaded = reopened.load(manifest.rows[0].content_hash, net.id(), 1);
    REQUIRE(loaded.has_value());
    for (std::int64_t i = 0; i < fresh.values.size(); ++i)
        CHECK(loaded->values[i] == fresh.values[i]);
}

TEST_CASE("unreadable rows become skip records, not silent drops") {
    TempDir corpus("anl_test_probe_skip");
    TempDir cache_dir("anl_test_probe_skip_cache");
    CorpusConfig ccfg;
    ccfg.image_hw = 16;
    auto manifest = synthesize_real_corpus(3, 96, corpus.path.string(), ccfg);
    ManifestRow bad;
    bad.path = (corpus.path / "gone.png").string();
    bad.label = "real";
    bad.generator = "-";
    bad.split = "train";
    bad.content_hash = std::string(64, 'f');
    manifest.rows.push_back(bad);

    CountingEstimator net(1, 16, 20);
    NoiseCache cache(cache_dir.path.string());
    auto stats = batch_probe(manifest, 2, net, cache);
    CHECK(stats.probed == 3);
    CHECK(stats.skipped == 1);
    REQUIRE(cache.skipped().size() == 1);
    CHECK(cache.skipped()[0].path == bad.path);
    CHECK_FALSE(cache.skipped()[0].reason.empty());
}

TEST_CASE("probing through a real checkpoint leaves it untouched") {
    TempDir dir("anl_test_probe_frozen2");
    EpsilonNetConfig cfg;
    cfg.channels = 1;
    cfg.image_hw = 16;
    cfg.base_width = 4;
    cfg.levels = 2;
    DiffusionModel model(cfg, build_linear_schedule(10, 1e-3, 0.05));
    Rng init(97);
    model.net.init(init);
    model.is_trained = true;
    const std::string ckpt = (dir.path / "p.anlckpt").string();
    save_diffusion_checkpoint(model, ckpt);
    const std::string before = sha256_file(ckpt);

    auto loaded = load_diffusion_checkpoint(ckpt);
    auto img = random_image(1, 16, 98);
    estimate_noise(img, 1, loaded);
    estimate_noise(img, 5, loaded);
    CHECK(sha256_file(ckpt) == before);
}
