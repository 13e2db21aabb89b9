#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <set>

#include "anl/data_io.hpp"
#include "anl/errors.hpp"
#include "anl/eval.hpp"
#include "anl/image_png.hpp"
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

// Identity-like probe stub: the predicted noise is the image itself, so the
// detector separates structured reals from white-noise fakes quickly.
class StubEstimator : public NoiseEstimator {
public:
    StubEstimator(int c, int hw, int T) : c_(c), hw_(hw), T_(T) {}
    Tensor predict(const Tensor& x, const std::vector<int>& t) override {
        Tensor out = x;
        for (int n = 0; n < x.dim(0); ++n) {
            const double scale = 1.0 / (1.0 + 0.3 * t[static_cast<std::size_t>(n)]);
            const std::int64_t per = out.size() / x.dim(0);
            for (std::int64_t i = 0; i < per; ++i)
                out[static_cast<std::int64_t>(n) * per + i] *= scale;
        }
        return out;
    }
    int channels() const override { return c_; }
    int out_channels() const override { return c_; }
    int image_hw() const override { return hw_; }
    int timestep_count() const override { return T_; }
    std::string id() const override { return "stub-probe"; }
    bool trained() const override { return true; }

private:
    int c_, hw_, T_;
};

// Real rows: procedural textures. Fake rows per generator: white noise.
DatasetManifest build_tiny_dataset(const fs::path& dir, int n_real,
                                   const std::vector<std::pair<std::string, int>>& generators,
                                   std::uint64_t seed) {
    CorpusConfig cfg;
    cfg.image_hw = 8;
    DatasetManifest m = synthesize_real_corpus(n_real, seed, (dir / "real").string(), cfg);
    int idx = 0;
    for (const auto& [gen, count] : generators) {
        DatasetManifest fakes;
        for (int i = 0; i < count; ++i) {
            Rng rng(derive_seed(seed, 0xfa6e + static_cast<std::uint64_t>(idx), i));
            Tensor img({1, 8, 8});
            for (std::int64_t j = 0; j < img.size(); ++j) img[j] = rng.gaussian() * 0.5;
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03d.png", gen.c_str(), i);
            fs::create_directories(dir / "fake");
            const std::string path = (dir / "fake" / name).string();
            save_image_png(img, path);
            ManifestRow row;
            row.path = path;
            row.label = "fake";
            row.generator = gen;
            row.split = "train";
            row.content_hash = sha256_file(path);
            fakes.rows.push_back(std::move(row));
        }
        fakes = split_manifest(fakes, 0.6, 0.2, 0.2, seed + idx);
        m.append(fakes);
        ++idx;
    }
    return m;
}

ProtocolConfig tiny_protocol_cfg(std::uint64_t seed) {
    ProtocolConfig cfg;
    cfg.detector.backbone_width = 2;
    cfg.detector.backbone_stages = 2;
    cfg.detector.timestep = 1;
    cfg.train.epochs = 2;
    cfg.train.batch = 16;
    cfg.train.lr = 1e-3;
    cfg.train.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("cross_model with one generator yields a 1x1 matrix equal to its averages") {
    TempDir dir("anl_test_eval_single");
    TempDir cache_dir("anl_test_eval_single_cache");
    auto manifest = build_tiny_dataset(dir.path, 20, {{"g1", 10}}, 200);
    StubEstimator probe(1, 8, 30);
    NoiseCache cache(cache_dir.path.string());
    auto m = run_protocol(Protocol::CrossModel, manifest, manifest, probe, cache,
                          tiny_protocol_cfg(1));
    REQUIRE(m.cells.size() == 1);
    CHECK(m.train_ids == std::vector<std::string>{"g1"});
    CHECK(m.mean_acc == m.cells[0].acc);
    CHECK(m.mean_ap == m.cells[0].ap);
    CHECK(m.cells[0].n_fake == 2);
    CHECK(m.cells[0].n_real == 2);
    CHECK(m.real_acc.count("g1") == 1);
}

TEST_CASE("cross_model matrix: averages, determinism, disjointness, absent cells") {
    TempDir dir("anl_test_eval_grid");
    TempDir cache_dir("anl_test_eval_grid_cache");
    auto manifest = build_tiny_dataset(dir.path, 30, {{"g1", 10}, {"g2", 10}}, 300);
    StubEstimator probe(1, 8, 30);
    NoiseCache cache(cache_dir.path.string());

    auto m1 = run_protocol(Protocol::CrossModel, manifest, manifest, probe, cache,
                           tiny_protocol_cfg(2));
    REQUIRE(m1.cells.size() == 4);

    // averages equal recomputed means to 1e-12
    double acc = 0.0, ap = 0.0;
    for (const auto& c : m1.cells) {
        CHECK_FALSE(c.absent);
        CHECK(c.acc >= 0.0);
        CHECK(c.acc <= 1.0);
        CHECK(c.ap >= 0.0);
        CHECK(c.ap <= 1.0);
        acc += c.acc;
        ap += c.ap;
    }
    CHECK(std::fabs(m1.mean_acc - acc / 4.0) < 1e-12);
    CHECK(std::fabs(m1.mean_ap - ap / 4.0) < 1e-12);

    // identical seeds and manifests -> identical matrices
    NoiseCache cache2 = NoiseCache::open(cache_dir.path.string());
    auto m2 = run_protocol(Protocol::CrossModel, manifest, manifest, probe, cache2,
                           tiny_protocol_cfg(2));
    for (std::size_t i = 0; i < m1.cells.size(); ++i) {
        CHECK(m1.cells[i].acc == m2.cells[i].acc);
        CHECK(m1.cells[i].ap == m2.cells[i].ap);
    }

    // a fake hash in both train and test trips the disjointness check
    DatasetManifest corrupted = manifest;
    std::string dup_hash;
    for (const auto& r : corrupted.rows)
        if (r.label == "fake" && r.split == "test") dup_hash = r.content_hash;
    for (auto& r : corrupted.rows)
        if (r.label == "fake" && r.split == "train") {
            r.content_hash = dup_hash;
            break;
        }
    NoiseCache cache3 = NoiseCache::open(cache_dir.path.string());
    CHECK_THROWS_AS(
        run_protocol(Protocol::CrossModel, corrupted, corrupted, probe, cache3,
                     tiny_protocol_cfg(2)),
        DataError);

    // a generator with no test fakes becomes an absent cell, excluded from means
    DatasetManifest missing = manifest;
    for (auto& r : missing.rows)
        if (r.generator == "g2" && r.split == "test") r.split = "val";
    NoiseCache cache4 = NoiseCache::open(cache_dir.path.string());
    auto m3 = run_protocol(Protocol::CrossModel, missing, missing, probe, cache4,
                           tiny_protocol_cfg(2));
    int absent = 0;
    double sum_acc = 0.0;
    int present = 0;
    for (const auto& c : m3.cells) {
        if (c.absent) {
            ++absent;
            CHECK(c.test_generator == "g2");
        } else {
            sum_acc += c.acc;
            ++present;
        }
    }
    CHECK(absent == 2);
    CHECK(std::fabs(m3.mean_acc - sum_acc / present) < 1e-12);
}

TEST_CASE("matrix csv/json/heatmap outputs round-trip") {
    TempDir out("anl_test_eval_io");
    EvalMatrix m;
    m.train_ids = {"g1", "g2"};
    m.test_ids = {"g1", "g2"};
    m.cells.resize(4);
    const double vals[4][2] = {{0.875, 0.9375}, {0.625, 0.75}, {0.5, 0.5625}, {1.0, 1.0}};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            EvalCell& c = m.cell(i, j);
            c.train_generator = m.train_ids[i];
            c.test_generator = m.test_ids[j];
            c.acc = vals[2 * i + j][0] + 1e-13;  // exercise full double precision
            c.ap = vals[2 * i + j][1];
            c.n_real = 4;
            c.n_fake = 3;
        }
    m.cell(1, 1).absent = true;
    m.compute_averages();
    m.real_acc["g1"] = 0.75;
    m.real_acc["g2"] = 1.0;

    const std::string jpath = (out.path / "m.json").string();
    write_matrix_json(m, jpath);
    auto back = read_matrix_json(jpath);
    CHECK(back.train_ids == m.train_ids);
    CHECK(back.mean_acc == m.mean_acc);
    CHECK(back.mean_ap == m.mean_ap);
    CHECK(back.real_acc == m.real_acc);
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
        CHECK(back.cells[i].acc == m.cells[i].acc);
        CHECK(back.cells[i].ap == m.cells[i].ap);
        CHECK(back.cells[i].absent == m.cells[i].absent);
        CHECK(back.cells[i].n_real == m.cells[i].n_real);
    }

    const std::string acc_csv = (out.path / "acc.csv").string();
    const std::string ap_csv = (out.path / "ap.csv").string();
    write_matrix_csv(m, "acc", acc_csv);
    write_matrix_csv(m, "ap", ap_csv);
    auto csv_back = read_matrix_csv_pair(acc_csv, ap_csv);
    CHECK(csv_back.train_ids == m.train_ids);
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
        if (m.cells[i].absent) {
            CHECK(csv_back.cells[i].absent);
        } else {
            CHECK(csv_back.cells[i].acc == m.cells[i].acc);
            CHECK(csv_back.cells[i].ap == m.cells[i].ap);
        }
    }

    // heatmap: decoded shades equal round((1-acc)*255), darker = better
    const std::string hpath = (out.path / "heat.png").string();
    write_matrix_heatmap_png(m, "acc", hpath, 8);
    Image8 img = read_png(hpath);
    CHECK(img.width == 16);
    CHECK(img.height == 16);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const auto& c = m.cell(i, j);
            const std::uint8_t expect =
                c.absent ? 255
                         : static_cast<std::uint8_t>(std::lround((1.0 - c.acc) * 255.0));
            // interior pixel (borders are grid lines)
            const std::size_t px = (i * 8 + 4) * 16 + (j * 8 + 4);
            CHECK(img.pixels[px] == expect);
        }
}

TEST_CASE("standard and cross_dataset protocols produce single cells") {
    TempDir dir("anl_test_eval_std");
    TempDir dir2("anl_test_eval_std2");
    TempDir cache_dir("anl_test_eval_std_cache");
    auto mA = build_tiny_dataset(dir.path, 20, {{"g1", 10}}, 400);
    auto mB = build_tiny_dataset(dir2.path, 20, {{"g2", 10}}, 500);
    StubEstimator probe(1, 8, 30);
    NoiseCache cache(cache_dir.path.string());

    auto cfg = tiny_protocol_cfg(3);
    cfg.train_name = "setA";
    cfg.test_name = "setB";
    auto std_m = run_protocol(Protocol::Standard, mA, mA, probe, cache, cfg);
    REQUIRE(std_m.cells.size() == 1);
    CHECK(std_m.cells[0].n_real > 0);
    CHECK(std_m.cells[0].n_fake > 0);
    CHECK(std_m.train_ids[0] == "setA");

    auto xd_m = run_protocol(Protocol::CrossDataset, mA, mB, probe, cache, cfg);
    REQUIRE(xd_m.cells.size() == 1);
    CHECK(xd_m.test_ids[0] == "setB");
    // evaluated rows come from B's test split
    CHECK(xd_m.cells[0].n_fake == 2);
}

TEST_CASE("singleton sweep equals run_protocol at that timestep") {
    TempDir dir("anl_test_eval_sweep");
    TempDir cache_dir("anl_test_eval_sweep_cache");
    auto manifest = build_tiny_dataset(dir.path, 20, {{"g1", 10}}, 600);
    StubEstimator probe(1, 8, 30);
    NoiseCache cache(cache_dir.path.string());

    auto cfg = tiny_protocol_cfg(4);
    auto sweep = sweep_timestep({1}, Protocol::CrossModel, manifest, probe, cache, cfg);
    REQUIRE(sweep.size() == 1);
    CHECK(sweep[0].first == 1);

    NoiseCache cache2 = NoiseCache::open(cache_dir.path.string());
    cfg.detector.timestep = 1;
    auto direct = run_protocol(Protocol::CrossModel, manifest, manifest, probe, cache2, cfg);
    CHECK(sweep[0].second.mean_acc == direct.mean_acc);
    CHECK(sweep[0].second.mean_ap == direct.mean_ap);

    CHECK_THROWS_AS(sweep_timestep({0}, Protocol::CrossModel, manifest, probe, cache, cfg),
                    DataError);
    CHECK_THROWS_AS(sweep_timestep({31}, Protocol::CrossModel, manifest, probe, cache, cfg),
                    DataError);

    // sweep csv
    TempDir out("anl_test_eval_sweep_out");
    const std::string cpath = (out.path / "sweep.csv").string();
    write_sweep_csv(sweep, cpath);
    CHECK(fs::exists(cpath));
}
