// anl: end-to-end pipeline for noise-domain detection of diffusion-generated
// images: corpus synthesis, diffusion model training/sampling, single-step
// noise probing, attention-guided classification, evaluation protocols and
// spectral/entropy diagnostics.

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "anl/analysis.hpp"
#include "anl/attention.hpp"
#include "anl/checkpoint.hpp"
#include "anl/data_io.hpp"
#include "anl/detector.hpp"
#include "anl/diffusion.hpp"
#include "anl/epsilon_net.hpp"
#include "anl/errors.hpp"
#include "anl/eval.hpp"
#include "anl/kernels.hpp"
#include "anl/metrics.hpp"
#include "anl/noise_probe.hpp"
#include "anl/run_record.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anl;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool deterministic = true;
    int threads = 0;
    bool serial_kernels = false;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--seed", c.seed, "RNG seed")->each([&](const std::string&) {
        c.seed_given = true;
    });
    cmd->add_flag("--deterministic,!--no-deterministic", c.deterministic,
                  "Seeded determinism (default on); off draws a fresh seed and records it");
    cmd->add_option("--threads", c.threads, "OpenMP thread count (0 = runtime default)");
    cmd->add_flag("--serial-kernels", c.serial_kernels, "Use the serial reference kernels");
    cmd->add_flag("--force", c.force, "Recompute even if outputs already exist");
}

void apply_common(CommonOpts& c) {
    if (c.threads > 0) omp_set_num_threads(c.threads);
    kernels::set_default_exec(c.serial_kernels ? kernels::Exec::Serial
                                               : kernels::Exec::Parallel);
    if (!c.deterministic && !c.seed_given) {
        std::random_device rd;
        c.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
}

json common_config(const CommonOpts& c) {
    return {{"seed", c.seed},
            {"deterministic", c.deterministic},
            {"threads", c.threads},
            {"serial_kernels", c.serial_kernels},
            {"force", c.force}};
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string default_cache_dir() {
    if (const char* env = std::getenv("ANL_CACHE_ROOT")) return env;
    return "anl_cache";
}

DatasetManifest load_merged_manifests(const std::vector<std::string>& paths) {
    if (paths.empty()) throw UsageError("at least one --manifest is required");
    DatasetManifest m;
    for (const auto& p : paths) m.append(load_manifest(p));
    m.validate();
    return m;
}

bool manifest_files_valid(const std::string& manifest_path) {
    if (!fs::exists(manifest_path)) return false;
    try {
        DatasetManifest m = load_manifest(manifest_path);
        for (const auto& r : m.rows) {
            if (!fs::exists(r.path)) return false;
            if (sha256_file(r.path) != r.content_hash) return false;
        }
        return !m.rows.empty();
    } catch (const std::exception&) {
        return false;
    }
}

void finish(RunRecord& rec, const std::string& out_dir, const Timer& timer) {
    rec.git_describe = git_describe_string();
    rec.wall_time_s = timer.seconds();
    const std::string path = write_run_record(out_dir, rec);
    std::cout << "run record: " << path << "\n";
}

// ---------------------------------------------------------------------------

int cmd_gen_corpus(const std::string& out_dir, int n, int hw, int channels, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "gen-corpus";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(
        json{{"out", out_dir}, {"n", n}, {"hw", hw}, {"channels", channels}});

    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    if (!common.force && manifest_files_valid(manifest_path)) {
        std::cout << "corpus already complete, skipping: " << manifest_path << "\n";
        rec.status = "skipped";
        rec.artifacts = {manifest_path};
        finish(rec, out_dir, timer);
        return 0;
    }

    CorpusConfig cfg;
    cfg.image_hw = hw;
    cfg.channels = channels;
    DatasetManifest m = synthesize_real_corpus(n, common.seed, out_dir, cfg);
    std::cout << "wrote " << m.rows.size() << " images under " << out_dir << "\n";
    rec.artifacts = {manifest_path};
    finish(rec, out_dir, timer);
    return 0;
}

int cmd_train_diffusion(const std::vector<std::string>& manifests, const std::string& out_ckpt,
                        int steps, double beta_start, double beta_end, int width, int levels,
                        int hw, int channels, int epochs, int batch, double lr,
                        CommonOpts& common) {
    Timer timer;
    apply_common(common);
    const std::string out_dir = fs::path(out_ckpt).parent_path().string().empty()
                                    ? "."
                                    : fs::path(out_ckpt).parent_path().string();
    RunRecord rec;
    rec.subcommand = "train-diffusion";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"manifests", manifests},
                                    {"out", out_ckpt},
                                    {"T", steps},
                                    {"beta_start", beta_start},
                                    {"beta_end", beta_end},
                                    {"width", width},
                                    {"levels", levels},
                                    {"hw", hw},
                                    {"channels", channels},
                                    {"epochs", epochs},
                                    {"batch", batch},
                                    {"lr", lr}});

    if (!common.force && fs::exists(out_ckpt)) {
        try {
            auto model = load_diffusion_checkpoint(out_ckpt);
            if (model.is_trained) {
                std::cout << "checkpoint already trained, skipping: " << out_ckpt << " (id "
                          << model.checkpoint_id << ")\n";
                rec.status = "skipped";
                rec.artifacts = {out_ckpt};
                finish(rec, out_dir, timer);
                return 0;
            }
        } catch (const DataError&) {
            // fall through and retrain over the unreadable file
        }
    }

    DatasetManifest manifest = load_merged_manifests(manifests);
    auto train_rows = manifest.select("train", "real");
    auto val_rows = manifest.select("val", "real");
    if (train_rows.empty()) throw DataError("no real training rows in manifest");
    std::cout << "loading " << train_rows.size() << " train / " << val_rows.size()
              << " val images\n";
    auto train_images = load_images(train_rows, hw);
    auto val_images = load_images(val_rows, hw);

    EpsilonNetConfig net_cfg;
    net_cfg.channels = channels;
    net_cfg.image_hw = hw;
    net_cfg.base_width = width;
    net_cfg.levels = levels;
    DiffusionModel model(net_cfg, build_linear_schedule(steps, beta_start, beta_end));
    Rng init_rng(derive_seed(common.seed, 0x171a, 0));
    model.net.init(init_rng);

    DiffusionTrainConfig tc;
    tc.epochs = epochs;
    tc.batch = batch;
    tc.lr = lr;
    tc.seed = common.seed;
    const std::string curve = out_ckpt + ".loss.csv";
    auto result = train_epsilon_net(model, train_images, val_images, tc, curve);
    std::cout << "initial val loss " << result.initial_val_loss << ", final val loss "
              << (result.val_loss.empty() ? 0.0 : result.val_loss.back()) << "\n";

    fs::create_directories(out_dir);
    const std::string id = save_diffusion_checkpoint(model, out_ckpt);
    std::cout << "saved diffusion checkpoint " << out_ckpt << " (id " << id << ")\n";
    rec.artifacts = {out_ckpt, curve};
    finish(rec, out_dir, timer);
    return 0;
}

int cmd_sample_fakes(const std::string& ckpt, const std::string& out_dir, int n,
                     std::string generator_id, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "sample-fakes";
    rec.seed = common.seed;

    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    if (!common.force && manifest_files_valid(manifest_path)) {
        std::cout << "fake set already complete, skipping: " << manifest_path << "\n";
        rec.resolved_config = common_config(common);
        rec.status = "skipped";
        rec.artifacts = {manifest_path};
        finish(rec, out_dir, timer);
        return 0;
    }

    auto model = load_diffusion_checkpoint(ckpt);
    if (generator_id.empty()) generator_id = "ddpm-" + model.checkpoint_id;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"ckpt", ckpt},
                                    {"out", out_dir},
                                    {"n", n},
                                    {"generator_id", generator_id}});

    fs::create_directories(out_dir);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        seeds[static_cast<std::size_t>(i)] =
            derive_seed(common.seed, 0x5a3e, static_cast<std::uint64_t>(i));
    auto samples = reverse_sample_batch(model, model.schedule, seeds);

    DatasetManifest m;
    for (int i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "fake_%05d.png", i);
        const std::string path = (fs::path(out_dir) / name).string();
        save_image_png(samples[static_cast<std::size_t>(i)].pixels, path);
        ManifestRow row;
        row.path = path;
        row.label = "fake";
        row.generator = generator_id;
        row.split = "train";
        row.content_hash = sha256_file(path);
        m.rows.push_back(std::move(row));
    }
    m = split_manifest(m, 0.8, 0.1, 0.1, common.seed);
    save_manifest(m, manifest_path);
    std::cout << "sampled " << n << " fakes from " << generator_id << " under " << out_dir
              << "\n";
    rec.artifacts = {manifest_path};
    finish(rec, out_dir, timer);
    return 0;
}

int cmd_probe(const std::vector<std::string>& manifests, const std::string& ckpt, int t,
              const std::string& cache_dir, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "probe";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(
        json{{"manifests", manifests}, {"ckpt", ckpt}, {"t", t}, {"cache", cache_dir}});

    DatasetManifest manifest = load_merged_manifests(manifests);
    auto model = load_diffusion_checkpoint(ckpt);
    NoiseCache cache = NoiseCache::open(cache_dir);
    auto stats = batch_probe(manifest, t, model, cache);
    std::cout << "probe t=" << t << ": " << stats.probed << " probed, " << stats.reused
              << " reused, " << stats.skipped << " skipped\n";
    if (stats.skipped > 0)
        for (const auto& s : cache.skipped())
            std::cerr << "  skipped " << s.path << ": " << s.reason << "\n";
    rec.artifacts = {(fs::path(cache_dir) / "index.json").string()};
    finish(rec, cache_dir, timer);
    return 0;
}

DetectorConfig make_detector_cfg(const std::string& mode, bool use_attention, int width,
                                 int stages, int t) {
    DetectorConfig cfg;
    cfg.input_mode = input_mode_from_string(mode);
    cfg.use_attention = use_attention;
    cfg.backbone_width = width;
    cfg.backbone_stages = stages;
    cfg.timestep = t;
    return cfg;
}

int cmd_train_detector(const std::vector<std::string>& manifests, const std::string& probe_ckpt,
                       const std::string& cache_dir, const std::string& out_ckpt,
                       const std::string& mode, bool use_attention, int width, int stages, int t,
                       double lr, int batch, int epochs, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    const std::string out_dir = fs::path(out_ckpt).parent_path().string().empty()
                                    ? "."
                                    : fs::path(out_ckpt).parent_path().string();
    RunRecord rec;
    rec.subcommand = "train-detector";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"manifests", manifests},
                                    {"probe_ckpt", probe_ckpt},
                                    {"cache", cache_dir},
                                    {"out", out_ckpt},
                                    {"input_mode", mode},
                                    {"use_attention", use_attention},
                                    {"width", width},
                                    {"stages", stages},
                                    {"t", t},
                                    {"lr", lr},
                                    {"batch", batch},
                                    {"epochs", epochs}});

    if (!common.force && fs::exists(out_ckpt)) {
        try {
            auto existing = load_detector_checkpoint(out_ckpt);
            if (existing.is_trained) {
                std::cout << "detector already trained, skipping: " << out_ckpt << " (id "
                          << existing.checkpoint_id << ")\n";
                rec.status = "skipped";
                rec.artifacts = {out_ckpt};
                finish(rec, out_dir, timer);
                return 0;
            }
        } catch (const DataError&) {
        }
    }

    DatasetManifest manifest = load_merged_manifests(manifests);
    auto probe = load_diffusion_checkpoint(probe_ckpt);
    NoiseCache cache = NoiseCache::open(cache_dir);
    batch_probe(manifest, t, probe, cache);

    DetectorModel model;
    model.cfg = make_detector_cfg(mode, use_attention, width, stages, t);
    model.cfg.channels = probe.channels();
    model.cfg.input_hw = probe.image_hw();
    model.probe_id = probe.id();
    model.net = DetectorNet(model.cfg);
    Rng init_rng(derive_seed(common.seed, 0xdec0, 0));
    model.net.init(init_rng);

    auto train_examples =
        build_examples(manifest.select("train"), cache, probe.id(), model.cfg);
    auto val_examples = build_examples(manifest.select("val"), cache, probe.id(), model.cfg);

    DetectorTrainConfig tc;
    tc.lr = lr;
    tc.batch = batch;
    tc.epochs = epochs;
    tc.seed = common.seed;
    const std::string curve = out_ckpt + ".loss.csv";
    auto result = train_detector(model, std::move(train_examples), val_examples, tc, curve);
    std::cout << "real:fake ratio " << result.class_ratio << ", best val acc "
              << result.best_val_acc << " at epoch " << result.best_epoch << "\n";

    fs::create_directories(out_dir);
    const std::string id = save_detector_checkpoint(model, out_ckpt);
    std::cout << "saved detector checkpoint " << out_ckpt << " (id " << id << ")\n";
    rec.artifacts = {out_ckpt, curve};
    finish(rec, out_dir, timer);
    return 0;
}

int cmd_infer(const std::string& image, const std::string& detector_ckpt,
              const std::string& probe_ckpt, const std::string& attention_out,
              CommonOpts& common) {
    apply_common(common);
    auto detector = load_detector_checkpoint(detector_ckpt);
    auto probe = load_diffusion_checkpoint(probe_ckpt);
    if (detector.probe_id != probe.checkpoint_id)
        std::cerr << "warning: detector was trained against probe " << detector.probe_id
                  << ", got " << probe.checkpoint_id << "\n";
    auto res = infer_image(image, detector, probe);
    if (!attention_out.empty() && detector.cfg.use_attention) {
        write_attention_png(res.attention, attention_out);
        std::cerr << "attention map written to " << attention_out << "\n";
    }
    json j{{"image", image},
           {"logit", res.prediction.logit},
           {"p_fake", res.prediction.p},
           {"label", res.prediction.label},
           {"verdict", res.prediction.label == 1 ? "fake" : "real"}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct EvalFlags {
    std::vector<std::string> manifests;
    std::vector<std::string> test_manifests;
    std::string probe_ckpt;
    std::string cache_dir;
    std::string out_dir = "eval_out";
    std::string protocol = "standard";
    std::string mode = "noise";
    bool use_attention = true;
    bool ablate = false;
    int width = 6;
    int stages = 4;
    int t = 1;
    double lr = 1e-5;
    int batch = 64;
    int epochs = 20;
    bool heatmap = true;
};

void write_matrix_outputs(const EvalMatrix& m, const std::string& out_dir,
                          const std::string& stem, bool heatmap,
                          std::vector<std::string>& artifacts) {
    fs::create_directories(out_dir);
    const std::string acc_csv = (fs::path(out_dir) / (stem + "_acc.csv")).string();
    const std::string ap_csv = (fs::path(out_dir) / (stem + "_ap.csv")).string();
    const std::string jpath = (fs::path(out_dir) / (stem + ".json")).string();
    write_matrix_csv(m, "acc", acc_csv);
    write_matrix_csv(m, "ap", ap_csv);
    write_matrix_json(m, jpath);
    artifacts.insert(artifacts.end(), {acc_csv, ap_csv, jpath});
    if (heatmap) {
        const std::string acc_png = (fs::path(out_dir) / (stem + "_acc.png")).string();
        const std::string ap_png = (fs::path(out_dir) / (stem + "_ap.png")).string();
        write_matrix_heatmap_png(m, "acc", acc_png);
        write_matrix_heatmap_png(m, "ap", ap_png);
        artifacts.insert(artifacts.end(), {acc_png, ap_png});
    }
}

int cmd_eval(EvalFlags& f, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "eval";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"manifests", f.manifests},
                                    {"test_manifests", f.test_manifests},
                                    {"probe_ckpt", f.probe_ckpt},
                                    {"cache", f.cache_dir},
                                    {"out", f.out_dir},
                                    {"protocol", f.protocol},
                                    {"input_mode", f.mode},
                                    {"use_attention", f.use_attention},
                                    {"ablate_attention", f.ablate},
                                    {"width", f.width},
                                    {"stages", f.stages},
                                    {"t", f.t},
                                    {"lr", f.lr},
                                    {"batch", f.batch},
                                    {"epochs", f.epochs}});

    const Protocol proto = protocol_from_string(f.protocol);
    DatasetManifest train_m = load_merged_manifests(f.manifests);
    DatasetManifest test_m;
    const bool has_test = !f.test_manifests.empty();
    if (proto == Protocol::CrossDataset && !has_test)
        throw UsageError("cross_dataset needs --test-manifest");
    if (has_test) test_m = load_merged_manifests(f.test_manifests);

    auto probe = load_diffusion_checkpoint(f.probe_ckpt);
    NoiseCache cache = NoiseCache::open(f.cache_dir);

    ProtocolConfig cfg;
    cfg.detector = make_detector_cfg(f.mode, f.use_attention, f.width, f.stages, f.t);
    cfg.train.lr = f.lr;
    cfg.train.batch = f.batch;
    cfg.train.epochs = f.epochs;
    cfg.train.seed = common.seed;
    cfg.train_name = f.manifests.front();
    cfg.test_name = has_test ? f.test_manifests.front() : cfg.train_name;

    EvalMatrix m = run_protocol(proto, train_m, has_test ? test_m : train_m, probe, cache, cfg);
    std::cout << "protocol " << f.protocol << ": mean ACC " << m.mean_acc << ", mean AP "
              << m.mean_ap << "\n";
    write_matrix_outputs(m, f.out_dir, "eval_" + f.protocol, f.heatmap, rec.artifacts);

    if (f.ablate) {
        // Paired rows: same protocol with the attention map removed.
        ProtocolConfig cfg_no_am = cfg;
        cfg_no_am.detector.use_attention = false;
        EvalMatrix m_no_am =
            run_protocol(proto, train_m, has_test ? test_m : train_m, probe, cache, cfg_no_am);
        write_matrix_outputs(m_no_am, f.out_dir, "eval_" + f.protocol + "_no_am", f.heatmap,
                             rec.artifacts);
        json ab{{"protocol", f.protocol},
                {"with_attention", {{"mean_acc", m.mean_acc}, {"mean_ap", m.mean_ap}}},
                {"without_attention",
                 {{"mean_acc", m_no_am.mean_acc}, {"mean_ap", m_no_am.mean_ap}}}};
        const std::string ab_path = (fs::path(f.out_dir) / "ablation.json").string();
        std::ofstream out(ab_path);
        out << ab.dump(2) << "\n";
        rec.artifacts.push_back(ab_path);
        std::cout << "ablation (w/o attention): mean ACC " << m_no_am.mean_acc << ", mean AP "
                  << m_no_am.mean_ap << "\n";
    }
    finish(rec, f.out_dir, timer);
    return 0;
}

int cmd_sweep(EvalFlags& f, const std::string& t_values_str, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "sweep-timestep";
    rec.seed = common.seed;

    std::vector<int> ts;
    {
        std::stringstream ss(t_values_str);
        std::string tok;
        while (std::getline(ss, tok, ',')) ts.push_back(std::stoi(tok));
    }
    if (ts.empty()) throw UsageError("--t-values must name at least one timestep");

    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"manifests", f.manifests},
                                    {"probe_ckpt", f.probe_ckpt},
                                    {"cache", f.cache_dir},
                                    {"out", f.out_dir},
                                    {"protocol", f.protocol},
                                    {"t_values", ts},
                                    {"epochs", f.epochs}});

    DatasetManifest manifest = load_merged_manifests(f.manifests);
    auto probe = load_diffusion_checkpoint(f.probe_ckpt);
    NoiseCache cache = NoiseCache::open(f.cache_dir);

    ProtocolConfig cfg;
    cfg.detector = make_detector_cfg(f.mode, f.use_attention, f.width, f.stages, f.t);
    cfg.train.lr = f.lr;
    cfg.train.batch = f.batch;
    cfg.train.epochs = f.epochs;
    cfg.train.seed = common.seed;
    cfg.train_name = f.manifests.front();

    auto sweep = sweep_timestep(ts, protocol_from_string(f.protocol), manifest, probe, cache, cfg);
    fs::create_directories(f.out_dir);
    const std::string curve = (fs::path(f.out_dir) / "sweep.csv").string();
    write_sweep_csv(sweep, curve);
    rec.artifacts.push_back(curve);
    for (const auto& [t, m] : sweep) {
        std::cout << "t=" << t << ": mean ACC " << m.mean_acc << ", mean AP " << m.mean_ap
                  << "\n";
        write_matrix_outputs(m, f.out_dir, "sweep_t" + std::to_string(t), f.heatmap,
                             rec.artifacts);
    }
    finish(rec, f.out_dir, timer);
    return 0;
}

int cmd_analyze_psd(const std::vector<std::string>& manifests, const std::string& probe_ckpt,
                    const std::string& cache_dir, const std::string& out_dir, int t, bool png,
                    CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "analyze-psd";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"manifests", manifests},
                                    {"probe_ckpt", probe_ckpt},
                                    {"cache", cache_dir},
                                    {"out", out_dir},
                                    {"t", t},
                                    {"png", png}});

    DatasetManifest manifest = load_merged_manifests(manifests);
    auto probe = load_diffusion_checkpoint(probe_ckpt);
    NoiseCache cache = NoiseCache::open(cache_dir);
    batch_probe(manifest, t, probe, cache);

    // per-image PSD of predicted noise, averaged per class
    PsdCurve mean_real, mean_fake;
    std::vector<double> flat_real, flat_fake;
    int n_real = 0, n_fake = 0;
    for (const auto& row : manifest.rows) {
        auto noise = cache.load(row.content_hash, probe.id(), t);
        if (!noise) continue;
        PsdCurve c = radial_psd(*noise);
        auto& mean = row.label == "real" ? mean_real : mean_fake;
        auto& count = row.label == "real" ? n_real : n_fake;
        if (mean.power.empty()) mean = c;
        else
            for (std::size_t i = 0; i < c.power.size(); ++i) mean.power[i] += c.power[i];
        ++count;
        (row.label == "real" ? flat_real : flat_fake).push_back(flatness_ratio(c));
    }
    if (n_real > 0)
        for (auto& p : mean_real.power) p /= n_real;
    if (n_fake > 0)
        for (auto& p : mean_fake.power) p /= n_fake;

    fs::create_directories(out_dir);
    json summary{{"n_real", n_real}, {"n_fake", n_fake}, {"t", t}};
    if (n_real > 0) {
        const std::string path = (fs::path(out_dir) / "psd_real.csv").string();
        write_psd_csv(mean_real, path);
        rec.artifacts.push_back(path);
        summary["real_flatness_mean"] =
            kernels::reduce_sum(flat_real.data(), static_cast<std::int64_t>(flat_real.size())) /
            static_cast<double>(flat_real.size());
    }
    if (n_fake > 0) {
        const std::string path = (fs::path(out_dir) / "psd_fake.csv").string();
        write_psd_csv(mean_fake, path);
        rec.artifacts.push_back(path);
        summary["fake_flatness_mean"] =
            kernels::reduce_sum(flat_fake.data(), static_cast<std::int64_t>(flat_fake.size())) /
            static_cast<double>(flat_fake.size());
    }
    if (n_real > 0 && n_fake > 0) {
        // one-sided: real predicted noise is less flat (higher ratio)
        summary["p_real_flatter_than_fake"] = rank_sum_p_greater(flat_real, flat_fake);
    }
    const std::string spath = (fs::path(out_dir) / "psd_summary.json").string();
    {
        std::ofstream f(spath);
        f << summary.dump(2) << "\n";
    }
    rec.artifacts.push_back(spath);
    if (png && n_real > 0 && n_fake > 0) {
        const std::string ppath = (fs::path(out_dir) / "psd.png").string();
        write_psd_plot_png({mean_real, mean_fake}, ppath);
        rec.artifacts.push_back(ppath);
    }
    std::cout << summary.dump(2) << "\n";
    finish(rec, out_dir, timer);
    return 0;
}

int cmd_analyze_lem(const std::string& image, const std::string& probe_ckpt,
                    const std::string& out_dir, int t, int window, int stride, int bins,
                    bool png, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "analyze-lem";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"image", image},
                                    {"probe_ckpt", probe_ckpt},
                                    {"out", out_dir},
                                    {"t", t},
                                    {"window", window},
                                    {"stride", stride},
                                    {"bins", bins},
                                    {"png", png}});

    auto probe = load_diffusion_checkpoint(probe_ckpt);
    LatentImage img = load_and_normalize(image, probe.image_hw());
    PredictedNoise noise = estimate_noise(img, t, probe);
    EntropyMap lem = local_entropy_map(noise, window, stride, bins);

    fs::create_directories(out_dir);
    const std::string stem = fs::path(image).stem().string();
    const std::string cpath = (fs::path(out_dir) / (stem + "_lem.csv")).string();
    write_entropy_csv(lem, cpath);
    rec.artifacts.push_back(cpath);
    if (png) {
        const std::string ppath = (fs::path(out_dir) / (stem + "_lem.png")).string();
        write_entropy_png(lem, ppath);
        const std::string npath = (fs::path(out_dir) / (stem + "_noise.png")).string();
        Tensor vis = noise.values;
        double lo = vis[0], hi = vis[0];
        for (std::int64_t i = 0; i < vis.size(); ++i) {
            lo = std::min(lo, vis[i]);
            hi = std::max(hi, vis[i]);
        }
        const double span = hi > lo ? hi - lo : 1.0;
        for (std::int64_t i = 0; i < vis.size(); ++i)
            vis[i] = (vis[i] - lo) / span * 2.0 - 1.0;
        save_image_png(vis, npath);
        rec.artifacts.insert(rec.artifacts.end(), {ppath, npath});
    }
    std::cout << "entropy grid " << lem.values.dim(0) << "x" << lem.values.dim(1)
              << " written to " << cpath << "\n";
    finish(rec, out_dir, timer);
    return 0;
}

int cmd_report(const std::string& dir, const std::string& out_path, CommonOpts& common) {
    Timer timer;
    apply_common(common);
    RunRecord rec;
    rec.subcommand = "report";
    rec.seed = common.seed;
    rec.resolved_config = common_config(common);
    rec.resolved_config.update(json{{"dir", dir}, {"out", out_path}});

    std::ostringstream md;
    md << "# Evaluation report\n\n";

    auto render_matrix = [&](const EvalMatrix& m, const std::string& title) {
        md << "## " << title << "\n\n";
        md << "| train \\ test |";
        for (const auto& id : m.test_ids) md << " " << id << " |";
        md << "\n|---|";
        for (std::size_t j = 0; j < m.test_ids.size(); ++j) md << "---|";
        md << "\n";
        for (std::size_t i = 0; i < m.train_ids.size(); ++i) {
            md << "| " << m.train_ids[i] << " |";
            for (std::size_t j = 0; j < m.test_ids.size(); ++j) {
                const auto& c = m.cell(i, j);
                if (c.absent)
                    md << " - |";
                else {
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), " %.4f / %.4f |", c.acc, c.ap);
                    md << buf;
                }
            }
            md << "\n";
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "\nmean ACC %.4f, mean AP %.4f", m.mean_acc, m.mean_ap);
        md << buf << "\n";
        if (!m.real_acc.empty()) {
            md << "\nreal-set accuracy per detector: ";
            bool first = true;
            for (const auto& [k, v] : m.real_acc) {
                std::snprintf(buf, sizeof(buf), "%s%s=%.4f", first ? "" : ", ", k.c_str(), v);
                md << buf;
                first = false;
            }
            md << "\n";
        }
        md << "\n";
    };

    bool found = false;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() == ".json" && name.rfind("eval_", 0) == 0 &&
            name.find("_no_am") == std::string::npos) {
            render_matrix(read_matrix_json(entry.path().string()),
                          "Matrix: " + entry.path().stem().string());
            found = true;
        }
    }

    const fs::path ab = fs::path(dir) / "ablation.json";
    if (fs::exists(ab)) {
        std::ifstream f(ab);
        json j;
        f >> j;
        md << "## Attention-map ablation (" << j.at("protocol").get<std::string>() << ")\n\n";
        md << "| variant | mean ACC | mean AP |\n|---|---|---|\n";
        char buf[96];
        std::snprintf(buf, sizeof(buf), "| without attention map | %.4f | %.4f |\n",
                      j.at("without_attention").at("mean_acc").get<double>(),
                      j.at("without_attention").at("mean_ap").get<double>());
        md << buf;
        std::snprintf(buf, sizeof(buf), "| full (with attention map) | %.4f | %.4f |\n",
                      j.at("with_attention").at("mean_acc").get<double>(),
                      j.at("with_attention").at("mean_ap").get<double>());
        md << buf << "\n";
        found = true;
    }

    const fs::path sweep = fs::path(dir) / "sweep.csv";
    if (fs::exists(sweep)) {
        md << "## Timestep sweep\n\n```\n";
        std::ifstream f(sweep);
        md << f.rdbuf() << "```\n\n";
        found = true;
    }

    const fs::path psd = fs::path(dir) / "psd_summary.json";
    if (fs::exists(psd)) {
        md << "## Spectral summary\n\n```json\n";
        std::ifstream f(psd);
        md << f.rdbuf() << "```\n\n";
        found = true;
    }

    if (!found) throw DataError("no evaluation artifacts found under " + dir);

    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write report: " + out_path);
    out << md.str();
    std::cout << "report written to " << out_path << "\n";
    rec.artifacts = {out_path};
    finish(rec, fs::path(out_path).parent_path().string().empty()
                    ? "."
                    : fs::path(out_path).parent_path().string(),
           timer);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"noise-domain forensic pipeline for diffusion-generated images"};
    app.require_subcommand(1);

    try {
        // gen-corpus
        auto* gen = app.add_subcommand("gen-corpus", "Synthesize a procedural real-image corpus");
        struct {
            std::string out = "corpus";
            int n = 2000, hw = 32, channels = 1;
            CommonOpts common;
        } g;
        gen->add_option("--out", g.out, "Output directory");
        gen->add_option("--n", g.n, "Number of images");
        gen->add_option("--hw", g.hw, "Image side length");
        gen->add_option("--channels", g.channels, "1 (gray) or 3 (rgb)");
        add_common(gen, g.common);

        // train-diffusion
        auto* td = app.add_subcommand("train-diffusion", "Train the denoising diffusion model");
        struct {
            std::vector<std::string> manifests;
            std::string out = "diffusion.anlckpt";
            int T = 200, width = 8, levels = 2, hw = 32, channels = 1, epochs = 30, batch = 32;
            double beta_start = 1e-4, beta_end = 0.02, lr = 1e-3;
            CommonOpts common;
        } d;
        td->add_option("--manifest", d.manifests, "Manifest path(s)")->required();
        td->add_option("--out", d.out, "Checkpoint output path");
        td->add_option("--T", d.T, "Diffusion steps");
        td->add_option("--beta-start", d.beta_start, "Schedule start");
        td->add_option("--beta-end", d.beta_end, "Schedule end");
        td->add_option("--width", d.width, "Base channel width");
        td->add_option("--levels", d.levels, "Resolution levels");
        td->add_option("--hw", d.hw, "Image side length");
        td->add_option("--channels", d.channels, "Image channels");
        td->add_option("--epochs", d.epochs, "Training epochs");
        td->add_option("--batch", d.batch, "Batch size");
        td->add_option("--lr", d.lr, "Learning rate");
        add_common(td, d.common);

        // sample-fakes
        auto* sf = app.add_subcommand("sample-fakes", "Sample images from a trained model");
        struct {
            std::string ckpt, out = "fakes", generator_id;
            int n = 1000;
            CommonOpts common;
        } s;
        sf->add_option("--ckpt", s.ckpt, "Diffusion checkpoint")->required();
        sf->add_option("--out", s.out, "Output directory");
        sf->add_option("--n", s.n, "Number of samples");
        sf->add_option("--generator-id", s.generator_id, "Generator tag (default ddpm-<ckpt id>)");
        add_common(sf, s.common);

        // probe
        auto* pr = app.add_subcommand("probe", "Cache single-step noise estimates for a manifest");
        struct {
            std::vector<std::string> manifests;
            std::string ckpt, cache = default_cache_dir();
            int t = 1;
            CommonOpts common;
        } p;
        pr->add_option("--manifest", p.manifests, "Manifest path(s)")->required();
        pr->add_option("--ckpt", p.ckpt, "Diffusion checkpoint")->required();
        pr->add_option("--t", p.t, "Probe timestep");
        pr->add_option("--cache", p.cache, "Cache directory (env ANL_CACHE_ROOT)");
        add_common(pr, p.common);

        // train-detector
        auto* tdet = app.add_subcommand("train-detector", "Train the forensic classifier");
        struct {
            std::vector<std::string> manifests;
            std::string probe_ckpt, cache = default_cache_dir(), out = "detector.anlckpt";
            std::string mode = "noise";
            bool use_attention = true;
            int width = 6, stages = 4, t = 1, batch = 64, epochs = 20;
            double lr = 1e-5;
            CommonOpts common;
        } dt;
        tdet->add_option("--manifest", dt.manifests, "Manifest path(s)")->required();
        tdet->add_option("--probe-ckpt", dt.probe_ckpt, "Diffusion checkpoint")->required();
        tdet->add_option("--cache", dt.cache, "Noise cache directory");
        tdet->add_option("--out", dt.out, "Detector checkpoint output");
        tdet->add_option("--input-mode", dt.mode, "noise | image");
        tdet->add_flag("--attention,!--no-attention", dt.use_attention,
                       "Attention-guided modulation (default on)");
        tdet->add_option("--width", dt.width, "Backbone width");
        tdet->add_option("--stages", dt.stages, "Backbone stages");
        tdet->add_option("--t", dt.t, "Probe timestep");
        tdet->add_option("--lr", dt.lr, "Learning rate");
        tdet->add_option("--batch", dt.batch, "Batch size");
        tdet->add_option("--epochs", dt.epochs, "Epochs");
        add_common(tdet, dt.common);

        // infer
        auto* inf = app.add_subcommand("infer", "Classify a single image");
        struct {
            std::string image, detector, probe, attention_out;
            CommonOpts common;
        } i;
        inf->add_option("--image", i.image, "Image path")->required();
        inf->add_option("--detector", i.detector, "Detector checkpoint")->required();
        inf->add_option("--probe-ckpt", i.probe, "Diffusion checkpoint")->required();
        inf->add_option("--attention-out", i.attention_out, "Write the attention map PNG here");
        add_common(inf, i.common);

        // eval
        auto* ev = app.add_subcommand("eval", "Run an evaluation protocol");
        EvalFlags ef;
        CommonOpts ec;
        ev->add_option("--manifest", ef.manifests, "Training manifest(s)")->required();
        ev->add_option("--test-manifest", ef.test_manifests, "Test manifest(s) (cross_dataset)");
        ev->add_option("--probe-ckpt", ef.probe_ckpt, "Diffusion checkpoint")->required();
        ev->add_option("--cache", ef.cache_dir, "Noise cache directory");
        ev->add_option("--out", ef.out_dir, "Output directory");
        ev->add_option("--protocol", ef.protocol, "standard | cross_dataset | cross_model");
        ev->add_option("--input-mode", ef.mode, "noise | image");
        ev->add_flag("--attention,!--no-attention", ef.use_attention, "Attention modulation");
        ev->add_flag("--ablate-attention", ef.ablate, "Also run with attention off");
        ev->add_option("--width", ef.width, "Backbone width");
        ev->add_option("--stages", ef.stages, "Backbone stages");
        ev->add_option("--t", ef.t, "Probe timestep");
        ev->add_option("--lr", ef.lr, "Learning rate");
        ev->add_option("--batch", ef.batch, "Batch size");
        ev->add_option("--epochs", ef.epochs, "Epochs");
        ev->add_flag("--heatmap,!--no-heatmap", ef.heatmap, "Emit heatmap PNGs");
        add_common(ev, ec);

        // sweep-timestep
        auto* sw = app.add_subcommand("sweep-timestep", "Re-probe/train/evaluate per timestep");
        EvalFlags swf;
        swf.protocol = "cross_model";
        std::string t_values = "1,5,20";
        CommonOpts swc;
        sw->add_option("--manifest", swf.manifests, "Manifest path(s)")->required();
        sw->add_option("--probe-ckpt", swf.probe_ckpt, "Diffusion checkpoint")->required();
        sw->add_option("--cache", swf.cache_dir, "Noise cache directory");
        sw->add_option("--out", swf.out_dir, "Output directory");
        sw->add_option("--protocol", swf.protocol, "Protocol per point");
        sw->add_option("--t-values", t_values, "Comma-separated timesteps");
        sw->add_option("--input-mode", swf.mode, "noise | image");
        sw->add_flag("--attention,!--no-attention", swf.use_attention, "Attention modulation");
        sw->add_option("--width", swf.width, "Backbone width");
        sw->add_option("--stages", swf.stages, "Backbone stages");
        sw->add_option("--lr", swf.lr, "Learning rate");
        sw->add_option("--batch", swf.batch, "Batch size");
        sw->add_option("--epochs", swf.epochs, "Epochs");
        sw->add_flag("--heatmap,!--no-heatmap", swf.heatmap, "Emit heatmap PNGs");
        add_common(sw, swc);

        // analyze-psd
        auto* ap = app.add_subcommand("analyze-psd", "Radial PSD of predicted noise per class");
        struct {
            std::vector<std::string> manifests;
            std::string probe_ckpt, cache = default_cache_dir(), out = "psd_out";
            int t = 1;
            bool png = false;
            CommonOpts common;
        } a;
        ap->add_option("--manifest", a.manifests, "Manifest path(s)")->required();
        ap->add_option("--probe-ckpt", a.probe_ckpt, "Diffusion checkpoint")->required();
        ap->add_option("--cache", a.cache, "Noise cache directory");
        ap->add_option("--out", a.out, "Output directory");
        ap->add_option("--t", a.t, "Probe timestep");
        ap->add_flag("--png", a.png, "Also write a log-log plot PNG");
        add_common(ap, a.common);

        // analyze-lem
        auto* al = app.add_subcommand("analyze-lem", "Local entropy map of predicted noise");
        struct {
            std::string image, probe_ckpt, out = "lem_out";
            int t = 1, window = 16, stride = 8, bins = 32;
            bool png = true;
            CommonOpts common;
        } l;
        al->add_option("--image", l.image, "Image path")->required();
        al->add_option("--probe-ckpt", l.probe_ckpt, "Diffusion checkpoint")->required();
        al->add_option("--out", l.out, "Output directory");
        al->add_option("--t", l.t, "Probe timestep");
        al->add_option("--window", l.window, "Window side");
        al->add_option("--stride", l.stride, "Window stride");
        al->add_option("--bins", l.bins, "Histogram bins");
        al->add_flag("--png,!--no-png", l.png, "Write grayscale PNGs");
        add_common(al, l.common);

        // report
        auto* rp = app.add_subcommand("report", "Render evaluation artifacts as markdown");
        struct {
            std::string dir = "eval_out", out = "report.md";
            CommonOpts common;
        } r;
        rp->add_option("--dir", r.dir, "Directory with evaluation artifacts");
        rp->add_option("--out", r.out, "Report output path");
        add_common(rp, r.common);

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);  // prints help, exit 0
        } catch (const CLI::ParseError& e) {
            std::cerr << e.what() << "\n";
            std::cerr << app.help() << "\n";
            return 1;
        }

        if (gen->parsed())
            return cmd_gen_corpus(g.out, g.n, g.hw, g.channels, g.common);
        if (td->parsed())
            return cmd_train_diffusion(d.manifests, d.out, d.T, d.beta_start, d.beta_end,
                                       d.width, d.levels, d.hw, d.channels, d.epochs, d.batch,
                                       d.lr, d.common);
        if (sf->parsed()) return cmd_sample_fakes(s.ckpt, s.out, s.n, s.generator_id, s.common);
        if (pr->parsed()) return cmd_probe(p.manifests, p.ckpt, p.t, p.cache, p.common);
        if (tdet->parsed())
            return cmd_train_detector(dt.manifests, dt.probe_ckpt, dt.cache, dt.out, dt.mode,
                                      dt.use_attention, dt.width, dt.stages, dt.t, dt.lr,
                                      dt.batch, dt.epochs, dt.common);
        if (inf->parsed())
            return cmd_infer(i.image, i.detector, i.probe, i.attention_out, i.common);
        if (ev->parsed()) {
            if (ef.cache_dir.empty()) ef.cache_dir = default_cache_dir();
            return cmd_eval(ef, ec);
        }
        if (sw->parsed()) {
            if (swf.cache_dir.empty()) swf.cache_dir = default_cache_dir();
            return cmd_sweep(swf, t_values, swc);
        }
        if (ap->parsed())
            return cmd_analyze_psd(a.manifests, a.probe_ckpt, a.cache, a.out, a.t, a.png,
                                   a.common);
        if (al->parsed())
            return cmd_analyze_lem(l.image, l.probe_ckpt, l.out, l.t, l.window, l.stride, l.bins,
                                   l.png, l.common);
        if (rp->parsed()) return cmd_report(r.dir, r.out, r.common);
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
