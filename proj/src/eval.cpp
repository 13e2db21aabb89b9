#include "anl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "anl/errors.hpp"
#include "anl/image_png.hpp"
#include "anl/metrics.hpp"
#include "nlohmann/json.hpp"

using nlohmann::json;

namespace anl {

Protocol protocol_from_string(const std::string& s) {
    if (s == "standard") return Protocol::Standard;
    if (s == "cross_dataset" || s == "cross-dataset") return Protocol::CrossDataset;
    if (s == "cross_model" || s == "cross-model") return Protocol::CrossModel;
    throw UsageError("unknown protocol: " + s);
}

std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::Standard: return "standard";
        case Protocol::CrossDataset: return "cross_dataset";
        default: return "cross_model";
    }
}

void EvalMatrix::compute_averages() {
    double acc = 0.0, ap = 0.0;
    int present = 0;
    for (const auto& c : cells) {
        if (c.absent) continue;
        acc += c.acc;
        ap += c.ap;
        ++present;
    }
    mean_acc = present ? acc / present : 0.0;
    mean_ap = present ? ap / present : 0.0;
}

namespace {

struct CellScores {
    double acc = 0.0;
    double ap = 0.0;
};

CellScores score_examples(DetectorModel& model, const std::vector<DetectorExample>& examples) {
    auto preds = predict_batch(model, examples);
    std::vector<int> yhat(preds.size()), y(examples.size());
    std::vector<double> scores(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        yhat[i] = preds[i].label;
        scores[i] = preds[i].p;
        y[i] = examples[i].label;
    }
    CellScores s;
    s.acc = accuracy(yhat, y);
    s.ap = average_precision(scores, y);
    return s;
}

double real_only_acc(DetectorModel& model, const std::vector<DetectorExample>& reals) {
    if (reals.empty()) return 0.0;
    auto preds = predict_batch(model, reals);
    std::vector<int> yhat(preds.size()), y(reals.size(), 0);
    for (std::size_t i = 0; i < preds.size(); ++i) yhat[i] = preds[i].label;
    return accuracy(yhat, y);
}

DetectorModel train_one(const std::vector<ManifestRow>& train_rows,
                        const std::vector<ManifestRow>& val_rows, const NoiseCache& cache,
                        NoiseEstimator& probe, const ProtocolConfig& cfg,
                        std::uint64_t seed_salt) {
    DetectorModel model;
    model.cfg = cfg.detector;
    model.cfg.channels = probe.channels();
    model.cfg.input_hw = probe.image_hw();
    model.probe_id = probe.id();
    model.net = DetectorNet(model.cfg);
    Rng init_rng(derive_seed(cfg.train.seed, 0xd37ec7, seed_salt));
    model.net.init(init_rng);

    auto train_examples = build_examples(train_rows, cache, probe.id(), model.cfg);
    auto val_examples = build_examples(val_rows, cache, probe.id(), model.cfg);
    DetectorTrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, 0x7ea1a, seed_salt);
    train_detector(model, std::move(train_examples), val_examples, tc);
    return model;
}

}  // namespace

EvalMatrix run_protocol(Protocol proto, const DatasetManifest& train_manifest,
                        const DatasetManifest& test_manifest, NoiseEstimator& probe,
                        NoiseCache& cache, const ProtocolConfig& cfg) {
    const int t = cfg.detector.timestep;
    batch_probe(train_manifest, t, probe, cache);
    if (&test_manifest != &train_manifest) batch_probe(test_manifest, t, probe, cache);

    EvalMatrix m;

    if (proto == Protocol::Standard || proto == Protocol::CrossDataset) {
        const DatasetManifest& test_src = proto == Protocol::Standard ? train_manifest
                                                                      : test_manifest;
        auto model = train_one(train_manifest.select("train"), train_manifest.select("val"),
                               cache, probe, cfg, 0);
        auto test_rows = test_src.select("test");
        if (test_rows.empty()) throw DataError("no test rows for evaluation");
        auto examples = build_examples(test_rows, cache, probe.id(), model.cfg);
        const auto s = score_examples(model, examples);

        m.train_ids = {cfg.train_name};
        m.test_ids = {proto == Protocol::Standard ? cfg.train_name : cfg.test_name};
        EvalCell c;
        c.train_generator = m.train_ids[0];
        c.test_generator = m.test_ids[0];
        c.acc = s.acc;
        c.ap = s.ap;
        for (const auto& e : examples) (e.label == 1 ? c.n_fake : c.n_real)++;
        m.cells = {c};

        std::vector<DetectorExample> reals;
        for (auto& e : examples)
            if (e.label == 0) reals.push_back(e);
        m.real_acc[m.train_ids[0]] = real_only_acc(model, reals);
        m.compute_averages();
        return m;
    }

    // cross_model
    const auto generators = train_manifest.generators();
    if (generators.empty()) throw DataError("cross_model: manifest has no fake generators");

    // fake train/test hash disjointness, verified on content hashes
    std::set<std::string> train_fake_hashes, test_fake_hashes;
    for (const auto& r : train_manifest.rows) {
        if (r.label != "fake") continue;
        if (r.split == "train" || r.split == "val") train_fake_hashes.insert(r.content_hash);
        if (r.split == "test") test_fake_hashes.insert(r.content_hash);
    }
    for (const auto& h : train_fake_hashes)
        if (test_fake_hashes.count(h))
            throw DataError("cross_model: fake image appears in both train and test: " + h);

    const auto shared_real_test = train_manifest.select("test", "real");
    m.train_ids = generators;
    m.test_ids = generators;
    m.cells.resize(generators.size() * generators.size());

    for (std::size_t gi = 0; gi < generators.size(); ++gi) {
        const auto& g = generators[gi];
        auto train_rows = train_manifest.select("train", "real");
        auto g_fakes = train_manifest.select("train", "fake", g);
        train_rows.insert(train_rows.end(), g_fakes.begin(), g_fakes.end());
        auto val_rows = train_manifest.select("val", "real");
        auto g_val = train_manifest.select("val", "fake", g);
        val_rows.insert(val_rows.end(), g_val.begin(), g_val.end());

        auto model = train_one(train_rows, val_rows, cache, probe, cfg, gi + 1);

        auto real_examples = build_examples(shared_real_test, cache, probe.id(), model.cfg);
        m.real_acc[g] = real_only_acc(model, real_examples);

        for (std::size_t hj = 0; hj < generators.size(); ++hj) {
            EvalCell& c = m.cell(gi, hj);
            c.train_generator = g;
            c.test_generator = generators[hj];
            auto fake_rows = train_manifest.select("test", "fake", generators[hj]);
            if (fake_rows.empty()) {
                c.absent = true;
                std::cerr << "[eval] warning: generator '" << generators[hj]
                          << "' has no test images; cell (" << g << ", " << generators[hj]
                          << ") excluded from averages\n";
                continue;
            }
            auto examples = build_examples(fake_rows, cache, probe.id(), model.cfg);
            examples.insert(examples.end(), real_examples.begin(), real_examples.end());
            const auto s = score_examples(model, examples);
            c.acc = s.acc;
            c.ap = s.ap;
            c.n_fake = static_cast<int>(fake_rows.size());
            c.n_real = static_cast<int>(shared_real_test.size());
        }
    }
    m.compute_averages();
    return m;
}

std::vector<std::pair<int, EvalMatrix>> sweep_timestep(const std::vector<int>& t_values,
                                                       Protocol proto,
                                                       const DatasetManifest& manifest,
                                                       NoiseEstimator& probe, NoiseCache& cache,
                                                       ProtocolConfig cfg) {
    for (int t : t_values)
        if (t < 1 || t > probe.timestep_count())
            throw DataError("sweep timestep " + std::to_string(t) + " outside schedule range");
    std::vector<std::pair<int, EvalMatrix>> out;
    for (int t : t_values) {
        cfg.detector.timestep = t;
        out.emplace_back(t, run_protocol(proto, manifest, manifest, probe, cache, cfg));
    }
    return out;
}

namespace {
std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

void write_matrix_csv(const EvalMatrix& m, const std::string& metric, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write: " + path);
    f << "train\\test";
    for (const auto& id : m.test_ids) f << "," << id;
    f << "\n";
    for (std::size_t i = 0; i < m.train_ids.size(); ++i) {
        f << m.train_ids[i];
        for (std::size_t j = 0; j < m.test_ids.size(); ++j) {
            const auto& c = m.cell(i, j);
            f << ",";
            if (!c.absent) f << fmt17(metric == "ap" ? c.ap : c.acc);
        }
        f << "\n";
    }
}

void write_matrix_json(const EvalMatrix& m, const std::string& path) {
    json j;
    j["train_ids"] = m.train_ids;
    j["test_ids"] = m.test_ids;
    j["mean_acc"] = m.mean_acc;
    j["mean_ap"] = m.mean_ap;
    j["real_acc"] = m.real_acc;
    j["cells"] = json::array();
    for (const auto& c : m.cells)
        j["cells"].push_back({{"train_generator", c.train_generator},
                              {"test_generator", c.test_generator},
                              {"acc", c.acc},
                              {"ap", c.ap},
                              {"n_real", c.n_real},
                              {"n_fake", c.n_fake},
                              {"absent", c.absent}});
    std::ofstream f(path);
    if (!f) throw DataError("cannot write: " + path);
    f << j.dump(2) << "\n";
}

EvalMatrix read_matrix_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read: " + path);
    json j;
    f >> j;
    EvalMatrix m;
    m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    m.mean_acc = j.at("mean_acc").get<double>();
    m.mean_ap = j.at("mean_ap").get<double>();
    for (const auto& [k, v] : j.at("real_acc").items()) m.real_acc[k] = v.get<double>();
    for (const auto& jc : j.at("cells")) {
        EvalCell c;
        c.train_generator = jc.at("train_generator").get<std::string>();
        c.test_generator = jc.at("test_generator").get<std::string>();
        c.acc = jc.at("acc").get<double>();
        c.ap = jc.at("ap").get<double>();
        c.n_real = jc.at("n_real").get<int>();
        c.n_fake = jc.at("n_fake").get<int>();
        c.absent = jc.at("absent").get<bool>();
        m.cells.push_back(std::move(c));
    }
    return m;
}

EvalMatrix read_matrix_csv_pair(const std::string& acc_path, const std::string& ap_path) {
    auto parse = [](const std::string& path, EvalMatrix& m, bool is_ap) {
        std::ifstream f(path);
        if (!f) throw DataError("cannot read: " + path);
        std::string line;
        if (!std::getline(f, line)) throw DataError("empty csv: " + path);
        std::vector<std::string> header;
        {
            std::stringstream ss(line);
            std::string tok;
            while (std::getline(ss, tok, ',')) header.push_back(tok);
        }
        std::vector<std::string> test_ids(header.begin() + 1, header.end());
        if (m.test_ids.empty()) {
            m.test_ids = test_ids;
        } else if (m.test_ids != test_ids) {
            throw DataError("csv pair header mismatch");
        }
        std::size_t row = 0;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string tok;
            std::getline(ss, tok, ',');
            if (m.train_ids.size() <= row) m.train_ids.push_back(tok);
            for (std::size_t j = 0; j < m.test_ids.size(); ++j) {
                std::getline(ss, tok, ',');
                if (m.cells.size() < (row + 1) * m.test_ids.size())
                    m.cells.resize((row + 1) * m.test_ids.size());
                EvalCell& c = m.cells[row * m.test_ids.size() + j];
                c.train_generator = m.train_ids[row];
                c.test_generator = m.test_ids[j];
                if (tok.empty()) {
                    c.absent = true;
                } else {
                    (is_ap ? c.ap : c.acc) = std::stod(tok);
                }
            }
            ++row;
        }
    };
    EvalMatrix m;
    parse(acc_path, m, false);
    parse(ap_path, m, true);
    m.compute_averages();
    return m;
}

void write_matrix_heatmap_png(const EvalMatrix& m, const std::string& metric,
                              const std::string& path, int cell_px) {
    const int rows = static_cast<int>(m.train_ids.size());
    const int cols = static_cast<int>(m.test_ids.size());
    Image8 img;
    img.width = cols * cell_px;
    img.height = rows * cell_px;
    img.channels = 1;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 255);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            const auto& c = m.cell(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            // darker = better; absent cells stay white
            const std::uint8_t shade =
                c.absent ? 255
                         : static_cast<std::uint8_t>(std::lround(
                               (1.0 - std::clamp(metric == "ap" ? c.ap : c.acc, 0.0, 1.0)) *
                               255.0));
            for (int y = 0; y < cell_px; ++y)
                for (int x = 0; x < cell_px; ++x) {
                    const bool border = y == 0 || x == 0 || y == cell_px - 1 || x == cell_px - 1;
                    img.pixels[static_cast<std::size_t>(i * cell_px + y) * img.width +
                               (j * cell_px + x)] = border ? 128 : shade;
                }
        }
    write_png(path, img);
}

void write_sweep_csv(const std::vector<std::pair<int, EvalMatrix>>& sweep,
                     const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write: " + path);
    f << "t,mean_acc,mean_ap\n";
    for (const auto& [t, m] : sweep)
        f << t << "," << fmt17(m.mean_acc) << "," << fmt17(m.mean_ap) << "\n";
}

}  // namespace anl
