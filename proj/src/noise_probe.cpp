#include "anl/noise_probe.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "anl/errors.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace anl {

PredictedNoise estimate_noise(const LatentImage& image, int t, NoiseEstimator& net) {
    const int c = net.channels(), hw = net.image_hw();
    if (image.pixels.ndim() != 3 || image.pixels.dim(0) != c || image.pixels.dim(1) != hw ||
        image.pixels.dim(2) != hw)
        throw DataError("estimate_noise: image geometry does not match probe checkpoint");
    if (t < 1 || t > net.timestep_count())
        throw DataError("estimate_noise: timestep out of range");

    Tensor batch({1, c, hw, hw});
    for (std::int64_t i = 0; i < image.pixels.size(); ++i) batch[i] = image.pixels[i];
    Tensor pred = net.predict(batch, {t});

    PredictedNoise out;
    out.values = Tensor({c, hw, hw});
    // 2C-channel estimators carry the noise estimate in the first C channels.
    for (std::int64_t i = 0; i < out.values.size(); ++i) out.values[i] = pred[i];
    out.timestep = t;
    out.probe_id = net.id();
    return out;
}

namespace {
constexpr char kTensorMagic[8] = {'A', 'N', 'L', 'T', 'E', 'N', 'S', '1'};
}

void write_tensor_file(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write tensor file: " + path);
    f.write(kTensorMagic, sizeof(kTensorMagic));
    const std::int32_t nd = t.ndim();
    f.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
    for (int i = 0; i < nd; ++i) {
        const std::int32_t d = t.dim(i);
        f.write(reinterpret_cast<const char*>(&d), sizeof(d));
    }
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    if (!f) throw DataError("short write: " + path);
}

Tensor read_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read tensor file: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
        throw DataError("bad tensor file magic: " + path);
    std::int32_t nd = 0;
    f.read(reinterpret_cast<char*>(&nd), sizeof(nd));
    if (!f || nd < 1 || nd > 8) throw DataError("bad tensor rank: " + path);
    std::vector<int> shape(static_cast<std::size_t>(nd));
    for (auto& d : shape) {
        std::int32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!f || v < 1) throw DataError("bad tensor dim: " + path);
        d = v;
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    if (!f) throw DataError("truncated tensor file: " + path);
    return t;
}

NoiseCache::NoiseCache(const std::string& dir) : dir_(dir) {
    fs::create_directories(fs::path(dir_) / "tensors");
}

NoiseCache NoiseCache::open(const std::string& dir) {
    NoiseCache c(dir);
    const fs::path index = fs::path(dir) / "index.json";
    if (fs::exists(index)) {
        std::ifstream f(index);
        json j;
        try {
            f >> j;
        } catch (const json::parse_error& e) {
            throw DataError("corrupt cache index " + index.string() + ": " + e.what());
        }
        for (const auto& e : j.at("entries")) {
            CacheEntry ce;
            ce.image_hash = e.at("image_hash").get<std::string>();
            ce.path = e.at("path").get<std::string>();
            ce.timestep = e.at("timestep").get<int>();
            ce.probe_id = e.at("probe_id").get<std::string>();
            ce.tensor_file = e.at("tensor_file").get<std::string>();
            ce.shape = e.at("shape").get<std::vector<int>>();
            c.entries_.push_back(std::move(ce));
        }
        if (j.contains("skipped"))
            for (const auto& s : j.at("skipped"))
                c.skipped_.push_back(
                    {s.at("path").get<std::string>(), s.at("reason").get<std::string>()});
    }
    return c;
}

std::string NoiseCache::key(const std::string& image_hash, const std::string& probe_id,
                            int t) const {
    return image_hash.substr(0, 24) + "_" + probe_id.substr(0, 16) + "_t" + std::to_string(t);
}

bool NoiseCache::contains(const std::string& image_hash, const std::string& probe_id,
                          int t) const {
    for (const auto& e : entries_)
        if (e.image_hash == image_hash && e.probe_id == probe_id && e.timestep == t) return true;
    return false;
}

std::optional<PredictedNoise> NoiseCache::load(const std::string& image_hash,
                                               const std::string& probe_id, int t) const {
    for (const auto& e : entries_) {
        if (e.image_hash == image_hash && e.probe_id == probe_id && e.timestep == t) {
            PredictedNoise n;
            n.values = read_tensor_file((fs::path(dir_) / "tensors" / e.tensor_file).string());
            n.timestep = e.timestep;
            n.probe_id = e.probe_id;
            return n;
        }
    }
    return std::nullopt;
}

void NoiseCache::store(const std::string& image_hash, const std::string& path,
                       const PredictedNoise& noise) {
    CacheEntry e;
    e.image_hash = image_hash;
    e.path = path;
    e.timestep = noise.timestep;
    e.probe_id = noise.probe_id;
    e.tensor_file = key(image_hash, noise.probe_id, noise.timestep) + ".anlt";
    e.shape = noise.values.shape();
    write_tensor_file(noise.values, (fs::path(dir_) / "tensors" / e.tensor_file).string());
    entries_.push_back(std::move(e));
}

void NoiseCache::record_skip(const std::string& path, const std::string& reason) {
    skipped_.push_back({path, reason});
}

void NoiseCache::flush_index() const {
    json j;
    j["entries"] = json::array();
    for (const auto& e : entries_)
        j["entries"].push_back({{"image_hash", e.image_hash},
                                {"path", e.path},
                                {"timestep", e.timestep},
                                {"probe_id", e.probe_id},
                                {"tensor_file", e.tensor_file},
                                {"shape", e.shape}});
    j["skipped"] = json::array();
    for (const auto& s : skipped_) j["skipped"].push_back({{"path", s.path}, {"reason", s.reason}});

    const fs::path final_path = fs::path(dir_) / "index.json";
    const fs::path tmp = fs::path(dir_) / "index.json.tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw DataError("cannot write cache index: " + tmp.string());
        f << j.dump(2) << "\n";
    }
    fs::rename(tmp, final_path);
}

BatchProbeStats batch_probe(const DatasetManifest& manifest, int t, NoiseEstimator& net,
                            NoiseCache& cache) {
    BatchProbeStats stats;
    const std::string probe = net.id();
    const int c = net.channels(), hw = net.image_hw();
    const std::int64_t per = static_cast<std::int64_t>(c) * hw * hw;

    struct Pending {
        const ManifestRow* row;
        Tensor pixels;
    };
    std::vector<Pending> pending;

    auto flush = [&]() {
        if (pending.empty()) return;
        const int n = static_cast<int>(pending.size());
        Tensor batch({n, c, hw, hw});
        for (int i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < per; ++j)
                batch[static_cast<std::int64_t>(i) * per + j] = pending[static_cast<std::size_t>(i)].pixels[j];
        Tensor pred = net.predict(batch, std::vector<int>(static_cast<std::size_t>(n), t));
        const std::int64_t pred_per = static_cast<std::int64_t>(net.out_channels()) * hw * hw;
        for (int i = 0; i < n; ++i) {
            PredictedNoise noise;
            noise.values = Tensor({c, hw, hw});
            for (std::int64_t j = 0; j < per; ++j)
                noise.values[j] = pred[static_cast<std::int64_t>(i) * pred_per + j];
            noise.timestep = t;
            noise.probe_id = probe;
            cache.store(pending[static_cast<std::size_t>(i)].row->content_hash,
                        pending[static_cast<std::size_t>(i)].row->path, noise);
            ++stats.probed;
        }
        pending.clear();
    };

    if (t < 1 || t > net.timestep_count())
        throw DataError("batch_probe: timestep out of range");

    for (const auto& row : manifest.rows) {
        if (cache.contains(row.content_hash, probe, t)) {
            ++stats.reused;
            continue;
        }
        LatentImage img;
        try {
            img = load_and_normalize(row.path, hw);
        } catch (const DataError& e) {
            cache.record_skip(row.path, e.what());
            ++stats.skipped;
            continue;
        }
        if (img.pixels.dim(0) != c) {
            cache.record_skip(row.path, "channel count does not match probe");
            ++stats.skipped;
            continue;
        }
        pending.push_back({&row, std::move(img.pixels)});
        if (pending.size() >= 32) flush();
    }
    flush();
    cache.flush_index();
    return stats;
}

}  // namespace anl
