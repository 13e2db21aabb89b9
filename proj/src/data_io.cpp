#include "anl/data_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "anl/errors.hpp"
#include "anl/image_png.hpp"
#include "anl/kernels.hpp"
#include "anl/rng.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace anl {

std::vector<ManifestRow> DatasetManifest::select(const std::string& split,
                                                 const std::string& label,
                                                 const std::string& generator) const {
    std::vector<ManifestRow> out;
    for (const auto& r : rows) {
        if (!split.empty() && r.split != split) continue;
        if (!label.empty() && r.label != label) continue;
        if (!generator.empty() && r.generator != generator) continue;
        out.push_back(r);
    }
    return out;
}

std::vector<std::string> DatasetManifest::generators() const {
    std::set<std::string> ids;
    for (const auto& r : rows)
        if (r.label == "fake") ids.insert(r.generator);
    return {ids.begin(), ids.end()};
}

void DatasetManifest::validate() const {
    std::set<std::string> paths;
    for (const auto& r : rows) {
        if (!paths.insert(r.path).second) throw DataError("duplicate manifest path: " + r.path);
        if (r.label != "real" && r.label != "fake")
            throw DataError("bad label '" + r.label + "' for " + r.path);
        if (r.label == "fake" && (r.generator.empty() || r.generator == "-"))
            throw DataError("fake row without generator id: " + r.path);
        if (r.split != "train" && r.split != "val" && r.split != "test")
            throw DataError("bad split '" + r.split + "' for " + r.path);
    }
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write manifest: " + path);
    for (const auto& r : m.rows) {
        json j{{"path", r.path},
               {"label", r.label},
               {"generator", r.generator},
               {"split", r.split},
               {"content_hash", r.content_hash}};
        f << j.dump() << "\n";
    }
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read manifest: " + path);
    DatasetManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ManifestRow r;
        r.path = j.at("path").get<std::string>();
        r.label = j.at("label").get<std::string>();
        r.generator = j.at("generator").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.content_hash = j.at("content_hash").get<std::string>();
        m.rows.push_back(std::move(r));
    }
    return m;
}

std::string sha256_bytes(const void* data, std::size_t n) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read file for hashing: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    return sha256_bytes(bytes.data(), bytes.size());
}

LatentImage load_and_normalize(const std::string& path, int target_hw) {
    if (target_hw < 1) throw DataError("target geometry must be >= 1");
    Image8 img = read_png(path);
    const int c = img.channels;
    Tensor raw({c, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int ch = 0; ch < c; ++ch)
                raw.at(ch, y, x) = static_cast<double>(
                    img.pixels[(static_cast<std::size_t>(y) * img.width + x) * c + ch]);

    Tensor resized({c, target_hw, target_hw});
    kernels::bilinear_resize(raw.data(), c, img.height, img.width, resized.data(), target_hw,
                             target_hw);
    LatentImage out;
    out.pixels = Tensor({c, target_hw, target_hw});
    for (std::int64_t i = 0; i < resized.size(); ++i) out.pixels[i] = resized[i] / 127.5 - 1.0;
    out.step = 0;
    return out;
}

void save_image_png(const Tensor& chw, const std::string& path) {
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (c != 1 && c != 3) throw DataError("save_image_png: channels must be 1 or 3");
    Image8 img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.pixels.resize(static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                const double v = std::clamp((chw.at(ch, y, x) + 1.0) * 127.5, 0.0, 255.0);
                img.pixels[(static_cast<std::size_t>(y) * w + x) * c + ch] =
                    static_cast<std::uint8_t>(std::lround(v));
            }
    write_png(path, img);
}

namespace {

// One procedural texture: smooth gradient + low-pass noise + primitives.
Tensor synth_image(Rng& rng, const CorpusConfig& cfg) {
    const int hw = cfg.image_hw;
    Tensor field({hw, hw});

    // gradient background
    const double gx = rng.uniform() * 2.0 - 1.0;
    const double gy = rng.uniform() * 2.0 - 1.0;
    const double gxy = rng.uniform() * 2.0 - 1.0;
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
            const double u = static_cast<double>(x) / (hw - 1) - 0.5;
            const double v = static_cast<double>(y) / (hw - 1) - 0.5;
            field.at(y, x) = gx * u + gy * v + gxy * u * v;
        }

    // band-limited noise: white noise blurred with a separable gaussian
    const double sigma = 1.0 + 2.0 * rng.uniform();
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kern(static_cast<std::size_t>(2 * rad + 1));
    double ksum = 0.0;
    for (int i = -rad; i <= rad; ++i) {
        kern[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kern[static_cast<std::size_t>(i + rad)];
    }
    for (auto& k : kern) k /= ksum;
    Tensor white({hw, hw});
    for (std::int64_t i = 0; i < white.size(); ++i) white[i] = rng.gaussian();
    Tensor blur_x({hw, hw});
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) {
                const int xx = std::clamp(x + i, 0, hw - 1);
                acc += kern[static_cast<std::size_t>(i + rad)] * white.at(y, xx);
            }
            blur_x.at(y, x) = acc;
        }
    const double noise_amp = 0.3 + 0.5 * rng.uniform();
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i) {
                const int yy = std::clamp(y + i, 0, hw - 1);
                acc += kern[static_cast<std::size_t>(i + rad)] * blur_x.at(yy, x);
            }
            field.at(y, x) += noise_amp * acc;
        }

    // geometric primitives
    const int n_prims = rng.uniform_int(2, 5);
    for (int p = 0; p < n_prims; ++p) {
        const double val = rng.uniform() * 2.0 - 1.0;
        if (rng.uniform() < 0.5) {
            // filled rectangle
            int x0 = rng.uniform_int(0, hw - 2), x1 = rng.uniform_int(x0 + 1, hw - 1);
            int y0 = rng.uniform_int(0, hw - 2), y1 = rng.uniform_int(y0 + 1, hw - 1);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) field.at(y, x) += val * 0.6;
        } else {
            // filled disc
            const double cx = rng.uniform() * hw, cy = rng.uniform() * hw;
            const double r = 2.0 + rng.uniform() * hw / 3.0;
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    if (dx * dx + dy * dy <= r * r) field.at(y, x) += val * 0.6;
                }
        }
    }

    // occasionally a low-frequency sinusoidal weave
    if (rng.uniform() < 0.5) {
        const double fx = 1.0 + rng.uniform() * 3.0;
        const double fy = 1.0 + rng.uniform() * 3.0;
        const double phase = rng.uniform() * 2.0 * M_PI;
        const double amp = 0.2 + 0.3 * rng.uniform();
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x)
                field.at(y, x) +=
                    amp * std::sin(2.0 * M_PI * (fx * x + fy * y) / hw + phase);
    }

    // normalize to roughly full dynamic range
    double lo = field[0], hi = field[0];
    for (std::int64_t i = 0; i < field.size(); ++i) {
        lo = std::min(lo, field[i]);
        hi = std::max(hi, field[i]);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    const double contrast = 0.7 + 0.3 * rng.uniform();

    Tensor out({cfg.channels, hw, hw});
    for (int ch = 0; ch < cfg.channels; ++ch) {
        const double shift = cfg.channels == 1 ? 0.0 : (rng.uniform() - 0.5) * 0.2;
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                double v = ((field.at(y, x) - lo) / span * 2.0 - 1.0) * contrast + shift;
                out.at(ch, y, x) = std::clamp(v, -1.0, 1.0);
            }
    }
    return out;
}

void assign_splits(std::vector<ManifestRow>& rows, Rng& rng) {
    const int n = static_cast<int>(rows.size());
    const int n_val = n / 10;
    const int n_test = n / 10;
    std::vector<int> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    for (int i = 0; i < n; ++i) {
        std::string split = "train";
        if (i < n_val)
            split = "val";
        else if (i < n_val + n_test)
            split = "test";
        rows[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].split = split;
    }
}

}  // namespace

DatasetManifest synthesize_real_corpus(int n, std::uint64_t seed, const std::string& out_dir,
                                       const CorpusConfig& cfg) {
    if (n < 1) throw DataError("corpus size must be >= 1");
    fs::create_directories(out_dir);
    if (!fs::is_directory(out_dir)) throw DataError("cannot create corpus dir: " + out_dir);

    DatasetManifest m;
    m.rows.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x0c0, static_cast<std::uint64_t>(i)));
        Tensor img = synth_image(rng, cfg);
        char name[64];
        std::snprintf(name, sizeof(name), "real_%05d.png", i);
        const std::string path = (fs::path(out_dir) / name).string();
        save_image_png(img, path);
        ManifestRow row;
        row.path = path;
        row.label = "real";
        row.generator = "-";
        row.split = "train";
        row.content_hash = sha256_file(path);
        m.rows.push_back(std::move(row));
    }
    Rng split_rng(derive_seed(seed, 0x0c1, 0));
    assign_splits(m.rows, split_rng);
    save_manifest(m, (fs::path(out_dir) / "manifest.jsonl").string());
    return m;
}

DatasetManifest split_manifest(const DatasetManifest& m, double train_frac, double val_frac,
                               double test_frac, std::uint64_t seed) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw DataError("split fractions must sum to 1");
    DatasetManifest out = m;

    // group rows: reals together, fakes per generator
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        const auto& r = out.rows[i];
        groups[r.label == "real" ? std::string("-") : r.generator].push_back(i);
    }
    for (auto& [gid, idxs] : groups) {
        // hash-keyed deterministic order: stable under row reordering/renames
        std::sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
            const auto ka = derive_seed(seed, 0x5b17,
                                        std::hash<std::string>{}(out.rows[a].content_hash));
            const auto kb = derive_seed(seed, 0x5b17,
                                        std::hash<std::string>{}(out.rows[b].content_hash));
            if (ka != kb) return ka < kb;
            return out.rows[a].content_hash < out.rows[b].content_hash;
        });
        const int n = static_cast<int>(idxs.size());
        const int n_val = static_cast<int>(std::floor(val_frac * n));
        const int n_test = static_cast<int>(std::floor(test_frac * n));
        if (train_frac > 0.0 && n - n_val - n_test < 1)
            throw DataError("not enough rows in group '" + gid + "' for requested splits");
        for (int i = 0; i < n; ++i) {
            std::string split = "train";
            if (i < n_val)
                split = "val";
            else if (i < n_val + n_test)
                split = "test";
            out.rows[idxs[static_cast<std::size_t>(i)]].split = split;
        }
    }
    return out;
}

std::vector<Tensor> load_images(const std::vector<ManifestRow>& rows, int target_hw) {
    std::vector<Tensor> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(load_and_normalize(r.path, target_hw).pixels);
    return out;
}

}  // namespace anl
