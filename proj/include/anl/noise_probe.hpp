#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anl/data_io.hpp"
#include "anl/diffusion.hpp"
#include "anl/estimator.hpp"
#include "anl/tensor.hpp"

namespace anl {

// Single-step noise estimate of an image: the network output at timestep t,
// with no reverse loop involved.
struct PredictedNoise {
    Tensor values;  // C,H,W
    int timestep = 1;
    std::string probe_id;
};

// Runs the estimator once on the image. When the network emits 2C channels,
// channels [0,C) are taken as the noise estimate.
PredictedNoise estimate_noise(const LatentImage& image, int t, NoiseEstimator& net);

struct CacheEntry {
    std::string image_hash;
    std::string path;
    int timestep = 0;
    std::string probe_id;
    std::string tensor_file;
    std::vector<int> shape;
};

struct SkippedRow {
    std::string path;
    std::string reason;
};

// Disk cache of probe outputs keyed by (content hash, probe id, timestep).
// One binary tensor record per image plus a JSON index; index updates are
// write-temp-then-rename.
class NoiseCache {
public:
    NoiseCache() = default;
    explicit NoiseCache(const std::string& dir);

    static NoiseCache open(const std::string& dir);

    bool contains(const std::string& image_hash, const std::string& probe_id, int t) const;
    std::optional<PredictedNoise> load(const std::string& image_hash, const std::string& probe_id,
                                       int t) const;
    void store(const std::string& image_hash, const std::string& path,
               const PredictedNoise& noise);

    const std::vector<CacheEntry>& entries() const { return entries_; }
    const std::vector<SkippedRow>& skipped() const { return skipped_; }
    void record_skip(const std::string& path, const std::string& reason);

    void flush_index() const;
    const std::string& dir() const { return dir_; }

private:
    std::string key(const std::string& image_hash, const std::string& probe_id, int t) const;
    std::string dir_;
    std::vector<CacheEntry> entries_;
    std::vector<SkippedRow> skipped_;
};

struct BatchProbeStats {
    int probed = 0;
    int reused = 0;
    int skipped = 0;
};

// Probes every manifest row at timestep t, reusing cache hits. Unreadable
// images become skip records, never silent drops. Idempotent: a rerun over a
// complete cache performs zero estimator invocations.
BatchProbeStats batch_probe(const DatasetManifest& manifest, int t, NoiseEstimator& net,
                            NoiseCache& cache);

// Raw tensor record io (doubles, small header). Round-trips bit-exactly.
void write_tensor_file(const Tensor& t, const std::string& path);
Tensor read_tensor_file(const std::string& path);

}  // namespace anl
