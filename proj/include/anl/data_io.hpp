#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anl/diffusion.hpp"
#include "anl/tensor.hpp"

namespace anl {

struct ManifestRow {
    std::string path;
    std::string label;      // "real" | "fake"
    std::string generator;  // "-" for real rows
    std::string split;      // "train" | "val" | "test"
    std::string content_hash;  // sha256 hex of file bytes
};

struct DatasetManifest {
    std::vector<ManifestRow> rows;

    void append(const DatasetManifest& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    }
    std::vector<ManifestRow> select(const std::string& split, const std::string& label = "",
                                    const std::string& generator = "") const;
    std::vector<std::string> generators() const;  // distinct fake generator ids
    void validate() const;
};

// JSON Lines, one row object per line.
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

std::string sha256_file(const std::string& path);
std::string sha256_bytes(const void* data, std::size_t n);

// Decode 8-bit PNG, bilinear-resize to target_hw x target_hw, map to [-1,1]
// via v / 127.5 - 1. step = 0.
LatentImage load_and_normalize(const std::string& path, int target_hw);

// [-1,1] -> 8-bit with rounding, written as gray (C=1) or RGB (C=3).
void save_image_png(const Tensor& chw, const std::string& path);

struct CorpusConfig {
    int image_hw = 32;
    int channels = 1;
};

// Procedural stand-in for a real-image corpus: band-limited noise, gradients
// and geometric primitives composed per image. Deterministic per seed; the
// radial spectrum is strongly non-flat by construction. Writes PNGs under
// out_dir and returns a manifest with 80/10/10 splits.
DatasetManifest synthesize_real_corpus(int n, std::uint64_t seed, const std::string& out_dir,
                                       const CorpusConfig& cfg = {});

// Deterministic hash-keyed re-split of an existing manifest; fake rows are
// stratified per generator. Ratios are applied exactly (floor for val/test,
// remainder to train).
DatasetManifest split_manifest(const DatasetManifest& m, double train_frac, double val_frac,
                               double test_frac, std::uint64_t seed);

// In-memory image loading for training loops.
std::vector<Tensor> load_images(const std::vector<ManifestRow>& rows, int target_hw);

}  // namespace anl
