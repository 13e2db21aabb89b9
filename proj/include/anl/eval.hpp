#pragma once

#include <map>
#include <string>
#include <vector>

#include "anl/data_io.hpp"
#include "anl/detector.hpp"
#include "anl/estimator.hpp"
#include "anl/noise_probe.hpp"

namespace anl {

enum class Protocol { Standard, CrossDataset, CrossModel };

Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

struct EvalCell {
    std::string train_generator;
    std::string test_generator;
    double acc = 0.0;
    double ap = 0.0;
    int n_real = 0;
    int n_fake = 0;
    bool absent = false;
};

struct EvalMatrix {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::vector<EvalCell> cells;  // row-major: train x test
    double mean_acc = 0.0;        // over present cells
    double mean_ap = 0.0;
    // Real-set accuracy per trained detector, reported separately from the
    // fake-cell averages.
    std::map<std::string, double> real_acc;

    const EvalCell& cell(std::size_t i, std::size_t j) const {
        return cells[i * test_ids.size() + j];
    }
    EvalCell& cell(std::size_t i, std::size_t j) { return cells[i * test_ids.size() + j]; }
    void compute_averages();
};

struct ProtocolConfig {
    DetectorConfig detector;       // timestep/mode/attention/backbone template
    DetectorTrainConfig train;     // lr, batch, epochs, seed
    std::string train_name = "train";
    std::string test_name = "test";
};

// standard:      one manifest; train on its train/val splits, test on test.
// cross_dataset: train on manifest A, evaluate on manifest B's test split.
// cross_model:   one manifest with >= 1 generator tags; one detector per
//                training generator (reals + that generator's fakes),
//                evaluated against every test generator's fakes plus the
//                shared held-out reals. Train/test fake disjointness is
//                verified on content hashes.
// Probing of missing cache keys happens internally (idempotent).
EvalMatrix run_protocol(Protocol proto, const DatasetManifest& train_manifest,
                        const DatasetManifest& test_manifest, NoiseEstimator& probe,
                        NoiseCache& cache, const ProtocolConfig& cfg);

// Re-probes, re-trains and re-evaluates per timestep.
std::vector<std::pair<int, EvalMatrix>> sweep_timestep(const std::vector<int>& t_values,
                                                       Protocol proto,
                                                       const DatasetManifest& manifest,
                                                       NoiseEstimator& probe, NoiseCache& cache,
                                                       ProtocolConfig cfg);

void write_matrix_csv(const EvalMatrix& m, const std::string& metric, const std::string& path);
void write_matrix_json(const EvalMatrix& m, const std::string& path);
EvalMatrix read_matrix_json(const std::string& path);
EvalMatrix read_matrix_csv_pair(const std::string& acc_path, const std::string& ap_path);

// Fig-3-style grid: one block per cell, darker = better.
void write_matrix_heatmap_png(const EvalMatrix& m, const std::string& metric,
                              const std::string& path, int cell_px = 24);

void write_sweep_csv(const std::vector<std::pair<int, EvalMatrix>>& sweep,
                     const std::string& path);

}  // namespace anl
