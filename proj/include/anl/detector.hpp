#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anl/attention.hpp"
#include "anl/data_io.hpp"
#include "anl/estimator.hpp"
#include "anl/nn.hpp"
#include "anl/noise_probe.hpp"
#include "anl/rng.hpp"
#include "anl/tensor.hpp"

namespace anl {

enum class InputMode { Noise, Image };

std::string to_string(InputMode m);
InputMode input_mode_from_string(const std::string& s);

struct DetectorConfig {
    InputMode input_mode = InputMode::Noise;
    bool use_attention = true;
    int backbone_width = 6;   // stem width; stages double it, capped at 4x
    int backbone_stages = 4;  // stem stage + (stages-1) stride-2 stages
    int timestep = 1;         // probe timestep the detector expects
    int channels = 1;
    int input_hw = 32;
    std::string classifier_id = "unsaved";
};

struct Prediction {
    double logit = 0.0;
    double p = 0.5;
    int label = 1;  // 1 iff p >= 0.5 (fake), 0 otherwise (real)
};

Prediction prediction_from_logit(double z);

// Binary cross-entropy over a batch, probabilities clamped to
// [1e-7, 1 - 1e-7]. Labels are {0,1} with fake = 1.
double bce_loss(const std::vector<Prediction>& preds, const std::vector<int>& labels);

constexpr double kBceClamp = 1e-7;

// Residual conv block without timestep conditioning.
class DetBlock {
public:
    DetBlock() = default;
    DetBlock(const std::string& name, int channels);
    void init(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gout);
    void collect(std::vector<nn::ParamRef>& out);

private:
    nn::Conv2d conv1_, conv2_;
    nn::SiLU act_;
};

// Residual backbone with a single-logit head. Attention, when supplied, is
// resized to the last-stage geometry and broadcast-multiplied over the
// channel axis before pooling; it is a constant in the graph (no gradient
// flows back into the probe).
class DetectorNet {
public:
    DetectorNet() = default;
    explicit DetectorNet(const DetectorConfig& cfg);

    void init(Rng& rng);

    // x: N,C,H,W; attn: nullptr or N,H,W full-resolution maps in [0,1].
    Tensor forward_logits(const Tensor& x, const Tensor* attn);
    void backward_logits(const Tensor& gout);

    std::vector<nn::ParamRef> params();
    const DetectorConfig& config() const { return cfg_; }
    int feature_hw() const;
    int feature_channels() const;

private:
    DetectorConfig cfg_;
    nn::Conv2d stem_;
    nn::SiLU stem_act_;
    std::vector<nn::Conv2d> downs_;
    std::vector<DetBlock> blocks_;
    nn::GlobalAvgPool pool_;
    nn::Linear head_;
    Tensor cached_attn_resized_;  // N,hf,wf
    bool attn_active_ = false;
    int last_n_ = 0;
};

struct DetectorModel {
    DetectorNet net;
    DetectorConfig cfg;
    std::string probe_id;  // estimator the inputs came from
    bool is_trained = false;
    std::string checkpoint_id = "unsaved";
};

// One classifier example: the backbone input plus the (optional) attention
// source, kept at full resolution.
struct DetectorExample {
    Tensor input;          // C,H,W
    Tensor attention;      // H,W (empty when attention unused)
    int label = 0;         // real = 0, fake = 1
    std::string hash;
    std::string generator;
};

// Assembles examples from manifest rows and the probe cache. Missing cache
// rows are all enumerated in the thrown diagnostic, not just the first.
std::vector<DetectorExample> build_examples(const std::vector<ManifestRow>& rows,
                                            const NoiseCache& cache, const std::string& probe_id,
                                            const DetectorConfig& cfg);

struct DetectorTrainConfig {
    double lr = 1e-5;
    int batch = 64;
    int epochs = 20;
    std::uint64_t seed = 0;
    bool balanced = true;
};

struct DetectorTrainResult {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_acc;     // per epoch
    int best_epoch = -1;
    double best_val_acc = 0.0;
    double class_ratio = 1.0;  // real:fake ratio before balancing
};

// Trains with Adam and keeps the best-validation-accuracy parameters.
// Rejects single-class training sets.
DetectorTrainResult train_detector(DetectorModel& model, std::vector<DetectorExample> train_set,
                                   const std::vector<DetectorExample>& val_set,
                                   const DetectorTrainConfig& cfg,
                                   const std::string& log_csv_path = "");

std::vector<Prediction> predict_batch(DetectorModel& model,
                                      const std::vector<DetectorExample>& examples,
                                      int batch = 64);

struct InferResult {
    Prediction prediction;
    AttentionMap attention;  // empty weights when attention disabled
};

// Full single-image path: resize/normalize -> probe at cfg.timestep ->
// attention (if enabled) -> classifier.
InferResult infer_image(const std::string& image_path, DetectorModel& detector,
                        NoiseEstimator& probe);

}  // namespace anl
