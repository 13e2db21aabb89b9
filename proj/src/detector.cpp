#include "anl/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "anl/errors.hpp"
#include "anl/kernels.hpp"

namespace anl {

std::string to_string(InputMode m) { return m == InputMode::Noise ? "noise" : "image"; }

InputMode input_mode_from_string(const std::string& s) {
    if (s == "noise") return InputMode::Noise;
    if (s == "image") return InputMode::Image;
    throw DataError("unknown input mode: " + s);
}

Prediction prediction_from_logit(double z) {
    Prediction p;
    p.logit = z;
    p.p = 1.0 / (1.0 + std::exp(-z));
    p.label = p.p >= 0.5 ? 1 : 0;
    return p;
}

double bce_loss(const std::vector<Prediction>& preds, const std::vector<int>& labels) {
    if (preds.empty()) throw DataError("bce_loss: empty batch");
    if (preds.size() != labels.size()) throw DataError("bce_loss: batch length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double p = std::clamp(preds[i].p, kBceClamp, 1.0 - kBceClamp);
        const double y = static_cast<double>(labels[i]);
        total += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return -total / static_cast<double>(preds.size());
}

DetBlock::DetBlock(const std::string& name, int channels)
    : conv1_(name + ".conv1", channels, channels, 3, 1, 1),
      conv2_(name + ".conv2", channels, channels, 3, 1, 1) {}

void DetBlock::init(Rng& rng) {
    conv1_.init_he(rng);
    conv2_.init_he(rng);
}

Tensor DetBlock::forward(const Tensor& x) {
    Tensor h = conv2_.forward(act_.forward(conv1_.forward(x)));
    Tensor out = x;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += h[i];
    return out;
}

Tensor DetBlock::backward(const Tensor& gout) {
    Tensor gx = conv1_.backward(act_.backward(conv2_.backward(gout)));
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
    return gx;
}

void DetBlock::collect(std::vector<nn::ParamRef>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
}

namespace {
int stage_width(const DetectorConfig& cfg, int stage) {
    return cfg.backbone_width * (1 << std::min(stage, 2));
}
}  // namespace

DetectorNet::DetectorNet(const DetectorConfig& cfg) : cfg_(cfg) {
    if (cfg.backbone_stages < 1) throw DataError("detector needs >= 1 stage");
    const int hw_last = cfg.input_hw >> (cfg.backbone_stages - 1);
    if (hw_last < 1) throw DataError("too many detector stages for input size");

    stem_ = nn::Conv2d("stem", cfg.channels, stage_width(cfg, 0), 3, 1, 1);
    blocks_.emplace_back("stage0", stage_width(cfg, 0));
    for (int s = 1; s < cfg.backbone_stages; ++s) {
        downs_.emplace_back("down" + std::to_string(s), stage_width(cfg, s - 1),
                            stage_width(cfg, s), 3, 2, 1);
        blocks_.emplace_back("stage" + std::to_string(s), stage_width(cfg, s));
    }
    head_ = nn::Linear("head", stage_width(cfg, cfg.backbone_stages - 1), 1);
}

void DetectorNet::init(Rng& rng) {
    stem_.init_he(rng);
    for (auto& d : downs_) d.init_he(rng);
    for (auto& b : blocks_) b.init(rng);
    // Zero-init head: untrained detector outputs logit 0, i.e. chance level.
    head_.init_zero();
}

int DetectorNet::feature_hw() const { return cfg_.input_hw >> (cfg_.backbone_stages - 1); }
int DetectorNet::feature_channels() const { return stage_width(cfg_, cfg_.backbone_stages - 1); }

Tensor DetectorNet::forward_logits(const Tensor& x, const Tensor* attn) {
    if ((attn != nullptr) != cfg_.use_attention)
        throw DataError("attention input does not match detector configuration");
    last_n_ = x.dim(0);

    Tensor h = stem_act_.forward(stem_.forward(x));
    h = blocks_[0].forward(h);
    for (std::size_t s = 0; s < downs_.size(); ++s) {
        h = downs_[s].forward(h);
        h = blocks_[s + 1].forward(h);
    }

    attn_active_ = attn != nullptr;
    if (attn_active_) {
        const int hf = h.dim(2), wf = h.dim(3);
        cached_attn_resized_ = Tensor({last_n_, hf, wf});
        for (int i = 0; i < last_n_; ++i) {
            AttentionMap full;
            full.weights = Tensor({attn->dim(1), attn->dim(2)});
            const std::int64_t per = full.weights.size();
            for (std::int64_t j = 0; j < per; ++j)
                full.weights[j] = (*attn)[static_cast<std::int64_t>(i) * per + j];
            AttentionMap small = resize_attention(full, hf, wf);
            for (std::int64_t j = 0; j < small.weights.size(); ++j)
                cached_attn_resized_[static_cast<std::int64_t>(i) * hf * wf + j] =
                    small.weights[j];
        }
        Tensor modulated(h.shape());
        kernels::broadcast_mul_hw_forward(h.data(), cached_attn_resized_.data(),
                                          modulated.data(), last_n_, h.dim(1), h.dim(2),
                                          h.dim(3));
        h = std::move(modulated);
    }

    return head_.forward(pool_.forward(h));
}

void DetectorNet::backward_logits(const Tensor& gout) {
    Tensor g = pool_.backward(head_.backward(gout));
    if (attn_active_) {
        Tensor gmod(g.shape());
        kernels::broadcast_mul_hw_backward(g.data(), cached_attn_resized_.data(), gmod.data(),
                                           last_n_, g.dim(1), g.dim(2), g.dim(3));
        g = std::move(gmod);
    }
    for (std::size_t s = downs_.size(); s > 0; --s) {
        g = blocks_[s].backward(g);
        g = downs_[s - 1].backward(g);
    }
    g = blocks_[0].backward(g);
    stem_.backward(stem_act_.backward(g));
}

std::vector<nn::ParamRef> DetectorNet::params() {
    std::vector<nn::ParamRef> out;
    stem_.collect(out);
    blocks_[0].collect(out);
    for (std::size_t s = 0; s < downs_.size(); ++s) {
        downs_[s].collect(out);
        blocks_[s + 1].collect(out);
    }
    head_.collect(out);
    return out;
}

std::vector<DetectorExample> build_examples(const std::vector<ManifestRow>& rows,
                                            const NoiseCache& cache, const std::string& probe_id,
                                            const DetectorConfig& cfg) {
    const bool needs_noise = cfg.input_mode == InputMode::Noise || cfg.use_attention;
    std::vector<std::string> missing;
    if (needs_noise) {
        for (const auto& r : rows)
            if (!cache.contains(r.content_hash, probe_id, cfg.timestep)) missing.push_back(r.path);
    }
    if (!missing.empty()) {
        std::ostringstream ss;
        ss << missing.size() << " manifest rows have no cached noise at t=" << cfg.timestep
           << " for probe " << probe_id << ":";
        for (const auto& p : missing) ss << "\n  " << p;
        throw DataError(ss.str());
    }

    std::vector<DetectorExample> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        DetectorExample ex;
        ex.label = r.label == "fake" ? 1 : 0;
        ex.hash = r.content_hash;
        ex.generator = r.generator;
        std::optional<PredictedNoise> noise;
        if (needs_noise) noise = cache.load(r.content_hash, probe_id, cfg.timestep);
        if (cfg.input_mode == InputMode::Noise)
            ex.input = noise->values;
        else
            ex.input = load_and_normalize(r.path, cfg.input_hw).pixels;
        if (cfg.use_attention) ex.attention = build_attention(*noise).weights;
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

void stack_examples(const std::vector<DetectorExample>& set, const std::vector<int>& idx,
                    bool with_attention, Tensor& x, Tensor& attn, std::vector<int>& labels) {
    const Tensor& first = set[static_cast<std::size_t>(idx[0])].input;
    const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
    const std::int64_t per = first.size();
    x = Tensor({static_cast<int>(idx.size()), c, h, w});
    labels.resize(idx.size());
    if (with_attention) attn = Tensor({static_cast<int>(idx.size()), h, w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& ex = set[static_cast<std::size_t>(idx[i])];
        for (std::int64_t j = 0; j < per; ++j) x[static_cast<std::int64_t>(i) * per + j] = ex.input[j];
        if (with_attention) {
            const std::int64_t ap = ex.attention.size();
            for (std::int64_t j = 0; j < ap; ++j)
                attn[static_cast<std::int64_t>(i) * ap + j] = ex.attention[j];
        }
        labels[i] = ex.label;
    }
}

struct ParamSnapshot {
    std::vector<std::vector<double>> values;
    void capture(const std::vector<nn::ParamRef>& params) {
        values.clear();
        for (const auto& p : params)
            values.emplace_back(p.value->data(), p.value->data() + p.value->size());
    }
    void restore(std::vector<nn::ParamRef>& params) const {
        for (std::size_t i = 0; i < params.size(); ++i)
            std::copy(values[i].begin(), values[i].end(), params[i].value->data());
    }
};

}  // namespace

DetectorTrainResult train_detector(DetectorModel& model, std::vector<DetectorExample> train_set,
                                   const std::vector<DetectorExample>& val_set,
                                   const DetectorTrainConfig& cfg,
                                   const std::string& log_csv_path) {
    std::vector<int> reals, fakes;
    for (std::size_t i = 0; i < train_set.size(); ++i)
        (train_set[i].label == 1 ? fakes : reals).push_back(static_cast<int>(i));
    if (reals.empty() || fakes.empty())
        throw DataError("training set must contain both classes (got " +
                        std::to_string(reals.size()) + " real, " + std::to_string(fakes.size()) +
                        " fake)");

    DetectorTrainResult res;
    res.class_ratio = static_cast<double>(reals.size()) / static_cast<double>(fakes.size());

    // Balanced sampling: deterministically subsample the majority class.
    std::vector<int> pool;
    if (cfg.balanced && reals.size() != fakes.size()) {
        auto& majority = reals.size() > fakes.size() ? reals : fakes;
        auto& minority = reals.size() > fakes.size() ? fakes : reals;
        Rng r(derive_seed(cfg.seed, 0xba1, 0));
        r.shuffle(majority);
        majority.resize(minority.size());
        pool = minority;
        pool.insert(pool.end(), majority.begin(), majority.end());
    } else {
        pool = reals;
        pool.insert(pool.end(), fakes.begin(), fakes.end());
    }
    std::sort(pool.begin(), pool.end());

    auto params = model.net.params();
    nn::Adam opt(params, cfg.lr);

    auto eval_val_acc = [&]() -> double {
        if (val_set.empty()) return 0.0;
        auto preds = predict_batch(model, val_set, cfg.batch);
        int correct = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i].label == val_set[i].label) ++correct;
        return static_cast<double>(correct) / static_cast<double>(preds.size());
    };

    ParamSnapshot best;
    best.capture(params);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch), 1));
        std::vector<int> order = pool;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t n = std::min<std::size_t>(cfg.batch, order.size() - start);
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(start + n));
            Tensor x, attn;
            std::vector<int> labels;
            stack_examples(train_set, idx, model.cfg.use_attention, x, attn, labels);

            opt.zero_grad();
            Tensor logits =
                model.net.forward_logits(x, model.cfg.use_attention ? &attn : nullptr);
            std::vector<Prediction> preds(n);
            for (std::size_t i = 0; i < n; ++i)
                preds[i] = prediction_from_logit(logits[static_cast<std::int64_t>(i)]);
            const double loss = bce_loss(preds, labels);
            if (!std::isfinite(loss))
                throw NumericalError("non-finite detector loss at epoch " + std::to_string(epoch));

            Tensor gout({static_cast<int>(n), 1});
            for (std::size_t i = 0; i < n; ++i) {
                const double p = preds[i].p;
                // Gradient of the clamped objective: zero outside the clamp.
                gout[static_cast<std::int64_t>(i)] =
                    (p > kBceClamp && p < 1.0 - kBceClamp)
                        ? (p - static_cast<double>(labels[i])) / static_cast<double>(n)
                        : 0.0;
            }
            model.net.backward_logits(gout);
            opt.step();
            epoch_loss += loss;
            ++batches;
        }
        res.train_loss.push_back(epoch_loss / std::max(1, batches));
        const double acc = eval_val_acc();
        res.val_acc.push_back(acc);
        if (res.best_epoch < 0 || acc > res.best_val_acc) {
            res.best_epoch = epoch;
            res.best_val_acc = acc;
            best.capture(params);
        }
    }

    best.restore(params);
    model.is_trained = true;

    if (!log_csv_path.empty()) {
        std::ofstream f(log_csv_path);
        f << "epoch,train_bce,val_acc\n";
        char buf[80];
        for (std::size_t i = 0; i < res.train_loss.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g", i, res.train_loss[i],
                          res.val_acc[i]);
            f << buf << "\n";
        }
    }
    return res;
}

std::vector<Prediction> predict_batch(DetectorModel& model,
                                      const std::vector<DetectorExample>& examples, int batch) {
    std::vector<Prediction> out(examples.size());
    std::vector<int> idx;
    for (std::size_t start = 0; start < examples.size(); start += batch) {
        const std::size_t n = std::min<std::size_t>(batch, examples.size() - start);
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(start + i);
        Tensor x, attn;
        std::vector<int> labels;
        stack_examples(examples, idx, model.cfg.use_attention, x, attn, labels);
        Tensor logits = model.net.forward_logits(x, model.cfg.use_attention ? &attn : nullptr);
        for (std::size_t i = 0; i < n; ++i)
            out[start + i] = prediction_from_logit(logits[static_cast<std::int64_t>(i)]);
    }
    return out;
}

InferResult infer_image(const std::string& image_path, DetectorModel& detector,
                        NoiseEstimator& probe) {
    if (detector.cfg.input_hw != probe.image_hw() || detector.cfg.channels != probe.channels())
        throw DataError("detector and probe checkpoint geometry mismatch");
    LatentImage img = load_and_normalize(image_path, probe.image_hw());
    if (img.pixels.dim(0) != probe.channels())
        throw DataError("image channel count does not match probe checkpoint");

    InferResult res;
    PredictedNoise noise = estimate_noise(img, detector.cfg.timestep, probe);

    DetectorExample ex;
    ex.label = 0;
    ex.input = detector.cfg.input_mode == InputMode::Noise ? noise.values : img.pixels;
    if (detector.cfg.use_attention) {
        res.attention = build_attention(noise);
        ex.attention = res.attention.weights;
    }
    res.prediction = predict_batch(detector, {ex}, 1)[0];
    return res;
}

}  // namespace anl
