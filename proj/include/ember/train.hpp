#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ember/model.hpp"
#include "ember/pattern.hpp"

namespace ember {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TrainPhase : uint8_t { Baseline, Phase1, Phase2 };

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    size_t epochs = 6;
    size_t batch_size = 32;
    uint64_t seed = 1;
    TrainPhase phase = TrainPhase::Baseline;

    void check() const {
        if (learning_rate <= 0) throw TrainError("learning_rate must be > 0");
        if (epochs < 1) throw TrainError("epochs must be >= 1");
        if (batch_size < 1) throw TrainError("batch_size must be >= 1");
    }
};

struct Sample {
    std::vector<float> x;
    int label = 0;
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Float-weight twin of a ModelSpec used only for desk-side training.
struct FloatLayer {
    LayerKind kind = LayerKind::Conv2D;
    size_t out_ch = 0, in_ch = 0, kh = 0, kw = 0;
    size_t out_features = 0, in_features = 0;
    size_t pool = 2;
    size_t keep_channels = 0;
    std::vector<float> weights, bias;
    std::vector<uint8_t> mask;  // 1 = concentrated (pattern-active)
    bool le_exempt = false;

    bool has_weights() const {
        return kind == LayerKind::Conv2D || kind == LayerKind::FullyConnected;
    }
};

struct FloatModel {
    std::string name;
    std::vector<size_t> input_shape;
    std::vector<FloatLayer> layers;
};

// Architecture skeleton -> randomly initialized float model.
FloatModel make_float_model(const ModelSpec& arch, uint64_t seed);

// Copies trained float weights into an arch skeleton (unquantized, scale 0
// clamped) so pattern search can run on realistic magnitudes.
void copy_weights_to_spec(const FloatModel& fm, ModelSpec& spec);

// Attaches concentration masks from a library to the float model.
void attach_masks(FloatModel& fm, const ModelSpec& masked_spec);

double evaluate(const FloatModel& fm, const std::vector<Sample>& samples);

// Accuracy with masked-out weights of patterned layers forced to zero
// (float-side mirror of low-energy inference).
double evaluate_low_energy(const FloatModel& fm, const std::vector<Sample>& samples);

using EpochLog = std::function<void(size_t epoch, double loss, double accuracy)>;

// Plain SGD + momentum training. phase selects which weights may move:
//   Baseline: all. Phase1: mask-active only (inactive pinned to zero).
//   Phase2: mask-inactive only (active frozen bit-exactly).
double train(FloatModel& fm, const Dataset& data, const TrainConfig& cfg,
             const EpochLog& log = nullptr);

// Zeroes every non-concentrated weight of patterned layers; returns test
// accuracy of the pruned model.
double apply_pattern_prune(FloatModel& fm, const std::vector<Sample>& test);

inline double train_baseline(FloatModel& fm, const Dataset& d, TrainConfig cfg,
                             const EpochLog& log = nullptr) {
    cfg.phase = TrainPhase::Baseline;
    return train(fm, d, cfg, log);
}
inline double finetune_phase1(FloatModel& fm, const Dataset& d, TrainConfig cfg,
                              const EpochLog& log = nullptr) {
    cfg.phase = TrainPhase::Phase1;
    return train(fm, d, cfg, log);
}
inline double finetune_phase2(FloatModel& fm, const Dataset& d, TrainConfig cfg,
                              const EpochLog& log = nullptr) {
    cfg.phase = TrainPhase::Phase2;
    return train(fm, d, cfg, log);
}

// Per-layer power-of-two quantization with activation calibration.
ModelSpec quantize_export(const FloatModel& fm, const std::vector<Sample>& calibration);

double evaluate_quantized(const ModelSpec& spec, const std::vector<Sample>& samples,
                          InferenceMode mode = InferenceMode::Full);

QTensor quantize_input(const ModelSpec& spec, const std::vector<float>& x);

// ---- datasets --------------------------------------------------------------

Dataset synth_mnist(size_t n_train, size_t n_test, uint64_t seed);
Dataset synth_har(size_t n_train, size_t n_test, uint64_t seed);
Dataset synth_gtsrb(size_t n_train, size_t n_test, uint64_t seed);
Dataset synth_dataset_for(const std::string& arch_name, size_t n_train, size_t n_test, uint64_t seed);

// IDX (big-endian magic 0x00000803 images / 0x00000801 labels).
std::vector<Sample> load_idx_pair(const std::string& images_path, const std::string& labels_path);
void save_idx_pair(const std::vector<Sample>& samples, const std::vector<size_t>& shape,
                   const std::string& images_path, const std::string& labels_path);

// UCI HAR whitespace-delimited feature/label text files.
std::vector<Sample> load_har_text(const std::string& x_path, const std::string& y_path,
                                  size_t feature_count);

}  // namespace ember
