#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ember/qtensor.hpp"

namespace ember {

enum class LayerKind : uint8_t {
    Conv2D = 0,
    FullyConnected = 1,
    MaxPool = 2,
    ReLU = 3,
    ChannelSlice = 4,
};

enum class InferenceMode : uint8_t { Full = 0, LowEnergy = 1 };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::FullyConnected: return "fc";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::ReLU: return "relu";
        case LayerKind::ChannelSlice: return "slice";
    }
    return "?";
}

inline const char* to_string(InferenceMode m) {
    return m == InferenceMode::Full ? "full" : "low_energy";
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One layer of a deployable model. Weight layout is canonical:
//   conv:  ((oc * in_ch + ic) * kh + kr) * kw + kc
//   fc:    of * in_features + inf
// The mask, when non-empty, holds one byte (0/1) per weight in the same
// flat order; an empty mask marks the layer exempt from low-energy
// concentration (all weights always active).
struct LayerSpec {
    LayerKind kind = LayerKind::Conv2D;
    int id = 0;

    size_t out_ch = 0, in_ch = 0, kh = 0, kw = 0;  // Conv2D
    size_t out_features = 0, in_features = 0;      // FullyConnected
    size_t pool = 2;                               // MaxPool window = stride
    size_t keep_channels = 0;                      // ChannelSlice

    QTensor weights;
    std::vector<acc_t> bias;  // accumulator-domain; value = b * 2^(in_scale+w_scale-30)
    int out_scale = 0;        // activation scale exponent of this layer's output
    std::vector<uint8_t> mask;
    bool le_exempt = false;  // Table I "-" rows: fully active in low-energy mode

    bool has_weights() const {
        return kind == LayerKind::Conv2D || kind == LayerKind::FullyConnected;
    }
    bool patterned() const { return has_weights() && !mask.empty(); }

    size_t weight_count() const {
        if (kind == LayerKind::Conv2D) return out_ch * in_ch * kh * kw;
        if (kind == LayerKind::FullyConnected) return out_features * in_features;
        return 0;
    }

    bool weight_active(size_t flat, InferenceMode mode) const {
        if (mode == InferenceMode::Full || mask.empty()) return true;
        return mask[flat] != 0;
    }

    size_t active_weight_count() const {
        if (!patterned()) return weight_count();
        size_t n = 0;
        for (uint8_t b : mask) n += (b != 0);
        return n;
    }
};

struct ModelSpec {
    std::string name;
    std::vector<size_t> input_shape;  // {channels, rows, cols}
    int input_scale = 0;
    std::vector<LayerSpec> layers;

    size_t class_count() const {
        return layers.empty() ? 0 : layers.back().out_features;
    }
};

// Output shape of a layer applied to `in` (shape {C,H,W}; fc output {N}).
inline std::vector<size_t> layer_output_shape(const LayerSpec& l, const std::vector<size_t>& in) {
    switch (l.kind) {
        case LayerKind::Conv2D: {
            if (in.size() != 3 || in[0] != l.in_ch || in[1] < l.kh || in[2] < l.kw)
                throw ShapeError("conv2d: input shape incompatible with layer " + std::to_string(l.id));
            return {l.out_ch, in[1] - l.kh + 1, in[2] - l.kw + 1};
        }
        case LayerKind::FullyConnected: {
            size_t n = 1;
            for (size_t d : in) n *= d;
            if (n != l.in_features)
                throw ShapeError("fc: flattened input " + std::to_string(n) + " != in_features " +
                                 std::to_string(l.in_features) + " at layer " + std::to_string(l.id));
            return {l.out_features};
        }
        case LayerKind::MaxPool: {
            if (in.size() != 3) throw ShapeError("maxpool: rank-3 input required");
            return {in[0], in[1] / l.pool, in[2] / l.pool};
        }
        case LayerKind::ReLU:
            return in;
        case LayerKind::ChannelSlice: {
            if (in.size() != 3 || l.keep_channels > in[0])
                throw ShapeError("slice: cannot keep " + std::to_string(l.keep_channels) + " channels");
            return {l.keep_channels, in[1], in[2]};
        }
    }
    throw ShapeError("unknown layer kind");
}

inline void validate_model(const ModelSpec& m) {
    std::vector<size_t> shape = m.input_shape;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& l = m.layers[i];
        if (l.id != static_cast<int>(i))
            throw ConfigError("layer ids must be consecutive from 0");
        if (l.has_weights()) {
            if (l.weights.element_count() != l.weight_count())
                throw ShapeError("layer " + std::to_string(i) + ": weight count mismatch");
            l.weights.validate();
            if (!l.mask.empty() && l.mask.size() != l.weight_count())
                throw ShapeError("layer " + std::to_string(i) + ": mask size mismatch");
        }
        shape = layer_output_shape(l, shape);
    }
}

inline std::vector<size_t> model_output_shape(const ModelSpec& m) {
    std::vector<size_t> shape = m.input_shape;
    for (const LayerSpec& l : m.layers) shape = layer_output_shape(l, shape);
    return shape;
}

// Weight parameters visible in the given mode. Biases are not counted.
inline size_t param_count(const ModelSpec& m, InferenceMode mode) {
    size_t n = 0;
    for (const LayerSpec& l : m.layers) {
        if (!l.has_weights()) continue;
        n += (mode == InferenceMode::Full) ? l.weight_count() : l.active_weight_count();
    }
    return n;
}

// ---- Architecture builders (weights zero-initialized) ----------------------

namespace detail {
inline LayerSpec conv(int id, size_t oc, size_t ic, size_t kh, size_t kw, bool exempt = false) {
    LayerSpec l;
    l.kind = LayerKind::Conv2D;
    l.id = id;
    l.out_ch = oc; l.in_ch = ic; l.kh = kh; l.kw = kw;
    l.weights = QTensor({oc, ic, kh, kw}, 0);
    l.bias.assign(oc, 0);
    l.le_exempt = exempt;
    return l;
}
inline LayerSpec fc(int id, size_t of, size_t inf, bool exempt = false) {
    LayerSpec l;
    l.kind = LayerKind::FullyConnected;
    l.id = id;
    l.out_features = of; l.in_features = inf;
    l.weights = QTensor({of, inf}, 0);
    l.bias.assign(of, 0);
    l.le_exempt = exempt;
    return l;
}
inline LayerSpec relu(int id) { LayerSpec l; l.kind = LayerKind::ReLU; l.id = id; return l; }
inline LayerSpec pool(int id) { LayerSpec l; l.kind = LayerKind::MaxPool; l.id = id; return l; }
inline LayerSpec slice(int id, size_t keep) {
    LayerSpec l; l.kind = LayerKind::ChannelSlice; l.id = id; l.keep_channels = keep; return l;
}
}  // namespace detail

// 28x28 grayscale, 10 classes. 42,352 weights.
inline ModelSpec make_mnist_arch() {
    using namespace detail;
    ModelSpec m;
    m.name = "mnist";
    m.input_shape = {1, 28, 28};
    m.layers = {conv(0, 8, 1, 5, 5), relu(1), pool(2),
                conv(3, 16, 8, 3, 3), relu(4), pool(5),
                fc(6, 100, 400), relu(7), fc(8, 10, 100, /*exempt=*/true)};
    return m;
}

// 2x231 single-channel window, 6 classes. 56,800 weights.
inline ModelSpec make_har_arch() {
    using namespace detail;
    ModelSpec m;
    m.name = "har";
    m.input_shape = {1, 2, 231};
    m.layers = {conv(0, 8, 1, 1, 12, /*exempt=*/true), relu(1), pool(2),
                fc(3, 64, 880), relu(4), fc(5, 6, 64, /*exempt=*/true)};
    return m;
}

// 8x12 RGB, 43 classes. 56,508 weights. The second conv takes 4 input
// channels while the first produces 16; a channel slice bridges the gap.
inline ModelSpec make_gtsrb_arch() {
    using namespace detail;
    ModelSpec m;
    m.name = "gtsrb";
    m.input_shape = {3, 8, 12};
    m.layers = {conv(0, 16, 3, 3, 3, /*exempt=*/true), relu(1), slice(2, 4),
                conv(3, 16, 4, 3, 3), relu(4),
                fc(5, 100, 512), relu(6), fc(7, 43, 100, /*exempt=*/true)};
    return m;
}

// Shrunk MNIST-shaped architecture for fast simulation sweeps.
inline ModelSpec make_reduced_mnist_arch() {
    using namespace detail;
    ModelSpec m;
    m.name = "mnist-reduced";
    m.input_shape = {1, 10, 10};
    m.layers = {conv(0, 2, 1, 5, 5), relu(1), pool(2),
                conv(3, 4, 2, 3, 3), relu(4),
                fc(5, 8, 4), relu(6), fc(7, 10, 8, /*exempt=*/true)};
    return m;
}

inline ModelSpec make_arch_by_name(const std::string& name) {
    if (name == "mnist" || name == "table1-mnist") return make_mnist_arch();
    if (name == "har" || name == "table1-har") return make_har_arch();
    if (name == "gtsrb" || name == "table1-gtsrb") return make_gtsrb_arch();
    if (name == "mnist-reduced") return make_reduced_mnist_arch();
    throw ConfigError("unknown architecture: " + name);
}

}  // namespace ember
