#pragma once

#include <algorithm>
#include <cstdint>

#include "ember/model.hpp"
#include "ember/qtensor.hpp"

namespace ember {

struct OpCounts {
    uint64_t macs = 0;
    uint64_t nvm_reads = 0;
    uint64_t nvm_writes = 0;
    uint64_t outputs = 0;

    OpCounts& operator+=(const OpCounts& o) {
        macs += o.macs;
        nvm_reads += o.nvm_reads;
        nvm_writes += o.nvm_writes;
        outputs += o.outputs;
        return *this;
    }
};

// Requantization shift for a conv/fc layer fed with activations at in_scale.
// acc carries value * 2^(30 - in_scale - w_scale); dividing by 2^shift lands
// on Q15 at out_scale.
inline int requant_shift(const LayerSpec& l, int in_scale) {
    return 15 + l.out_scale - in_scale - l.weights.scale;
}

inline void check_low_energy_legal(const LayerSpec& l, InferenceMode mode) {
    if (mode == InferenceMode::LowEnergy && l.has_weights() && !l.le_exempt && l.mask.empty())
        throw ConfigError("low-energy mode requires a mask on patterned layer " + std::to_string(l.id));
}

// Invokes fn(w_flat, in_flat) for every MAC of output element O that is
// active in `mode`, in the canonical order:
//   conv: out_ch -> out_row -> out_col -> in_ch -> k_row -> k_col
//   fc:   out_feature -> in_feature
template <class Fn>
inline void for_each_mac(const LayerSpec& l, const std::vector<size_t>& in_shape, size_t O,
                         InferenceMode mode, Fn&& fn) {
    if (l.kind == LayerKind::Conv2D) {
        const size_t H = in_shape[1], W = in_shape[2];
        const size_t OH = H - l.kh + 1, OW = W - l.kw + 1;
        const size_t oc = O / (OH * OW);
        const size_t orow = (O / OW) % OH;
        const size_t ocol = O % OW;
        for (size_t ic = 0; ic < l.in_ch; ++ic)
            for (size_t kr = 0; kr < l.kh; ++kr)
                for (size_t kc = 0; kc < l.kw; ++kc) {
                    size_t w_flat = ((oc * l.in_ch + ic) * l.kh + kr) * l.kw + kc;
                    if (!l.weight_active(w_flat, mode)) continue;
                    size_t in_flat = ic * H * W + (orow + kr) * W + (ocol + kc);
                    fn(w_flat, in_flat);
                }
    } else if (l.kind == LayerKind::FullyConnected) {
        for (size_t i = 0; i < l.in_features; ++i) {
            size_t w_flat = O * l.in_features + i;
            if (!l.weight_active(w_flat, mode)) continue;
            fn(w_flat, i);
        }
    }
}

// Invokes fn(in_flat) for each input of output element O of a weightless
// layer (pool window members, or the single source element).
template <class Fn>
inline void for_each_input(const LayerSpec& l, const std::vector<size_t>& in_shape, size_t O, Fn&& fn) {
    switch (l.kind) {
        case LayerKind::MaxPool: {
            const size_t H = in_shape[1], W = in_shape[2];
            const size_t OH = H / l.pool, OW = W / l.pool;
            const size_t c = O / (OH * OW);
            const size_t r = (O / OW) % OH;
            const size_t col = O % OW;
            for (size_t dr = 0; dr < l.pool; ++dr)
                for (size_t dc = 0; dc < l.pool; ++dc)
                    fn(c * H * W + (r * l.pool + dr) * W + (col * l.pool + dc));
            break;
        }
        case LayerKind::ReLU:
            fn(O);
            break;
        case LayerKind::ChannelSlice:
            fn(O);  // kept channels are a prefix; flat index unchanged
            break;
        default:
            break;
    }
}

inline acc_t element_bias(const LayerSpec& l, const std::vector<size_t>& in_shape, size_t O) {
    if (l.bias.empty()) return 0;
    size_t bias_idx = (l.kind == LayerKind::Conv2D)
                          ? O / ((in_shape[1] - l.kh + 1) * (in_shape[2] - l.kw + 1))
                          : O;
    return l.bias[bias_idx];
}

// One output element of a conv/fc layer. `in_at(flat)` and `w_at(flat)`
// supply input and weight words (host memory or simulated NVM).
template <class InAt, class WAt>
inline q15_t weighted_element(const LayerSpec& l, const std::vector<size_t>& in_shape, size_t O,
                              InferenceMode mode, int shift, InAt&& in_at, WAt&& w_at,
                              OpCounts* oc = nullptr) {
    acc_t acc = element_bias(l, in_shape, O);
    for_each_mac(l, in_shape, O, mode, [&](size_t w_flat, size_t in_flat) {
        acc = sat_add32(acc, static_cast<acc_t>(in_at(in_flat)) * static_cast<acc_t>(w_at(w_flat)));
        if (oc) {
            ++oc->macs;
            oc->nvm_reads += 2;
        }
    });
    return requantize(acc, shift);
}

template <class InAt>
inline q15_t passthrough_element(const LayerSpec& l, const std::vector<size_t>& in_shape, size_t O,
                                 InAt&& in_at, OpCounts* oc = nullptr) {
    q15_t out = kQ15Min;
    bool first = true;
    for_each_input(l, in_shape, O, [&](size_t in_flat) {
        q15_t v = in_at(in_flat);
        if (oc) ++oc->nvm_reads;
        if (l.kind == LayerKind::ReLU) v = std::max<q15_t>(v, 0);
        out = first ? v : std::max(out, v);
        first = false;
    });
    return out;
}

inline size_t output_count(const LayerSpec& l, const std::vector<size_t>& in_shape) {
    auto os = layer_output_shape(l, in_shape);
    size_t n = 1;
    for (size_t d : os) n *= d;
    return n;
}

inline QTensor layer_forward(const QTensor& in, const LayerSpec& l, InferenceMode mode,
                             OpCounts* oc = nullptr) {
    check_low_energy_legal(l, mode);
    QTensor out(layer_output_shape(l, in.shape), l.has_weights() ? l.out_scale : in.scale);
    auto in_at = [&](size_t i) { return in.data[i]; };
    auto w_at = [&](size_t i) { return l.weights.data[i]; };
    if (l.has_weights()) {
        int shift = requant_shift(l, in.scale);
        for (size_t O = 0; O < out.data.size(); ++O)
            out.data[O] = weighted_element(l, in.shape, O, mode, shift, in_at, w_at, oc);
    } else {
        for (size_t O = 0; O < out.data.size(); ++O)
            out.data[O] = passthrough_element(l, in.shape, O, in_at, oc);
    }
    if (oc) {
        oc->nvm_writes += out.data.size();
        oc->outputs += out.data.size();
    }
    return out;
}

inline QTensor conv2d_forward(const QTensor& in, const LayerSpec& l, InferenceMode mode,
                              OpCounts* oc = nullptr) {
    if (l.kind != LayerKind::Conv2D) throw ConfigError("conv2d_forward: wrong layer kind");
    return layer_forward(in, l, mode, oc);
}

inline QTensor fc_forward(const QTensor& in, const LayerSpec& l, InferenceMode mode,
                          OpCounts* oc = nullptr) {
    if (l.kind != LayerKind::FullyConnected) throw ConfigError("fc_forward: wrong layer kind");
    return layer_forward(in, l, mode, oc);
}

struct InferResult {
    QTensor output;
    size_t predicted_class = 0;
    OpCounts counts;
};

inline size_t argmax(const QTensor& t) {
    size_t best = 0;
    for (size_t i = 1; i < t.data.size(); ++i)
        if (t.data[i] > t.data[best]) best = i;
    return best;
}

inline InferResult infer_continuous(const ModelSpec& m, const QTensor& input, InferenceMode mode) {
    validate_model(m);
    InferResult r;
    QTensor act = input;
    for (const LayerSpec& l : m.layers) act = layer_forward(act, l, mode, &r.counts);
    r.predicted_class = argmax(act);
    r.output = std::move(act);
    return r;
}

}  // namespace ember
