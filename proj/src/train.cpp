#include "ember/train.hpp"

#include "ember/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ember {

namespace {

std::vector<size_t> fl_out_shape(const FloatLayer& l, const std::vector<size_t>& in) {
    switch (l.kind) {
        case LayerKind::Conv2D:
            return {l.out_ch, in[1] - l.kh + 1, in[2] - l.kw + 1};
        case LayerKind::FullyConnected:
            return {l.out_features};
        case LayerKind::MaxPool:
            return {in[0], in[1] / l.pool, in[2] / l.pool};
        case LayerKind::ReLU:
            return in;
        case LayerKind::ChannelSlice:
            return {l.keep_channels, in[1], in[2]};
    }
    throw TrainError("unknown layer kind");
}

size_t numel(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::vector<std::vector<size_t>> all_shapes(const FloatModel& fm) {
    std::vector<std::vector<size_t>> s;
    s.push_back(fm.input_shape);
    for (const auto& l : fm.layers) s.push_back(fl_out_shape(l, s.back()));
    return s;
}

struct Cache {
    // a[0] = input, a[i+1] = output of layer i
    std::vector<std::vector<float>> a;
    std::vector<std::vector<uint32_t>> pool_src;  // winning input index per pool output
};

void forward(const FloatModel& fm, const std::vector<std::vector<size_t>>& shapes,
             const float* x, Cache& c) {
    c.a.resize(fm.layers.size() + 1);
    c.pool_src.assign(fm.layers.size(), {});
    c.a[0].assign(x, x + numel(shapes[0]));
    for (size_t li = 0; li < fm.layers.size(); ++li) {
        const FloatLayer& l = fm.layers[li];
        const auto& in_s = shapes[li];
        const std::vector<float>& in = c.a[li];
        std::vector<float>& out = c.a[li + 1];
        out.assign(numel(shapes[li + 1]), 0.0f);
        switch (l.kind) {
            case LayerKind::Conv2D: {
                const size_t H = in_s[1], W = in_s[2];
                const size_t OH = H - l.kh + 1, OW = W - l.kw + 1;
                for (size_t oc = 0; oc < l.out_ch; ++oc) {
                    const float* wbase = l.weights.data() + oc * l.in_ch * l.kh * l.kw;
                    for (size_t orow = 0; orow < OH; ++orow)
                        for (size_t ocol = 0; ocol < OW; ++ocol) {
                            float acc = l.bias[oc];
                            const float* w = wbase;
                            for (size_t ic = 0; ic < l.in_ch; ++ic)
                                for (size_t kr = 0; kr < l.kh; ++kr) {
                                    const float* row = &in[ic * H * W + (orow + kr) * W + ocol];
                                    for (size_t kc = 0; kc < l.kw; ++kc) acc += row[kc] * *w++;
                                }
                            out[(oc * OH + orow) * OW + ocol] = acc;
                        }
                }
                break;
            }
            case LayerKind::FullyConnected: {
                for (size_t o = 0; o < l.out_features; ++o) {
                    const float* w = l.weights.data() + o * l.in_features;
                    float acc = l.bias[o];
                    for (size_t i = 0; i < l.in_features; ++i) acc += w[i] * in[i];
                    out[o] = acc;
                }
                break;
            }
            case LayerKind::MaxPool: {
                const size_t H = in_s[1], W = in_s[2];
                const size_t OH = H / l.pool, OW = W / l.pool;
                c.pool_src[li].resize(out.size());
                for (size_t ch = 0; ch < in_s[0]; ++ch)
                    for (size_t r = 0; r < OH; ++r)
                        for (size_t col = 0; col < OW; ++col) {
                            float best = -1e30f;
                            uint32_t src = 0;
                            for (size_t dr = 0; dr < l.pool; ++dr)
                                for (size_t dc = 0; dc < l.pool; ++dc) {
                                    size_t idx = ch * H * W + (r * l.pool + dr) * W + col * l.pool + dc;
                                    if (in[idx] > best) { best = in[idx]; src = static_cast<uint32_t>(idx); }
                                }
                            size_t o = (ch * OH + r) * OW + col;
                            out[o] = best;
                            c.pool_src[li][o] = src;
                        }
                break;
            }
            case LayerKind::ReLU:
                for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0 ? in[i] : 0.0f;
                break;
            case LayerKind::ChannelSlice:
                std::copy(in.begin(), in.begin() + out.size(), out.begin());
                break;
        }
    }
}

struct Grads {
    std::vector<std::vector<float>> gw, gb;
    void init(const FloatModel& fm) {
        gw.resize(fm.layers.size());
        gb.resize(fm.layers.size());
        for (size_t i = 0; i < fm.layers.size(); ++i) {
            gw[i].assign(fm.layers[i].weights.size(), 0.0f);
            gb[i].assign(fm.layers[i].bias.size(), 0.0f);
        }
    }
    void zero() {
        for (auto& v : gw) std::fill(v.begin(), v.end(), 0.0f);
        for (auto& v : gb) std::fill(v.begin(), v.end(), 0.0f);
    }
};

// Softmax cross-entropy on the cached forward pass; accumulates dW/db.
double backward(const FloatModel& fm, const std::vector<std::vector<size_t>>& shapes,
                const Cache& c, int label, Grads& g) {
    const std::vector<float>& logits = c.a.back();
    float mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (float v : logits) denom += std::exp(double(v) - mx);
    double loss = -(double(logits[size_t(label)]) - mx - std::log(denom));

    std::vector<float> delta(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
        delta[i] = float(std::exp(double(logits[i]) - mx) / denom) - (i == size_t(label) ? 1.0f : 0.0f);

    for (size_t li = fm.layers.size(); li-- > 0;) {
        const FloatLayer& l = fm.layers[li];
        const auto& in_s = shapes[li];
        const std::vector<float>& in = c.a[li];
        std::vector<float> din(in.size(), 0.0f);
        switch (l.kind) {
            case LayerKind::Conv2D: {
                const size_t H = in_s[1], W = in_s[2];
                const size_t OH = H - l.kh + 1, OW = W - l.kw + 1;
                for (size_t oc = 0; oc < l.out_ch; ++oc) {
                    float* gwbase = g.gw[li].data() + oc * l.in_ch * l.kh * l.kw;
                    const float* wbase = l.weights.data() + oc * l.in_ch * l.kh * l.kw;
                    for (size_t orow = 0; orow < OH; ++orow)
                        for (size_t ocol = 0; ocol < OW; ++ocol) {
                            float d = delta[(oc * OH + orow) * OW + ocol];
                            if (d == 0.0f) continue;
                            g.gb[li][oc] += d;
                            float* gw = gwbase;
                            const float* w = wbase;
                            for (size_t ic = 0; ic < l.in_ch; ++ic)
                                for (size_t kr = 0; kr < l.kh; ++kr) {
                                    size_t base = ic * H * W + (orow + kr) * W + ocol;
                                    for (size_t kc = 0; kc < l.kw; ++kc) {
                                        *gw++ += d * in[base + kc];
                                        din[base + kc] += d * *w++;
                                    }
                                }
                        }
                }
                break;
            }
            case LayerKind::FullyConnected: {
                for (size_t o = 0; o < l.out_features; ++o) {
                    float d = delta[o];
                    g.gb[li][o] += d;
                    float* gw = g.gw[li].data() + o * l.in_features;
                    const float* w = l.weights.data() + o * l.in_features;
                    for (size_t i = 0; i < l.in_features; ++i) {
                        gw[i] += d * in[i];
                        din[i] += d * w[i];
                    }
                }
                break;
            }
            case LayerKind::MaxPool:
                for (size_t o = 0; o < delta.size(); ++o) din[c.pool_src[li][o]] += delta[o];
                break;
            case LayerKind::ReLU:
                for (size_t i = 0; i < delta.size(); ++i) din[i] = in[i] > 0 ? delta[i] : 0.0f;
                break;
            case LayerKind::ChannelSlice:
                std::copy(delta.begin(), delta.end(), din.begin());
                break;
        }
        delta = std::move(din);
    }
    return loss;
}

// May this weight move in the given phase?
bool weight_trainable(const FloatLayer& l, size_t i, TrainPhase phase) {
    switch (phase) {
        case TrainPhase::Baseline: return true;
        case TrainPhase::Phase1: return l.mask.empty() || l.mask[i] != 0;
        case TrainPhase::Phase2: return !l.mask.empty() && l.mask[i] == 0;
    }
    return true;
}

bool bias_trainable(TrainPhase phase) { return phase != TrainPhase::Phase2; }

}  // namespace

FloatModel make_float_model(const ModelSpec& arch, uint64_t seed) {
    FloatModel fm;
    fm.name = arch.name;
    fm.input_shape = arch.input_shape;
    std::mt19937_64 rng(seed);
    for (const LayerSpec& ls : arch.layers) {
        FloatLayer l;
        l.kind = ls.kind;
        l.out_ch = ls.out_ch; l.in_ch = ls.in_ch; l.kh = ls.kh; l.kw = ls.kw;
        l.out_features = ls.out_features; l.in_features = ls.in_features;
        l.pool = ls.pool;
        l.keep_channels = ls.keep_channels;
        l.le_exempt = ls.le_exempt;
        if (l.has_weights()) {
            size_t fan_in = l.kind == LayerKind::Conv2D ? l.in_ch * l.kh * l.kw : l.in_features;
            size_t n = ls.weight_count();
            std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / float(fan_in)));
            l.weights.resize(n);
            for (float& w : l.weights) w = dist(rng);
            l.bias.assign(l.kind == LayerKind::Conv2D ? l.out_ch : l.out_features, 0.0f);
        }
        fm.layers.push_back(std::move(l));
    }
    return fm;
}

namespace {
int scale_for(double maxabs) {
    if (!std::isfinite(maxabs)) throw TrainError("non-finite value during quantization");
    if (maxabs <= 0) return 0;
    for (int s = -14; s <= 14; ++s)
        if (maxabs <= 32767.0 * std::ldexp(1.0, s - 15)) return s;
    throw TrainError("weight overflow after scaling");
}
}  // namespace

void copy_weights_to_spec(const FloatModel& fm, ModelSpec& spec) {
    if (spec.layers.size() != fm.layers.size()) throw TrainError("layer count mismatch");
    for (size_t i = 0; i < fm.layers.size(); ++i) {
        const FloatLayer& fl = fm.layers[i];
        LayerSpec& ls = spec.layers[i];
        if (!fl.has_weights()) continue;
        double mx = 0;
        for (float w : fl.weights) mx = std::max(mx, std::fabs(double(w)));
        int s = scale_for(mx);
        ls.weights.scale = s;
        for (size_t j = 0; j < fl.weights.size(); ++j)
            ls.weights.data[j] = static_cast<q15_t>(std::lround(std::ldexp(double(fl.weights[j]), 15 - s)));
    }
}

void attach_masks(FloatModel& fm, const ModelSpec& masked_spec) {
    if (fm.layers.size() != masked_spec.layers.size()) throw TrainError("layer count mismatch");
    for (size_t i = 0; i < fm.layers.size(); ++i) fm.layers[i].mask = masked_spec.layers[i].mask;
}

namespace {
size_t predict(const FloatModel& fm, const std::vector<std::vector<size_t>>& shapes,
               const Sample& s, Cache& c) {
    forward(fm, shapes, s.x.data(), c);
    const auto& out = c.a.back();
    return size_t(std::max_element(out.begin(), out.end()) - out.begin());
}
}  // namespace

double evaluate(const FloatModel& fm, const std::vector<Sample>& samples) {
    if (samples.empty()) return 0;
    auto shapes = all_shapes(fm);
    Cache c;
    size_t hit = 0;
    for (const Sample& s : samples) hit += predict(fm, shapes, s, c) == size_t(s.label);
    return double(hit) / double(samples.size());
}

double evaluate_low_energy(const FloatModel& fm, const std::vector<Sample>& samples) {
    FloatModel le = fm;
    for (FloatLayer& l : le.layers)
        if (!l.mask.empty())
            for (size_t i = 0; i < l.weights.size(); ++i)
                if (!l.mask[i]) l.weights[i] = 0.0f;
    return evaluate(le, samples);
}

double apply_pattern_prune(FloatModel& fm, const std::vector<Sample>& test) {
    for (FloatLayer& l : fm.layers)
        if (!l.mask.empty())
            for (size_t i = 0; i < l.weights.size(); ++i)
                if (!l.mask[i]) l.weights[i] = 0.0f;
    return evaluate(fm, test);
}

double train(FloatModel& fm, const Dataset& data, const TrainConfig& cfg, const EpochLog& log) {
    cfg.check();
    if (data.train.empty()) throw TrainError("empty training split");
    if (cfg.phase != TrainPhase::Baseline)
        for (const FloatLayer& l : fm.layers)
            if (l.has_weights() && !l.le_exempt && l.mask.empty())
                throw TrainError("fine-tuning phases require masks on patterned layers");

    auto shapes = all_shapes(fm);
    Grads g, vel;
    g.init(fm);
    vel.init(fm);

    // Phase-2 freezing contract: everything outside the previously-pruned
    // positions is restored bit-exactly after each step.
    std::vector<std::vector<float>> frozen_w(fm.layers.size()), frozen_b(fm.layers.size());
    if (cfg.phase == TrainPhase::Phase2)
        for (size_t i = 0; i < fm.layers.size(); ++i) {
            frozen_w[i] = fm.layers[i].weights;
            frozen_b[i] = fm.layers[i].bias;
        }

    std::mt19937_64 rng(cfg.seed ^ 0x7E57A11Cull);
    std::vector<size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);

    Cache c;
    double acc = 0;
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            g.zero();
            for (size_t k = start; k < end; ++k) {
                const Sample& s = data.train[order[k]];
                forward(fm, shapes, s.x.data(), c);
                loss_sum += backward(fm, shapes, c, s.label, g);
            }
            double scale = cfg.learning_rate / double(end - start);
            for (size_t li = 0; li < fm.layers.size(); ++li) {
                FloatLayer& l = fm.layers[li];
                for (size_t i = 0; i < l.weights.size(); ++i) {
                    if (!weight_trainable(l, i, cfg.phase)) continue;
                    vel.gw[li][i] = float(cfg.momentum * vel.gw[li][i] - scale * g.gw[li][i]);
                    l.weights[i] += vel.gw[li][i];
                }
                if (bias_trainable(cfg.phase))
                    for (size_t i = 0; i < l.bias.size(); ++i) {
                        vel.gb[li][i] = float(cfg.momentum * vel.gb[li][i] - scale * g.gb[li][i]);
                        l.bias[i] += vel.gb[li][i];
                    }
                // Projection / restore, robust against any drift above.
                if (cfg.phase == TrainPhase::Phase1 && !l.mask.empty()) {
                    for (size_t i = 0; i < l.weights.size(); ++i)
                        if (!l.mask[i]) l.weights[i] = 0.0f;
                } else if (cfg.phase == TrainPhase::Phase2) {
                    for (size_t i = 0; i < l.weights.size(); ++i)
                        if (!weight_trainable(l, i, TrainPhase::Phase2)) l.weights[i] = frozen_w[li][i];
                    l.bias = frozen_b[li];
                }
            }
        }
        double loss = loss_sum / double(order.size());
        if (!std::isfinite(loss))
            throw TrainError("training diverged at epoch " + std::to_string(epoch + 1));
        acc = evaluate(fm, data.test.empty() ? data.train : data.test);
        if (log) log(epoch + 1, loss, acc);
    }
    return acc;
}

// ---- quantization -----------------------------------------------------------

ModelSpec quantize_export(const FloatModel& fm, const std::vector<Sample>& calibration) {
    if (calibration.empty()) throw TrainError("quantize_export needs calibration samples");
    ModelSpec spec;
    spec.name = fm.name;
    spec.input_shape = fm.input_shape;
    for (size_t i = 0; i < fm.layers.size(); ++i) {
        const FloatLayer& fl = fm.layers[i];
        LayerSpec ls;
        ls.kind = fl.kind;
        ls.id = int(i);
        ls.out_ch = fl.out_ch; ls.in_ch = fl.in_ch; ls.kh = fl.kh; ls.kw = fl.kw;
        ls.out_features = fl.out_features; ls.in_features = fl.in_features;
        ls.pool = fl.pool;
        ls.keep_channels = fl.keep_channels;
        ls.le_exempt = fl.le_exempt;
        ls.mask = fl.mask;
        if (fl.has_weights()) {
            ls.weights = QTensor(fl.kind == LayerKind::Conv2D
                                     ? std::vector<size_t>{fl.out_ch, fl.in_ch, fl.kh, fl.kw}
                                     : std::vector<size_t>{fl.out_features, fl.in_features},
                                 0);
            ls.bias.assign(fl.bias.size(), 0);
        }
        spec.layers.push_back(std::move(ls));
    }

    // Activation calibration: per-layer output maxima over the batch, plus a
    // per-layer bound on any partial accumulator sum (|bias| + sum |in|*|w|)
    // so weight scales can be widened before the 32-bit accumulator saturates.
    auto shapes = all_shapes(fm);
    std::vector<double> act_max(fm.layers.size(), 0.0);
    std::vector<double> acc_bound(fm.layers.size(), 0.0);
    double in_max = 0;
    Cache c;
    auto layer_acc_bound = [](const FloatLayer& l, const std::vector<size_t>& in_shape,
                              const std::vector<float>& in) {
        double worst = 0;
        if (l.kind == LayerKind::Conv2D) {
            size_t H = in_shape[1], W = in_shape[2];
            size_t OH = H - l.kh + 1, OW = W - l.kw + 1;
            for (size_t oc = 0; oc < l.out_ch; ++oc)
                for (size_t r = 0; r < OH; ++r)
                    for (size_t col = 0; col < OW; ++col) {
                        double a = std::fabs(double(l.bias[oc]));
                        for (size_t ic = 0; ic < l.in_ch; ++ic)
                            for (size_t kr = 0; kr < l.kh; ++kr)
                                for (size_t kc = 0; kc < l.kw; ++kc)
                                    a += std::fabs(double(in[ic * H * W + (r + kr) * W + col + kc])) *
                                         std::fabs(double(
                                             l.weights[((oc * l.in_ch + ic) * l.kh + kr) * l.kw + kc]));
                        worst = std::max(worst, a);
                    }
        } else {
            for (size_t o = 0; o < l.out_features; ++o) {
                double a = std::fabs(double(l.bias[o]));
                for (size_t i = 0; i < l.in_features; ++i)
                    a += std::fabs(double(in[i])) * std::fabs(double(l.weights[o * l.in_features + i]));
                worst = std::max(worst, a);
            }
        }
        return worst;
    };
    for (const Sample& s : calibration) {
        for (float v : s.x) in_max = std::max(in_max, std::fabs(double(v)));
        forward(fm, shapes, s.x.data(), c);
        for (size_t li = 0; li < fm.layers.size(); ++li) {
            for (float v : c.a[li + 1]) act_max[li] = std::max(act_max[li], std::fabs(double(v)));
            if (fm.layers[li].has_weights())
                acc_bound[li] = std::max(acc_bound[li],
                                         layer_acc_bound(fm.layers[li], shapes[li], c.a[li]));
        }
    }
    spec.input_scale = scale_for(in_max);

    int in_scale = spec.input_scale;
    for (size_t li = 0; li < fm.layers.size(); ++li) {
        const FloatLayer& fl = fm.layers[li];
        LayerSpec& ls = spec.layers[li];
        if (!fl.has_weights()) continue;  // passthrough layers keep the incoming scale
        double wmax = 0;
        for (float w : fl.weights) {
            if (!std::isfinite(w)) throw TrainError("non-finite weight during export");
            wmax = std::max(wmax, std::fabs(double(w)));
        }
        int ws = scale_for(wmax);
        // Widen the weight scale just enough that the worst-case accumulator
        // (value * 2^(30 - in_scale - ws)) stays inside 32-bit range.
        if (acc_bound[li] > 0) {
            int need = int(std::ceil(std::log2(acc_bound[li]) + 1e-9)) - 1 - in_scale;
            ws = std::max(ws, need);
        }
        if (ws > 14) throw TrainError("accumulator range requires weight scale beyond Q15");
        ls.weights.scale = ws;
        for (size_t j = 0; j < fl.weights.size(); ++j) {
            long q = std::lround(std::ldexp(double(fl.weights[j]), 15 - ws));
            if (q > kQ15Max || q < kQ15Min) throw TrainError("weight overflow after scaling");
            ls.weights.data[j] = static_cast<q15_t>(q);
        }
        ls.out_scale = scale_for(act_max[li]);
        int bias_shift = 30 - in_scale - ws;
        for (size_t j = 0; j < fl.bias.size(); ++j) {
            double b = std::ldexp(double(fl.bias[j]), bias_shift);
            if (std::fabs(b) > 2e9) throw TrainError("bias overflow after scaling");
            ls.bias[j] = static_cast<acc_t>(std::llround(b));
        }
        in_scale = ls.out_scale;
    }
    validate_model(spec);
    return spec;
}

QTensor quantize_input(const ModelSpec& spec, const std::vector<float>& x) {
    QTensor t(spec.input_shape, spec.input_scale);
    if (t.data.size() != x.size()) throw TrainError("input size mismatch");
    for (size_t i = 0; i < x.size(); ++i) {
        long q = std::lround(std::ldexp(double(x[i]), 15 - spec.input_scale));
        t.data[i] = static_cast<q15_t>(std::clamp<long>(q, kQ15Min, kQ15Max));
    }
    return t;
}

double evaluate_quantized(const ModelSpec& spec, const std::vector<Sample>& samples,
                          InferenceMode mode) {
    if (samples.empty()) return 0;
    size_t hit = 0;
    for (const Sample& s : samples) {
        InferResult r = infer_continuous(spec, quantize_input(spec, s.x), mode);
        hit += r.predicted_class == size_t(s.label);
    }
    return double(hit) / double(samples.size());
}

// ---- synthetic datasets -----------------------------------------------------

namespace {

// 7x5 digit glyphs, one bitmask row per entry.
const uint8_t kDigitFont[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};

Sample render_digit(int digit, std::mt19937_64& rng) {
    Sample s;
    s.label = digit;
    s.x.assign(28 * 28, 0.0f);
    std::uniform_int_distribution<int> jy(0, 6), jx(0, 12);
    std::uniform_real_distribution<float> inten(0.55f, 1.0f), unit(0.0f, 1.0f);
    std::normal_distribution<float> noise(0.0f, 0.10f);
    int oy = jy(rng), ox = jx(rng);
    float amp = inten(rng);
    for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col) {
            if (!(kDigitFont[digit][r] & (0x10 >> col))) continue;
            for (int dr = 0; dr < 3; ++dr)
                for (int dc = 0; dc < 3; ++dc) {
                    int y = oy + 3 * r + dr, x = ox + 3 * col + dc;
                    s.x[size_t(y) * 28 + size_t(x)] = amp * (0.75f + 0.25f * unit(rng));
                }
        }
    // Distractor stroke: a short random bar that overlaps glyphs of other
    // classes, keeping the task from being trivially separable.
    std::uniform_int_distribution<int> by(2, 25), bx(2, 20), blen(3, 7);
    int sy = by(rng), sx = bx(rng), len = blen(rng);
    bool horiz = unit(rng) < 0.5f;
    for (int k = 0; k < len; ++k) {
        int y = horiz ? sy : std::min(27, sy + k);
        int x = horiz ? std::min(27, sx + k) : sx;
        s.x[size_t(y) * 28 + size_t(x)] = std::max(s.x[size_t(y) * 28 + size_t(x)], 0.6f * amp);
    }
    for (float& v : s.x) v = std::clamp(v + noise(rng), 0.0f, 0.999f);
    return s;
}

std::vector<Sample> make_split(size_t n, size_t classes, std::mt19937_64& rng,
                               const std::function<Sample(int, std::mt19937_64&)>& gen) {
    std::vector<Sample> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(gen(int(i % classes), rng));
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

}  // namespace

Dataset synth_mnist(size_t n_train, size_t n_test, uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset d;
    d.train = make_split(n_train, 10, rng, render_digit);
    d.test = make_split(n_test, 10, rng, render_digit);
    return d;
}

Dataset synth_har(size_t n_train, size_t n_test, uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto gen = [](int cls, std::mt19937_64& r) {
        Sample s;
        s.label = cls;
        s.x.assign(2 * 231, 0.0f);
        std::normal_distribution<float> noise(0.0f, 0.12f);
        std::uniform_real_distribution<float> ph(0.0f, 1.0f);
        float f = 1.5f + 0.9f * float(cls);
        float phase = 6.2831853f * ph(r);
        float amp = 0.18f + 0.03f * float(cls % 3);
        for (int row = 0; row < 2; ++row)
            for (int j = 0; j < 231; ++j) {
                float t = float(j) / 231.0f;
                // Activity bursts are shared between neighbouring classes so
                // the distributed frequency carrier stays load-bearing.
                int region = (j / 38) % 6;
                float burst = (region == cls || region == (cls + 1) % 6) ? 0.12f : 0.0f;
                float v = 0.35f + burst + amp * std::sin(6.2831853f * f * t + phase + float(row) * 1.1f);
                s.x[size_t(row) * 231 + size_t(j)] = std::clamp(v + noise(r), 0.0f, 0.999f);
            }
        return s;
    };
    Dataset d;
    d.train = make_split(n_train, 6, rng, gen);
    d.test = make_split(n_test, 6, rng, gen);
    return d;
}

Dataset synth_gtsrb(size_t n_train, size_t n_test, uint64_t seed) {
    // Fixed per-class prototype "signs"; samples are noisy, brightness-jittered
    // copies. Prototypes depend only on the class so splits share structure.
    std::vector<std::vector<float>> proto(43);
    for (int cls = 0; cls < 43; ++cls) {
        std::mt19937_64 pr(0x6757B00Bull ^ (uint64_t(cls) * 0x9E3779B97F4A7C15ull));
        std::uniform_real_distribution<float> u(0.1f, 0.9f);
        proto[cls].resize(3 * 8 * 12);
        for (float& v : proto[cls]) v = u(pr);
    }
    std::mt19937_64 rng(seed);
    auto gen = [&](int cls, std::mt19937_64& r) {
        Sample s;
        s.label = cls;
        s.x = proto[size_t(cls)];
        std::normal_distribution<float> noise(0.0f, 0.10f);
        std::uniform_real_distribution<float> bright(-0.08f, 0.08f);
        float b = bright(r);
        for (float& v : s.x) v = std::clamp(v + b + noise(r), 0.0f, 0.999f);
        return s;
    };
    Dataset d;
    d.train = make_split(n_train, 43, rng, gen);
    d.test = make_split(n_test, 43, rng, gen);
    return d;
}

namespace {
// Area resampling of a single-channel square image (used to shrink the
// 28x28 digits onto reduced input grids).
std::vector<float> resample_square(const std::vector<float>& in, size_t src, size_t dst) {
    std::vector<float> out(dst * dst, 0.0f);
    double scale = double(src) / double(dst);
    for (size_t r = 0; r < dst; ++r)
        for (size_t c = 0; c < dst; ++c) {
            size_t r0 = size_t(r * scale), r1 = std::max(r0 + 1, size_t((r + 1) * scale));
            size_t c0 = size_t(c * scale), c1 = std::max(c0 + 1, size_t((c + 1) * scale));
            r1 = std::min(r1, src);
            c1 = std::min(c1, src);
            double sum = 0;
            for (size_t rr = r0; rr < r1; ++rr)
                for (size_t cc = c0; cc < c1; ++cc) sum += in[rr * src + cc];
            out[r * dst + c] = float(sum / double((r1 - r0) * (c1 - c0)));
        }
    return out;
}
}  // namespace

Dataset synth_dataset_for(const std::string& arch_name, size_t n_train, size_t n_test, uint64_t seed) {
    if (arch_name == "mnist-reduced") {
        Dataset d = synth_mnist(n_train, n_test, seed);
        for (auto* split : {&d.train, &d.test})
            for (Sample& s : *split) s.x = resample_square(s.x, 28, 10);
        return d;
    }
    if (arch_name.find("mnist") != std::string::npos) return synth_mnist(n_train, n_test, seed);
    if (arch_name.find("har") != std::string::npos) return synth_har(n_train, n_test, seed);
    if (arch_name.find("gtsrb") != std::string::npos) return synth_gtsrb(n_train, n_test, seed);
    throw TrainError("no dataset generator for architecture: " + arch_name);
}

// ---- file formats -----------------------------------------------------------

namespace {
uint32_t read_be32(std::istream& f) {
    uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw TrainError("truncated IDX file");
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
}
void write_be32(std::ostream& f, uint32_t v) {
    uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}
}  // namespace

std::vector<Sample> load_idx_pair(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw TrainError("cannot open IDX image file: " + images_path);
    if (read_be32(fi) != 0x00000803u) throw TrainError("bad IDX image magic in " + images_path);
    uint32_t n = read_be32(fi), rows = read_be32(fi), cols = read_be32(fi);

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw TrainError("cannot open IDX label file: " + labels_path);
    if (read_be32(fl) != 0x00000801u) throw TrainError("bad IDX label magic in " + labels_path);
    uint32_t nl = read_be32(fl);
    if (n != nl) throw TrainError("IDX image/label count mismatch");

    std::vector<Sample> out(n);
    std::vector<uint8_t> px(size_t(rows) * cols);
    for (uint32_t i = 0; i < n; ++i) {
        fi.read(reinterpret_cast<char*>(px.data()), std::streamsize(px.size()));
        int lab = fl.get();
        if (!fi || lab == EOF) throw TrainError("truncated IDX file");
        out[i].label = lab;
        out[i].x.resize(px.size());
        for (size_t j = 0; j < px.size(); ++j) out[i].x[j] = float(px[j]) / 256.0f;
    }
    return out;
}

void save_idx_pair(const std::vector<Sample>& samples, const std::vector<size_t>& shape,
                   const std::string& images_path, const std::string& labels_path) {
    size_t rows = shape.size() == 3 ? shape[0] * shape[1] : shape[0];
    size_t cols = shape.back();
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw TrainError("cannot open IDX image file for write: " + images_path);
    write_be32(fi, 0x00000803u);
    write_be32(fi, uint32_t(samples.size()));
    write_be32(fi, uint32_t(rows));
    write_be32(fi, uint32_t(cols));
    for (const Sample& s : samples) {
        if (s.x.size() != rows * cols) throw TrainError("sample size does not match shape");
        for (float v : s.x) fi.put(char(uint8_t(std::clamp(std::lround(v * 256.0f), 0l, 255l))));
    }
    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw TrainError("cannot open IDX label file for write: " + labels_path);
    write_be32(fl, 0x00000801u);
    write_be32(fl, uint32_t(samples.size()));
    for (const Sample& s : samples) fl.put(char(uint8_t(s.label)));
}

std::vector<Sample> load_har_text(const std::string& x_path, const std::string& y_path,
                                  size_t feature_count) {
    std::ifstream fx(x_path);
    if (!fx) throw TrainError("cannot open feature file: " + x_path);
    std::ifstream fy(y_path);
    if (!fy) throw TrainError("cannot open label file: " + y_path);
    std::vector<Sample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(fx, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ss(line);
        Sample s;
        double v;
        while (ss >> v) s.x.push_back(float(v));
        if (s.x.size() != feature_count)
            throw TrainError(x_path + ": line " + std::to_string(lineno) + " has " +
                             std::to_string(s.x.size()) + " features, expected " +
                             std::to_string(feature_count));
        out.push_back(std::move(s));
    }
    int lab, minlab = INT32_MAX;
    size_t i = 0;
    std::vector<int> labs;
    while (fy >> lab) {
        labs.push_back(lab);
        minlab = std::min(minlab, lab);
    }
    if (labs.size() != out.size()) throw TrainError("feature/label count mismatch");
    // UCI labels are 1-based; shift to 0-based if no zero appears.
    int off = minlab >= 1 ? 1 : 0;
    for (; i < out.size(); ++i) out[i].label = labs[i] - off;
    return out;
}

}  // namespace ember
