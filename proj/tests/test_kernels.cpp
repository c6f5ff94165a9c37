#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ember/kernels.hpp"

using namespace ember;

namespace {

// Independent oracle: dequantize, run a plain float conv/fc, requantize with
// the shared rounding rule. Exact as long as nothing saturates.
q15_t oracle_requant(double acc_scaled, int shift) {
    double q = acc_scaled / std::pow(2.0, shift);
    double r = q >= 0 ? std::floor(q + 0.5) : std::ceil(q - 0.5);
    if (r > kQ15Max) return kQ15Max;
    if (r < kQ15Min) return kQ15Min;
    return q15_t(r);
}

LayerSpec random_conv(std::mt19937_64& rng, size_t oc, size_t ic, size_t k) {
    LayerSpec l = detail::conv(0, oc, ic, k, k);
    std::uniform_int_distribution<int> w(-2000, 2000), b(-50000, 50000);
    for (auto& q : l.weights.data) q = q15_t(w(rng));
    for (auto& q : l.bias) q = b(rng);
    l.weights.scale = 0;
    l.out_scale = 3;
    return l;
}

LayerSpec random_fc(std::mt19937_64& rng, size_t of, size_t inf) {
    LayerSpec l = detail::fc(0, of, inf);
    std::uniform_int_distribution<int> w(-2000, 2000), b(-50000, 50000);
    for (auto& q : l.weights.data) q = q15_t(w(rng));
    for (auto& q : l.bias) q = b(rng);
    l.weights.scale = 0;
    l.out_scale = 4;
    return l;
}

QTensor random_input(std::mt19937_64& rng, std::vector<size_t> shape, int scale) {
    QTensor t(std::move(shape), scale);
    std::uniform_int_distribution<int> v(-8000, 8000);
    for (auto& q : t.data) q = q15_t(v(rng));
    return t;
}

}  // namespace

TEST_CASE("requant_shift arithmetic") {
    LayerSpec l = detail::conv(0, 1, 1, 1, 1);
    l.weights.scale = 1;
    l.out_scale = 0;
    CHECK(requant_shift(l, 0) == 14);
    l.out_scale = 3;
    l.weights.scale = 0;
    CHECK(requant_shift(l, 2) == 16);
}

TEST_CASE("identity kernel passes the input through bit-exactly") {
    // 1x1 conv with weight 1.0 stored at scale 1 (q=16384), out_scale = in_scale.
    LayerSpec l = detail::conv(0, 1, 1, 1, 1);
    l.weights.data = {16384};
    l.weights.scale = 1;
    l.out_scale = 0;
    std::mt19937_64 rng(5);
    QTensor in = random_input(rng, {1, 4, 4}, 0);
    QTensor out = conv2d_forward(in, l, InferenceMode::Full);
    CHECK(out.data == in.data);
    CHECK(out.scale == 0);
}

TEST_CASE("all-ones 2x2 kernel sums the window") {
    // weights 1.0 at scale 1 over a 2x2 window of constant 1.0 inputs at
    // scale 1 -> exact 4.0 at out_scale 3.
    LayerSpec l = detail::conv(0, 1, 1, 2, 2);
    l.weights.data.assign(4, 16384);
    l.weights.scale = 1;
    l.out_scale = 3;
    QTensor in({1, 3, 3}, 1);
    in.data.assign(9, 16384);  // 1.0 at scale 1
    QTensor out = conv2d_forward(in, l, InferenceMode::Full);
    for (q15_t q : out.data) CHECK(double(q) * std::pow(2.0, out.scale - 15) == 4.0);
}

TEST_CASE("conv matches the naive float oracle across 120 seeds") {
    for (uint64_t seed = 0; seed < 120; ++seed) {
        std::mt19937_64 rng(seed);
        LayerSpec l = random_conv(rng, 2, 2, 3);
        QTensor in = random_input(rng, {2, 5, 6}, 2);
        int shift = requant_shift(l, in.scale);
        QTensor got = conv2d_forward(in, l, InferenceMode::Full);
        const size_t OH = 3, OW = 4;
        for (size_t oc = 0; oc < 2; ++oc)
            for (size_t r = 0; r < OH; ++r)
                for (size_t c = 0; c < OW; ++c) {
                    double acc = double(l.bias[oc]);
                    for (size_t ic = 0; ic < 2; ++ic)
                        for (size_t kr = 0; kr < 3; ++kr)
                            for (size_t kc = 0; kc < 3; ++kc)
                                acc += double(in.data[ic * 30 + (r + kr) * 6 + (c + kc)]) *
                                       double(l.weights.data[((oc * 2 + ic) * 3 + kr) * 3 + kc]);
                    CAPTURE(seed);
                    CHECK(got.data[(oc * OH + r) * OW + c] == oracle_requant(acc, shift));
                }
    }
}

TEST_CASE("fc matches the naive dot-product oracle across 120 seeds") {
    for (uint64_t seed = 1000; seed < 1120; ++seed) {
        std::mt19937_64 rng(seed);
        LayerSpec l = random_fc(rng, 4, 7);
        QTensor in = random_input(rng, {7}, 1);
        int shift = requant_shift(l, in.scale);
        QTensor got = fc_forward(in, l, InferenceMode::Full);
        for (size_t o = 0; o < 4; ++o) {
            double acc = double(l.bias[o]);
            for (size_t i = 0; i < 7; ++i)
                acc += double(in.data[i]) * double(l.weights.data[o * 7 + i]);
            CAPTURE(seed);
            CHECK(got.data[o] == oracle_requant(acc, shift));
        }
    }
}

TEST_CASE("canonical MAC order is out_ch, out_row, out_col, in_ch, k_row, k_col") {
    LayerSpec l = detail::conv(0, 2, 2, 2, 2);
    std::vector<std::pair<size_t, size_t>> seq;
    std::vector<size_t> in_shape{2, 3, 3};
    for (size_t O = 0; O < 2 * 2 * 2; ++O)
        for_each_mac(l, in_shape, O, InferenceMode::Full,
                     [&](size_t w, size_t i) { seq.emplace_back(w, i); });
    // Independent reference enumeration.
    std::vector<std::pair<size_t, size_t>> ref;
    for (size_t oc = 0; oc < 2; ++oc)
        for (size_t orow = 0; orow < 2; ++orow)
            for (size_t ocol = 0; ocol < 2; ++ocol)
                for (size_t ic = 0; ic < 2; ++ic)
                    for (size_t kr = 0; kr < 2; ++kr)
                        for (size_t kc = 0; kc < 2; ++kc)
                            ref.emplace_back(((oc * 2 + ic) * 2 + kr) * 2 + kc,
                                             ic * 9 + (orow + kr) * 3 + (ocol + kc));
    CHECK(seq == ref);
}

TEST_CASE("low-energy mode skips masked weights") {
    std::mt19937_64 rng(3);
    LayerSpec l = random_fc(rng, 2, 4);
    l.mask.assign(8, 0);
    l.mask[0] = l.mask[3] = l.mask[5] = 1;  // keep w(0,0), w(0,3), w(1,1)
    QTensor in({4}, 0);
    in.data = {1000, 2000, 3000, 4000};
    int shift = requant_shift(l, 0);
    QTensor full = fc_forward(in, l, InferenceMode::Full);
    QTensor le = fc_forward(in, l, InferenceMode::LowEnergy);
    double a0 = double(l.bias[0]) + 1000.0 * l.weights.data[0] + 4000.0 * l.weights.data[3];
    double a1 = double(l.bias[1]) + 2000.0 * l.weights.data[5];
    CHECK(le.data[0] == oracle_requant(a0, shift));
    CHECK(le.data[1] == oracle_requant(a1, shift));
    CHECK(full.data != le.data);
    // MAC counts reflect the skipping.
    OpCounts cf, cl;
    fc_forward(in, l, InferenceMode::Full, &cf);
    fc_forward(in, l, InferenceMode::LowEnergy, &cl);
    CHECK(cf.macs == 8);
    CHECK(cl.macs == 3);
}

TEST_CASE("low-energy without a mask on a patterned layer is rejected") {
    std::mt19937_64 rng(4);
    LayerSpec l = random_fc(rng, 2, 3);
    l.le_exempt = false;
    QTensor in({3}, 0);
    CHECK_THROWS_AS(fc_forward(in, l, InferenceMode::LowEnergy), ConfigError);
    l.le_exempt = true;
    CHECK_NOTHROW(fc_forward(in, l, InferenceMode::LowEnergy));
}

TEST_CASE("maxpool takes window maxima; relu clamps; slice keeps a channel prefix") {
    QTensor in({2, 2, 2}, 0);
    in.data = {5, -3, 7, 1, -9, -2, -4, -6};
    LayerSpec mp = detail::pool(0);
    QTensor pooled = layer_forward(in, mp, InferenceMode::Full);
    CHECK(pooled.shape == std::vector<size_t>{2, 1, 1});
    CHECK(pooled.data[0] == 7);
    CHECK(pooled.data[1] == -2);

    LayerSpec rl = detail::relu(0);
    QTensor relu_out = layer_forward(in, rl, InferenceMode::Full);
    for (size_t i = 0; i < in.data.size(); ++i)
        CHECK(relu_out.data[i] == std::max<q15_t>(in.data[i], 0));

    LayerSpec sl = detail::slice(0, 1);
    QTensor sliced = layer_forward(in, sl, InferenceMode::Full);
    CHECK(sliced.shape == std::vector<size_t>{1, 2, 2});
    CHECK(std::equal(sliced.data.begin(), sliced.data.end(), in.data.begin()));
}

TEST_CASE("relu preserves maxpool shape chain and scale") {
    QTensor in({1, 4, 4}, 2);
    LayerSpec mp = detail::pool(0);
    QTensor out = layer_forward(in, mp, InferenceMode::Full);
    CHECK(out.scale == 2);
    CHECK(out.shape == std::vector<size_t>{1, 2, 2});
}

TEST_CASE("model shape propagation and param counts for the published architectures") {
    ModelSpec mnist = make_mnist_arch();
    CHECK_NOTHROW(validate_model(mnist));
    CHECK(model_output_shape(mnist) == std::vector<size_t>{10});
    CHECK(param_count(mnist, InferenceMode::Full) == 42352);

    ModelSpec har = make_har_arch();
    CHECK_NOTHROW(validate_model(har));
    CHECK(model_output_shape(har) == std::vector<size_t>{6});
    CHECK(param_count(har, InferenceMode::Full) == 56800);

    ModelSpec gtsrb = make_gtsrb_arch();
    CHECK_NOTHROW(validate_model(gtsrb));
    CHECK(model_output_shape(gtsrb) == std::vector<size_t>{43});
    CHECK(param_count(gtsrb, InferenceMode::Full) == 56508);
}

TEST_CASE("infer_continuous runs the full stack and counts ops") {
    ModelSpec m = make_reduced_mnist_arch();
    std::mt19937_64 rng(77);
    for (auto& l : m.layers)
        if (l.has_weights()) {
            std::uniform_int_distribution<int> w(-300, 300);
            for (auto& q : l.weights.data) q = q15_t(w(rng));
            l.out_scale = 3;
        }
    QTensor in = random_input(rng, {1, 10, 10}, 0);
    InferResult r = infer_continuous(m, in, InferenceMode::Full);
    CHECK(r.output.shape == std::vector<size_t>{10});
    CHECK(r.predicted_class < 10);
    // conv0: 2x6x6 outputs x 25 macs; conv3: 4x1x1 x 18; fc: 8x4 and 10x8
    CHECK(r.counts.macs == 2ull * 36 * 25 + 4ull * 18 + 8ull * 4 + 10ull * 8);
    CHECK(r.output.data[r.predicted_class] ==
          *std::max_element(r.output.data.begin(), r.output.data.end()));
}

TEST_CASE("bad shapes are rejected") {
    LayerSpec l = detail::conv(0, 1, 2, 3, 3);
    QTensor in({1, 5, 5}, 0);  // wrong channel count
    CHECK_THROWS_AS(conv2d_forward(in, l, InferenceMode::Full), ShapeError);
    LayerSpec f = detail::fc(0, 4, 10);
    QTensor in2({9}, 0);
    CHECK_THROWS_AS(fc_forward(in2, f, InferenceMode::Full), ShapeError);
}
