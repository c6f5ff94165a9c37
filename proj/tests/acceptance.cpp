// Acceptance gate: one pass/fail line per criterion, exit status = number
// of failed criteria. Each criterion is independent; a thrown exception
// fails only its own criterion.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "ember/pattern.hpp"
#include "ember/runtime.hpp"
#include "ember/train.hpp"

using namespace ember;

namespace {

struct Check {
    bool ok = true;
    std::ostringstream detail;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what;
        }
    }
    template <class T>
    void expect_eq(const T& got, const T& want, const std::string& what) {
        if (!(got == want)) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what << " (got " << got << ", want "
                   << want << ")";
        }
    }
    void expect_in(double got, double lo, double hi, const std::string& what) {
        if (!(got >= lo && got <= hi)) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what << " (got " << got << ", want ["
                   << lo << ", " << hi << "])";
        }
    }
};

// ---- shared builders --------------------------------------------------------

ModelSpec concentrated_model(const ModelSpec& arch_in, uint64_t seed) {
    ModelSpec arch = arch_in;
    FloatModel fm = make_float_model(arch, seed);
    copy_weights_to_spec(fm, arch);
    PatternLibrary lib = build_pattern_library(arch);
    materialize_masks(arch, lib);
    attach_masks(fm, arch);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    size_t features = 1;
    for (size_t d : arch.input_shape) features *= d;
    std::vector<Sample> calib(8);
    for (auto& s : calib) {
        s.x.resize(features);
        for (auto& v : s.x) v = u(rng);
    }
    return quantize_export(fm, calib);
}

ModelSpec reduced_model(uint64_t seed = 3) { return concentrated_model(make_reduced_mnist_arch(), seed); }

QTensor random_model_input(const ModelSpec& m, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    size_t features = 1;
    for (size_t d : m.input_shape) features *= d;
    std::vector<float> x(features);
    for (auto& v : x) v = u(rng);
    return quantize_input(m, x);
}

// 2-MAC fully connected toy whose accumulator spans a failure at MAC
// granularity.
ModelSpec toy_model() {
    ModelSpec m;
    m.name = "toy";
    m.input_shape = {2};
    LayerSpec fc;
    fc.kind = LayerKind::FullyConnected;
    fc.id = 0;
    fc.out_features = 1;
    fc.in_features = 2;
    fc.weights = QTensor({1, 2}, 1);
    fc.weights.data = {16384, 8192};
    fc.bias = {0};
    fc.out_scale = 2;
    fc.le_exempt = true;
    m.layers = {fc};
    return m;
}

// ---- criterion 1: parameter counts -----------------------------------------

void criterion_params(Check& c) {
    struct Row {
        ModelSpec arch;
        size_t full;
        size_t low;
    };
    std::vector<Row> rows = {{make_mnist_arch(), 42352, 19280},
                             {make_har_arch(), 56800, 14166},
                             {make_gtsrb_arch(), 56508, 33432}};
    for (Row& r : rows) {
        ModelSpec m = concentrated_model(r.arch, 11);
        c.expect_eq(param_count(m, InferenceMode::Full), r.full, r.arch.name + " full params");
        double low = double(param_count(m, InferenceMode::LowEnergy));
        c.expect_in(low, 0.98 * double(r.low), 1.02 * double(r.low),
                    r.arch.name + " low-energy params");
    }
}

// ---- criterion 2: 1000+ seeded intermittent traces -------------------------
// Also feeds criterion 9: per-trial conservation bookkeeping.

struct TraceSuiteStats {
    std::atomic<uint64_t> trials{0}, completed{0}, bit_equal{0}, conservation_ok{0};
    std::atomic<uint64_t> commits{0};
};

void criterion_trace_suite(Check& c, TraceSuiteStats& stats) {
    ModelSpec m = reduced_model();
    QTensor in = random_model_input(m, 52);
    InferResult oracle = infer_continuous(m, in, InferenceMode::Full);
    CostModel cost;
    cost.idle_power_uw = 40.0;

    constexpr uint64_t kSeeds = 334;  // x3 granularities = 1002 trials
    std::atomic<uint64_t> next{0};
    auto worker = [&] {
        for (uint64_t s = next.fetch_add(1); s < kSeeds; s = next.fetch_add(1)) {
            for (UnitKind g : {UnitKind::Mac, UnitKind::OutputElement, UnitKind::OutputRow}) {
                ExecConfig cfg;
                cfg.granularity = g;
                cfg.max_sim_time_us = 600e6;
                EnergyState es;
                es.capacitance = 2.2e-6;
                auto dev = make_device(m, es);
                PowerTrace trace = make_random_trace(500.0, 8000.0, s);
                ExecutionReport rep = run_intermittent(m, in, trace, cfg, cost, *dev);
                ++stats.trials;
                stats.completed += rep.completed;
                stats.bit_equal += (rep.completed && rep.output.data == oracle.output.data);
                double stored = dev->energy.stored_j() * 1e9;
                stats.conservation_ok +=
                    (rep.energy_consumed_nj <= rep.energy_harvested_nj + stored + 1.0);
                stats.commits += rep.progress_commits;
            }
        }
    };
    std::vector<std::future<void>> pool;
    for (unsigned w = 0; w < 8; ++w) pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool) f.get();

    c.expect(stats.trials >= 1000, "need >= 1000 trials");
    c.expect_eq(stats.completed.load(), stats.trials.load(), "all trials complete");
    c.expect_eq(stats.bit_equal.load(), stats.trials.load(), "all outputs bit-equal to oracle");
    c.detail << (c.detail.str().empty() ? "" : "; ") << stats.trials.load()
             << " trials, 100% complete" << (c.ok ? "" : " (violated)");
}

// ---- criterion 3: torn-commit exhaustion ------------------------------------

void criterion_torn_commits(Check& c) {
    ModelSpec toy = toy_model();
    QTensor in({2}, 0);
    in.data = {-12000, 7000};
    InferResult oracle = infer_continuous(toy, in, InferenceMode::Full);
    CostModel cost;
    ExecConfig cfg;
    cfg.granularity = UnitKind::Mac;

    // Baseline run: total durable word writes = number of failure points.
    EnergyState es0;
    auto dev0 = make_device(toy, es0);
    ExecutionReport base = run_intermittent(toy, in, make_constant_trace(5000.0), cfg, cost, *dev0);
    c.expect(base.completed, "unkilled toy run completes");
    uint64_t ticks = dev0->nvm.write_ticks();
    c.expect(ticks > 0, "toy run writes NVM");

    uint64_t corrupt_loads = 0, wrong = 0;
    for (uint64_t k = 1; k <= ticks; ++k) {
        EnergyState es;
        auto dev = make_device(toy, es);
        dev->kill_at_write_tick = k;
        ExecutionReport rep;
        try {
            rep = run_intermittent(toy, in, make_constant_trace(5000.0), cfg, cost, *dev);
        } catch (const std::exception&) {
            ++corrupt_loads;
            continue;
        }
        if (!rep.completed || rep.output.data != oracle.output.data) ++wrong;
        // progress store must still load a coherent final record
        try {
            ProgressRecord r = dev->progress->load();
            if (r.layer != toy.layers.size()) ++wrong;
        } catch (const std::exception&) {
            ++corrupt_loads;
        }
    }
    c.expect_eq(corrupt_loads, uint64_t(0), "corrupt progress loads");
    c.expect_eq(wrong, uint64_t(0), "wrong outcomes after torn commit");
    c.detail << (c.detail.str().empty() ? "" : "; ") << ticks << " failure points exhausted";
}

// ---- criterion 4: WAR hazard search -----------------------------------------

void criterion_war(Check& c) {
    ModelSpec toy = toy_model();
    QTensor in({2}, 0);
    in.data = {16384, 16384};
    InferResult oracle = infer_continuous(toy, in, InferenceMode::Full);
    CostModel cost;
    int corrupted[2] = {0, 0};  // [protection]
    for (int prot = 0; prot <= 1; ++prot) {
        for (uint64_t k = 1; k < 60; ++k) {
            EnergyState es;
            auto dev = make_device(toy, es);
            dev->kill_at_write_tick = k;
            ExecConfig cfg;
            cfg.protection = (prot == 1);
            cfg.granularity = UnitKind::Mac;
            ExecutionReport rep =
                run_intermittent(toy, in, make_constant_trace(5000.0), cfg, cost, *dev);
            if (!rep.completed || rep.output.data != oracle.output.data) ++corrupted[prot];
        }
    }
    c.expect(corrupted[0] >= 1, "protection-off search finds a corruption");
    c.expect_eq(corrupted[1], 0, "protection-on corruptions");
    c.detail << (c.detail.str().empty() ? "" : "; ") << "off: " << corrupted[0]
             << "/59 corrupted, on: 0/59";
}

// ---- criterion 5: completion asymmetry vs restart baseline ------------------

void criterion_completion_asymmetry(Check& c) {
    ModelSpec m = reduced_model();
    CostModel cost;

    // Calibrate: energy one full inference consumes under ample power.
    ExecConfig ample;
    ExecutionReport ref =
        run_intermittent(m, random_model_input(m, 500), make_constant_trace(5000.0), ample, cost);
    c.expect(ref.completed, "calibration run completes");
    double e_inf_nj = ref.energy_consumed_nj;

    // Square wave whose on-period delivers ~10% of one inference.
    const double amplitude_uw = 1000.0;
    const double period_us = 20000.0;
    double on_us = (0.10 * e_inf_nj) / (amplitude_uw * 1e-3);  // nJ / (nJ/us)
    double duty = on_us / period_us;
    PowerTrace trace = make_square_trace(amplitude_uw, period_us, duty);

    int cf_done = 0, cf_match = 0, base_done = 0;
    std::atomic<uint64_t> next{0};
    std::mutex mu;
    auto worker = [&] {
        for (uint64_t t = next.fetch_add(1); t < 100; t = next.fetch_add(1)) {
            QTensor in = random_model_input(m, 600 + t);
            InferResult oracle = infer_continuous(m, in, InferenceMode::Full);

            ExecConfig keep;
            keep.max_sim_time_us = 600e6;
            EnergyState es;
            es.capacitance = 1.0e-6;
            auto dev = make_device(m, es);
            ExecutionReport ok = run_intermittent(m, in, trace, keep, cost, *dev);

            ExecConfig base = keep;
            base.restart_baseline = true;
            base.max_sim_time_us = 5e6;  // 250 harvest periods
            EnergyState es2;
            es2.capacitance = 1.0e-6;
            auto dev2 = make_device(m, es2);
            ExecutionReport fail = run_intermittent(m, in, trace, base, cost, *dev2);

            std::lock_guard<std::mutex> g(mu);
            cf_done += ok.completed;
            cf_match += (ok.completed && ok.output.data == oracle.output.data);
            base_done += fail.completed;
        }
    };
    std::vector<std::future<void>> pool;
    for (unsigned w = 0; w < 8; ++w) pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool) f.get();

    c.expect_eq(cf_done, 100, "checkpoint-free completions");
    c.expect_eq(cf_match, 100, "checkpoint-free oracle matches");
    c.expect_eq(base_done, 0, "restart-baseline completions");
    c.detail << (c.detail.str().empty() ? "" : "; ") << "on-period energy "
             << amplitude_uw * 1e-3 * on_us << " nJ vs inference " << e_inf_nj << " nJ";
}

// ---- criterion 6: full vs low-energy latency ratios -------------------------

void criterion_latency_ratios(Check& c) {
    CostModel cost;
    std::vector<ModelSpec> archs = {make_mnist_arch(), make_har_arch(), make_gtsrb_arch()};
    double sum = 0;
    for (ModelSpec& arch : archs) {
        ModelSpec m = concentrated_model(arch, 21);
        QTensor in = random_model_input(m, 700);
        ExecConfig cfg;
        ExecutionReport full = run_intermittent(m, in, make_constant_trace(50000.0), cfg, cost);
        cfg.policy = ModePolicy::LowEnergy;
        ExecutionReport le = run_intermittent(m, in, make_constant_trace(50000.0), cfg, cost);
        c.expect(full.completed && le.completed, arch.name + " runs complete");
        double ratio = double(full.cycles_total) / double(le.cycles_total);
        c.expect_in(ratio, 1.3, 2.2, arch.name + " cycle ratio");
        c.detail << (c.detail.str().empty() ? "" : "; ") << arch.name << " " << ratio;
        sum += ratio;
    }
    c.expect_in(sum / 3.0, 1.4, 1.9, "mean cycle ratio");
}

// ---- criterion 7: training trajectory ---------------------------------------

void criterion_training(Check& c) {
    // Primary trajectory: digit classification at full scale.
    ModelSpec arch = make_mnist_arch();
    Dataset data = synth_mnist(10000, 2000, 42);
    FloatModel fm = make_float_model(arch, 42);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 42;
    double baseline = train_baseline(fm, data, cfg);

    copy_weights_to_spec(fm, arch);
    PatternLibrary lib = build_pattern_library(arch);
    materialize_masks(arch, lib);
    attach_masks(fm, arch);
    double pruned = apply_pattern_prune(fm, data.test);

    TrainConfig ft = cfg;
    ft.epochs = 2;
    double p1 = finetune_phase1(fm, data, ft);

    // Snapshot concentrated weights; phase 2 must not move them.
    FloatModel before = fm;
    double le_before = evaluate_low_energy(fm, data.test);
    double p2 = finetune_phase2(fm, data, ft);
    double le_after = evaluate_low_energy(fm, data.test);

    bool frozen = true;
    for (size_t li = 0; li < fm.layers.size(); ++li) {
        const FloatLayer& a = before.layers[li];
        const FloatLayer& b = fm.layers[li];
        if (!a.has_weights()) continue;
        for (size_t wi = 0; wi < a.weights.size(); ++wi) {
            bool active = a.mask.empty() || a.mask[wi];
            if (active && std::memcmp(&a.weights[wi], &b.weights[wi], sizeof(float)) != 0)
                frozen = false;
        }
    }

    c.expect(baseline >= 0.95, "baseline accuracy >= 0.95 (got " + std::to_string(baseline) + ")");
    c.expect(pruned <= 0.50, "pruned accuracy <= 0.50 (got " + std::to_string(pruned) + ")");
    c.expect(p1 >= 0.90, "phase-1 accuracy >= 0.90 (got " + std::to_string(p1) + ")");
    c.expect(p2 >= baseline - 0.02, "phase-2 within 2 points of baseline (got " +
                                        std::to_string(p2) + " vs " + std::to_string(baseline) + ")");
    c.expect(frozen, "concentrated weights bit-identical across phase 2");
    c.expect(std::fabs(le_before - le_after) < 1e-12, "low-energy accuracy invariant in phase 2");

    // Directional trajectories on the other two workloads (reduced scale).
    for (const char* name : {"har", "gtsrb"}) {
        ModelSpec a2 = make_arch_by_name(name);
        Dataset d2 = synth_dataset_for(name, 3000, 600, 43);
        FloatModel f2 = make_float_model(a2, 43);
        TrainConfig c2;
        c2.epochs = 3;
        c2.seed = 43;
        double b2 = train_baseline(f2, d2, c2);
        copy_weights_to_spec(f2, a2);
        PatternLibrary l2 = build_pattern_library(a2);
        materialize_masks(a2, l2);
        attach_masks(f2, a2);
        double pr2 = apply_pattern_prune(f2, d2.test);
        TrainConfig c2ft = c2;
        c2ft.epochs = 2;
        double r2 = finetune_phase1(f2, d2, c2ft);
        r2 = std::max(r2, finetune_phase2(f2, d2, c2ft));
        c.expect(pr2 < b2, std::string(name) + " pruning drops accuracy");
        c.expect(r2 > pr2, std::string(name) + " fine-tuning recovers accuracy");
        c.detail << (c.detail.str().empty() ? "" : "; ") << name << " " << b2 << " -> " << pr2
                 << " -> " << r2;
    }
    c.detail << "; mnist " << baseline << " -> " << pruned << " -> " << p1 << " -> " << p2;
}

// ---- criterion 8: numerical hygiene -----------------------------------------

q15_t oracle_requant(double acc, int shift) {
    double q = acc / std::pow(2.0, shift);
    double r = q >= 0 ? std::floor(q + 0.5) : std::ceil(q - 0.5);
    if (r > kQ15Max) return kQ15Max;
    if (r < kQ15Min) return kQ15Min;
    return q15_t(r);
}

// Independent float forward + cross-entropy used only for finite differences.
double oracle_loss(const FloatModel& fm, const Sample& s) {
    std::vector<float> act(s.x);
    std::vector<size_t> shape = fm.input_shape;
    for (const FloatLayer& l : fm.layers) {
        std::vector<float> out;
        switch (l.kind) {
            case LayerKind::Conv2D: {
                size_t H = shape[1], W = shape[2];
                size_t OH = H - l.kh + 1, OW = W - l.kw + 1;
                out.assign(l.out_ch * OH * OW, 0.f);
                for (size_t oc = 0; oc < l.out_ch; ++oc)
                    for (size_t r = 0; r < OH; ++r)
                        for (size_t col = 0; col < OW; ++col) {
                            float a = l.bias[oc];
                            for (size_t ic = 0; ic < l.in_ch; ++ic)
                                for (size_t kr = 0; kr < l.kh; ++kr)
                                    for (size_t kc = 0; kc < l.kw; ++kc)
                                        a += act[ic * H * W + (r + kr) * W + (col + kc)] *
                                             l.weights[((oc * l.in_ch + ic) * l.kh + kr) * l.kw + kc];
                            out[(oc * OH + r) * OW + col] = a;
                        }
                shape = {l.out_ch, OH, OW};
                break;
            }
            case LayerKind::FullyConnected: {
                out.assign(l.out_features, 0.f);
                for (size_t o = 0; o < l.out_features; ++o) {
                    float a = l.bias[o];
                    for (size_t i = 0; i < l.in_features; ++i)
                        a += l.weights[o * l.in_features + i] * act[i];
                    out[o] = a;
                }
                shape = {l.out_features};
                break;
            }
            case LayerKind::MaxPool: {
                size_t H = shape[1], W = shape[2];
                size_t OH = H / l.pool, OW = W / l.pool;
                out.assign(shape[0] * OH * OW, 0.f);
                for (size_t ch = 0; ch < shape[0]; ++ch)
                    for (size_t r = 0; r < OH; ++r)
                        for (size_t col = 0; col < OW; ++col) {
                            float best = -1e30f;
                            for (size_t dr = 0; dr < l.pool; ++dr)
                                for (size_t dc = 0; dc < l.pool; ++dc)
                                    best = std::max(best, act[ch * H * W + (r * l.pool + dr) * W +
                                                              col * l.pool + dc]);
                            out[(ch * OH + r) * OW + col] = best;
                        }
                shape = {shape[0], OH, OW};
                break;
            }
            case LayerKind::ReLU:
                out = act;
                for (auto& v : out) v = std::max(v, 0.f);
                break;
            case LayerKind::ChannelSlice:
                out.assign(act.begin(), act.begin() + long(l.keep_channels * shape[1] * shape[2]));
                shape = {l.keep_channels, shape[1], shape[2]};
                break;
        }
        act = std::move(out);
    }
    double mx = *std::max_element(act.begin(), act.end());
    double denom = 0;
    for (float v : act) denom += std::exp(double(v) - mx);
    return -(double(act[size_t(s.label)]) - mx - std::log(denom));
}

void criterion_numerics(Check& c) {
    // Kernel oracles over 120 conv + 120 fc seeds.
    uint64_t kernel_fail = 0;
    for (uint64_t seed = 2000; seed < 2120; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> wd(-2000, 2000), bd(-50000, 50000), vd(-8000, 8000);
        LayerSpec l = detail::conv(0, 3, 2, 3, 3);
        for (auto& q : l.weights.data) q = q15_t(wd(rng));
        for (auto& b : l.bias) b = bd(rng);
        l.weights.scale = 0;
        l.out_scale = 3;
        QTensor in({2, 5, 6}, 1);
        for (auto& v : in.data) v = q15_t(vd(rng));
        int shift = requant_shift(l, in.scale);
        QTensor got = conv2d_forward(in, l, InferenceMode::Full);
        for (size_t oc = 0; oc < 3; ++oc)
            for (size_t r = 0; r < 3; ++r)
                for (size_t col = 0; col < 4; ++col) {
                    double acc = double(l.bias[oc]);
                    for (size_t ic = 0; ic < 2; ++ic)
                        for (size_t kr = 0; kr < 3; ++kr)
                            for (size_t kc = 0; kc < 3; ++kc)
                                acc += double(in.data[ic * 30 + (r + kr) * 6 + (col + kc)]) *
                                       double(l.weights.data[((oc * 2 + ic) * 3 + kr) * 3 + kc]);
                    if (got.data[(oc * 3 + r) * 4 + col] != oracle_requant(acc, shift)) ++kernel_fail;
                }

        LayerSpec f = detail::fc(0, 4, 7);
        for (auto& q : f.weights.data) q = q15_t(wd(rng));
        for (auto& b : f.bias) b = bd(rng);
        f.weights.scale = 0;
        f.out_scale = 4;
        QTensor fin({7}, 1);
        for (auto& v : fin.data) v = q15_t(vd(rng));
        int fshift = requant_shift(f, fin.scale);
        QTensor fgot = fc_forward(fin, f, InferenceMode::Full);
        for (size_t o = 0; o < 4; ++o) {
            double acc = double(f.bias[o]);
            for (size_t i = 0; i < 7; ++i)
                acc += double(fin.data[i]) * double(f.weights.data[o * 7 + i]);
            if (fgot.data[o] != oracle_requant(acc, fshift)) ++kernel_fail;
        }
    }
    c.expect_eq(kernel_fail, uint64_t(0), "kernel-vs-oracle mismatches over 240 seeds");

    // Gradient check on a tiny all-exempt model.
    ModelSpec tiny;
    tiny.name = "tiny";
    tiny.input_shape = {1, 4, 4};
    tiny.layers = {detail::conv(0, 2, 1, 2, 2, true), detail::relu(1), detail::pool(2),
                   detail::fc(3, 6, 2, true), detail::relu(4), detail::fc(5, 3, 6, true)};
    FloatModel fm = make_float_model(tiny, 91);
    Dataset d;
    std::mt19937_64 rng(92);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (size_t i = 0; i < 4; ++i) {
        Sample s;
        s.x.resize(16);
        for (auto& v : s.x) v = u(rng);
        s.label = int(i % 3);
        d.train.push_back(s);
    }
    d.test = d.train;

    const double lr = 1.0;
    FloatModel stepped = fm;
    TrainConfig cfg;
    cfg.learning_rate = lr;
    cfg.momentum = 0.0;
    cfg.epochs = 1;
    cfg.batch_size = d.train.size();
    train(stepped, d, cfg);

    const double eps = 1e-3;
    double worst_rel = 0;
    for (size_t li = 0; li < fm.layers.size(); ++li) {
        if (!fm.layers[li].has_weights()) continue;
        for (size_t wi = 0; wi < fm.layers[li].weights.size(); ++wi) {
            double analytic =
                (double(fm.layers[li].weights[wi]) - double(stepped.layers[li].weights[wi])) / lr;
            FloatModel plus = fm, minus = fm;
            plus.layers[li].weights[wi] += float(eps);
            minus.layers[li].weights[wi] -= float(eps);
            double num = 0;
            for (const Sample& s : d.train)
                num += (oracle_loss(plus, s) - oracle_loss(minus, s)) / (2 * eps);
            num /= double(d.train.size());
            double denom = std::max({std::fabs(analytic), std::fabs(num), 1e-4});
            worst_rel = std::max(worst_rel, std::fabs(analytic - num) / denom);
        }
    }
    c.expect(worst_rel < 1e-3,
             "gradient check worst relative error " + std::to_string(worst_rel) + " < 1e-3");
    c.detail << (c.detail.str().empty() ? "" : "; ") << "240 kernel seeds clean, grad err "
             << worst_rel;
}

// ---- criterion 9: energy conservation and gate soundness --------------------

void criterion_energy_sanity(Check& c, const TraceSuiteStats& stats) {
    // (a) Conservation held in every trial of the trace suite.
    c.expect_eq(stats.conservation_ok.load(), stats.trials.load(),
                "conservation holds in every trace-suite trial");

    // (b) The admission gate denies whenever E_av <= E_req (strict inequality
    //     requirement), across randomized states including exact equality.
    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> vdist(1.8, 3.6), cdist(1e-7, 1e-4);
    uint64_t gate_fail = 0;
    for (int i = 0; i < 10000; ++i) {
        EnergyState s;
        s.capacitance = cdist(rng);
        s.voltage = vdist(rng);
        SectionEstimate est;
        est.e_req_nj = s.available_nj();  // exact equality must deny
        if (gate(s, est)) ++gate_fail;
        est.e_req_nj = s.available_nj() * 1.0001 + 0.001;
        if (gate(s, est)) ++gate_fail;
        est.e_req_nj = s.available_nj() * 0.999 - 0.001;
        if (s.available_nj() > 0 && est.e_req_nj >= 0 && !gate(s, est)) ++gate_fail;
    }
    c.expect_eq(gate_fail, uint64_t(0), "gate decisions violating strict admission");

    // (c) Under a capacitor too small for any section, the gate never admits:
    //     zero commits, zero progress, no crash.
    ModelSpec m = reduced_model();
    QTensor in = random_model_input(m, 55);
    CostModel cost;
    ExecConfig cfg;
    cfg.max_sim_time_us = 2e6;
    EnergyState es;
    es.capacitance = 1.0e-9;
    auto dev = make_device(m, es);
    ExecutionReport rep = run_intermittent(m, in, make_constant_trace(200.0), cfg, cost, *dev);
    c.expect(!rep.completed && rep.progress_commits == 0 && dev->progress->load().generation == 0,
             "under-provisioned capacitor makes no progress");
}

}  // namespace

int main() {
    TraceSuiteStats trace_stats;
    struct Criterion {
        std::string title;
        std::function<void(Check&)> fn;
    };
    std::vector<Criterion> criteria = {
        {"parameter counts match the published full/low-energy budgets",
         [&](Check& c) { criterion_params(c); }},
        {"1000+ seeded intermittent traces finish bit-equal to the continuous oracle",
         [&](Check& c) { criterion_trace_suite(c, trace_stats); }},
        {"every torn-commit failure point yields a coherent resume and correct output",
         [&](Check& c) { criterion_torn_commits(c); }},
        {"WAR hazard search: corruptions found unprotected, none protected",
         [&](Check& c) { criterion_war(c); }},
        {"10%-energy harvest: checkpoint-free 100/100, restart baseline 0/100",
         [&](Check& c) { criterion_completion_asymmetry(c); }},
        {"full vs low-energy cycle ratios sit in the published band",
         [&](Check& c) { criterion_latency_ratios(c); }},
        {"training trajectory: baseline, prune collapse, two-phase recovery, frozen weights",
         [&](Check& c) { criterion_training(c); }},
        {"numerical hygiene: kernel oracles and finite-difference gradients",
         [&](Check& c) { criterion_numerics(c); }},
        {"energy conservation and strict admission gating hold everywhere",
         [&](Check& c) { criterion_energy_sanity(c, trace_stats); }},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        Check c;
        auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].fn(c);
        } catch (const std::exception& e) {
            c.ok = false;
            c.detail << (c.detail.str().empty() ? "" : "; ") << "exception: " << e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (c.ok ? "PASS" : "FAIL") << " criterion " << (i + 1) << ": "
                  << criteria[i].title << " [" << secs << " s]";
        if (!c.detail.str().empty()) std::cout << " — " << c.detail.str();
        std::cout << "\n" << std::flush;
        failures += !c.ok;
    }
    if (failures) std::cout << failures << " criterion(s) failed\n";
    return failures;
}
