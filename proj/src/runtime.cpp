#include "ember/runtime.hpp"

#include <algorithm>
#include <cmath>

namespace ember {

namespace {

std::vector<std::vector<size_t>> layer_input_shapes(const ModelSpec& m) {
    std::vector<std::vector<size_t>> shapes;
    std::vector<size_t> s = m.input_shape;
    for (const LayerSpec& l : m.layers) {
        shapes.push_back(s);
        s = layer_output_shape(l, s);
    }
    return shapes;
}

std::vector<int> layer_input_scales(const ModelSpec& m) {
    std::vector<int> scales;
    int s = m.input_scale;
    for (const LayerSpec& l : m.layers) {
        scales.push_back(s);
        if (l.has_weights()) s = l.out_scale;
    }
    return scales;
}

size_t count_of(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::vector<std::pair<uint32_t, uint32_t>> element_macs(const LayerSpec& l,
                                                        const std::vector<size_t>& in_shape,
                                                        size_t O, InferenceMode mode) {
    std::vector<std::pair<uint32_t, uint32_t>> macs;
    for_each_mac(l, in_shape, O, mode, [&](size_t w, size_t i) {
        macs.emplace_back(static_cast<uint32_t>(w), static_cast<uint32_t>(i));
    });
    return macs;
}

}  // namespace

std::unique_ptr<Device> make_device(const ModelSpec& model, const EnergyState& energy,
                                    size_t nvm_bytes, size_t sram_bytes) {
    validate_model(model);
    auto dev = std::make_unique<Device>();
    dev->nvm = NvmImage(nvm_bytes);
    dev->sram = VolatileImage(sram_bytes);
    dev->energy = energy;
    dev->energy.check();

    size_t addr = 0;
    dev->progress = std::make_unique<ProgressStore>(dev->nvm, addr);
    addr += ProgressStore::kStoreWords;
    dev->war_acc_cell = addr;
    addr += 2;

    dev->weights_base = addr;
    for (const LayerSpec& l : model.layers) {
        dev->layer_weight_off.push_back(addr);
        addr += l.weight_count();
    }
    dev->input_base = addr;
    addr += count_of(model.input_shape);

    size_t max_act = 0;
    auto shapes = layer_input_shapes(model);
    for (size_t i = 0; i < model.layers.size(); ++i)
        max_act = std::max(max_act, count_of(layer_output_shape(model.layers[i], shapes[i])));
    dev->act_base[0] = addr;
    addr += max_act;
    dev->act_base[1] = addr;
    addr += max_act;
    if (addr > dev->nvm.word_capacity())
        throw NvmError("model does not fit in NVM: needs " + std::to_string(addr * 2) + " bytes");

    // Host-side load: weights land in FRAM before any simulated run.
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const LayerSpec& l = model.layers[li];
        for (size_t w = 0; w < l.weights.data.size(); ++w)
            dev->nvm.poke(dev->layer_weight_off[li] + w, static_cast<uint16_t>(l.weights.data[w]));
    }
    dev->progress->format();
    return dev;
}

namespace {
uint32_t derive_input_index_impl(const ModelSpec& model,
                                 const std::vector<std::vector<size_t>>& shapes,
                                 InferenceMode mode, uint16_t layer, uint32_t output_idx,
                                 uint32_t weight_idx) {
    if (layer >= model.layers.size()) return 0;
    const LayerSpec& l = model.layers[layer];
    const auto& in_shape = shapes[layer];
    if (l.has_weights()) {
        // W = 0 marks an element not yet started (resume re-seeds the bias),
        // so the input cursor is 0 regardless of which weights are active.
        if (weight_idx == 0) return 0;
        uint32_t found = 0;
        bool have = false;
        for_each_mac(l, in_shape, output_idx, mode, [&](size_t w, size_t i) {
            if (!have && w >= weight_idx) {
                found = static_cast<uint32_t>(i);
                have = true;
            }
        });
        return found;
    }
    uint32_t first = 0;
    bool have = false;
    for_each_input(l, in_shape, output_idx, [&](size_t i) {
        if (!have) {
            first = static_cast<uint32_t>(i);
            have = true;
        }
    });
    return first;
}
}  // namespace

uint32_t derive_input_index(const ModelSpec& model, InferenceMode mode, uint16_t layer,
                            uint32_t output_idx, uint32_t weight_idx) {
    return derive_input_index_impl(model, layer_input_shapes(model), mode, layer, output_idx,
                                   weight_idx);
}

LoopState resume_from(const ProgressRecord& record, const ModelSpec& model, InferenceMode mode) {
    LoopState st;
    if (record.layer > model.layers.size())
        throw ConsistencyError("progress record names layer beyond model end");
    if (record.layer == model.layers.size()) {
        st.layer = record.layer;
        st.done = true;
        return st;
    }
    uint32_t expect_i = derive_input_index(model, mode, record.layer, record.output_idx,
                                           record.weight_idx);
    if (expect_i != record.input_idx)
        throw ConsistencyError("progress record I=" + std::to_string(record.input_idx) +
                               " inconsistent with derived " + std::to_string(expect_i));

    auto shapes = layer_input_shapes(model);
    auto scales = layer_input_scales(model);
    const LayerSpec& l = model.layers[record.layer];
    st.layer = record.layer;
    st.out_idx = record.output_idx;
    st.in_shape = shapes[record.layer];
    st.in_scale = scales[record.layer];
    st.out_count = count_of(layer_output_shape(l, st.in_shape));
    if (st.out_idx >= st.out_count) throw ConsistencyError("progress record O beyond layer output");
    st.shift = l.has_weights() ? requant_shift(l, st.in_scale) : 0;
    st.acc = record.acc;
    if (l.has_weights()) {
        st.macs = element_macs(l, st.in_shape, st.out_idx, mode);
        st.mac_pos = 0;
        while (st.mac_pos < st.macs.size() && st.macs[st.mac_pos].first < record.weight_idx)
            ++st.mac_pos;
        if (record.weight_idx != 0 &&
            (st.mac_pos >= st.macs.size() || st.macs[st.mac_pos].first != record.weight_idx))
            throw ConsistencyError("progress record W does not name an active weight");
        if (record.weight_idx == 0) {
            st.mac_pos = 0;
            st.acc = element_bias(l, st.in_shape, st.out_idx);
        }
    }
    return st;
}

InferenceMode select_mode(const PowerTrace& trace, const ExecConfig& cfg) {
    switch (cfg.policy) {
        case ModePolicy::Full: return InferenceMode::Full;
        case ModePolicy::LowEnergy: return InferenceMode::LowEnergy;
        case ModePolicy::AutoThreshold: {
            double sum = 0;
            const int samples = 256;
            for (int i = 0; i < samples; ++i)
                sum += trace.power_at(cfg.auto_window_us * i / samples);
            return (sum / samples < cfg.auto_threshold_uw) ? InferenceMode::LowEnergy
                                                           : InferenceMode::Full;
        }
    }
    return InferenceMode::Full;
}

namespace {

// Everything one inference needs, rebuilt per run_intermittent call.
struct Executor {
    const ModelSpec& model;
    const ExecConfig& cfg;
    const CostModel& cost;
    Device& dev;
    InferenceMode mode;
    std::vector<std::vector<size_t>> in_shapes;
    std::vector<int> in_scales;
    std::vector<size_t> out_counts;
    ExecutionReport rep;
    LoopState st;
    uint64_t mac_count = 0;
    uint64_t commits = 0;

    Executor(const ModelSpec& m, const ExecConfig& c, const CostModel& cm, Device& d, InferenceMode md)
        : model(m), cfg(c), cost(cm), dev(d), mode(md) {
        in_shapes = layer_input_shapes(m);
        in_scales = layer_input_scales(m);
        for (size_t i = 0; i < m.layers.size(); ++i)
            out_counts.push_back(count_of(layer_output_shape(m.layers[i], in_shapes[i])));
    }

    size_t in_region(size_t layer) const {
        return layer == 0 ? dev.input_base : dev.act_base[(layer - 1) % 2];
    }
    size_t out_region(size_t layer) const { return dev.act_base[layer % 2]; }

    q15_t read_act(size_t layer, size_t flat) {
        return static_cast<q15_t>(dev.nvm.read(in_region(layer) + flat));
    }
    q15_t read_weight(size_t layer, size_t flat) {
        return static_cast<q15_t>(dev.nvm.read(dev.layer_weight_off[layer] + flat));
    }
    void write_act(size_t layer, size_t flat, q15_t v) {
        dev.nvm.write(out_region(layer) + flat, static_cast<uint16_t>(v));
    }

    LoopState fresh_state() const {
        ProgressRecord init;
        return resume_from(init, model, mode);
    }

    bool record_valid(const ProgressRecord& r) const {
        if (r.layer > model.layers.size()) return false;
        if (r.layer < model.layers.size() && r.output_idx >= out_counts[r.layer]) return false;
        return derive_input_index_impl(model, in_shapes, mode, r.layer, r.output_idx, r.weight_idx) ==
               r.input_idx;
    }

    void commit_position(size_t layer, size_t out_idx, uint32_t w_flat, acc_t acc) {
        ProgressRecord r;
        r.layer = static_cast<uint16_t>(layer);
        r.output_idx = static_cast<uint32_t>(out_idx);
        r.weight_idx = w_flat;
        r.acc = acc;
        r.input_idx = derive_input_index_impl(model, in_shapes, mode, r.layer, r.output_idx, r.weight_idx);
        r.generation = dev.progress->last_committed() + 1;
        dev.progress->commit(r);
        ++commits;
    }

    // Position after finishing element `out_idx` of `layer`; may cross into
    // the next layer (or terminate). Returns whether a layer boundary was
    // crossed (for transition pricing).
    bool advance_element(size_t layer, size_t out_idx, size_t& nlayer, size_t& nout) const {
        if (out_idx + 1 < out_counts[layer]) {
            nlayer = layer;
            nout = out_idx + 1;
            return false;
        }
        nlayer = layer + 1;
        nout = 0;
        return true;
    }

    void load_state_for(size_t layer, size_t out_idx) {
        st = LoopState{};
        st.layer = layer;
        if (layer == model.layers.size()) {
            st.done = true;
            return;
        }
        const LayerSpec& l = model.layers[layer];
        st.out_idx = out_idx;
        st.in_shape = in_shapes[layer];
        st.in_scale = in_scales[layer];
        st.out_count = out_counts[layer];
        st.shift = l.has_weights() ? requant_shift(l, st.in_scale) : 0;
        if (l.has_weights()) {
            st.macs = element_macs(l, st.in_shape, out_idx, mode);
            st.mac_pos = 0;
            st.acc = element_bias(l, st.in_shape, out_idx);
        }
    }

    // ---- unit execution (indivisible with protection on) -------------------

    struct UnitCost {
        uint64_t macs = 0, reads = 0, writes = 0, commits = 0;
        bool transition = false;
        double energy_nj(const CostModel& c) const {
            return macs * c.e_mac + reads * c.e_nvm_read + writes * c.e_nvm_write +
                   commits * c.e_commit + (transition ? c.e_layer_transition : 0.0);
        }
        uint64_t cycles(const CostModel& c) const {
            return macs * c.c_mac + (reads + writes) * c.c_nvm_access + commits * c.c_commit +
                   (transition ? c.c_layer_transition : 0);
        }
    };

    q15_t compute_one_element(size_t layer, size_t out_idx, UnitCost& uc) {
        const LayerSpec& l = model.layers[layer];
        if (l.has_weights()) {
            acc_t acc = element_bias(l, st.in_shape, out_idx);
            for_each_mac(l, st.in_shape, out_idx, mode, [&](size_t w, size_t i) {
                acc = sat_add32(acc, static_cast<acc_t>(read_act(layer, i)) *
                                         static_cast<acc_t>(read_weight(layer, w)));
                ++uc.macs;
                uc.reads += 2;
            });
            return requantize(acc, st.shift);
        }
        q15_t out = kQ15Min;
        bool first = true;
        for_each_input(l, st.in_shape, out_idx, [&](size_t i) {
            q15_t v = read_act(layer, i);
            ++uc.reads;
            if (l.kind == LayerKind::ReLU) v = std::max<q15_t>(v, 0);
            out = first ? v : std::max(out, v);
            first = false;
        });
        return out;
    }

    void finish_elements(size_t layer, size_t first_out, size_t n, UnitCost& uc) {
        size_t out = first_out;
        for (size_t k = 0; k < n; ++k, ++out) {
            q15_t v = compute_one_element(layer, out, uc);
            write_act(layer, out, v);
            ++uc.writes;
        }
        size_t nlayer, nout;
        uc.transition = advance_element(layer, out - 1, nlayer, nout);
        if (!cfg.restart_baseline) {
            commit_position(nlayer, nout, 0, 0);
            ++uc.commits;
        }
        load_state_for(nlayer, nout);
    }

    size_t row_length(size_t layer) const {
        const LayerSpec& l = model.layers[layer];
        if (l.kind == LayerKind::FullyConnected) return 1;
        auto os = layer_output_shape(l, in_shapes[layer]);
        return os.size() == 3 ? os[2] : os[0];
    }

    // One MAC (or the whole element for weightless layers) with the index
    // advance and pending accumulator riding in the commit record.
    void exec_mac_unit(UnitCost& uc) {
        const size_t layer = st.layer;
        const LayerSpec& l = model.layers[layer];
        if (!l.has_weights() || st.macs.empty()) {
            finish_elements(layer, st.out_idx, 1, uc);
            return;
        }
        if (cfg.protection) {
            auto [w, i] = st.macs[st.mac_pos];
            st.acc = sat_add32(st.acc, static_cast<acc_t>(read_act(layer, i)) *
                                           static_cast<acc_t>(read_weight(layer, w)));
            ++uc.macs;
            uc.reads += 2;
            ++st.mac_pos;
            if (st.mac_pos == st.macs.size()) {
                q15_t v = requantize(st.acc, st.shift);
                write_act(layer, st.out_idx, v);
                ++uc.writes;
                size_t nlayer, nout;
                uc.transition = advance_element(layer, st.out_idx, nlayer, nout);
                commit_position(nlayer, nout, 0, 0);
                ++uc.commits;
                load_state_for(nlayer, nout);
            } else {
                commit_position(layer, st.out_idx, st.macs[st.mac_pos].first, st.acc);
                ++uc.commits;
            }
            return;
        }
        // Unprotected: the running accumulator lives in its own NVM cell and
        // is written back before the index commit, leaving a failure window
        // in which the resumed MAC re-reads its own result.
        acc_t acc = static_cast<acc_t>(
            static_cast<uint32_t>(dev.nvm.read(dev.war_acc_cell)) |
            (static_cast<uint32_t>(dev.nvm.read(dev.war_acc_cell + 1)) << 16));
        uc.reads += 2;
        if (st.mac_pos == 0) acc = element_bias(l, st.in_shape, st.out_idx);
        auto [w, i] = st.macs[st.mac_pos];
        acc = sat_add32(acc, static_cast<acc_t>(read_act(layer, i)) *
                                 static_cast<acc_t>(read_weight(layer, w)));
        ++uc.macs;
        uc.reads += 2;
        uint32_t u = static_cast<uint32_t>(acc);
        dev.nvm.write(dev.war_acc_cell, static_cast<uint16_t>(u & 0xFFFF));
        dev.nvm.write(dev.war_acc_cell + 1, static_cast<uint16_t>(u >> 16));
        uc.writes += 2;
        ++st.mac_pos;
        st.acc = acc;
        if (st.mac_pos == st.macs.size()) {
            q15_t v = requantize(acc, st.shift);
            write_act(layer, st.out_idx, v);
            ++uc.writes;
            size_t nlayer, nout;
            uc.transition = advance_element(layer, st.out_idx, nlayer, nout);
            commit_position(nlayer, nout, 0, 0);
            ++uc.commits;
            load_state_for(nlayer, nout);
        } else {
            commit_position(layer, st.out_idx, st.macs[st.mac_pos].first, 0);
            ++uc.commits;
        }
    }

    UnitCost exec_unit() {
        UnitCost uc;
        switch (cfg.granularity) {
            case UnitKind::Mac:
                exec_mac_unit(uc);
                break;
            case UnitKind::OutputElement:
                finish_elements(st.layer, st.out_idx, 1, uc);
                break;
            case UnitKind::OutputRow: {
                size_t n = row_length(st.layer);
                n = std::min(n, st.out_count - st.out_idx);
                finish_elements(st.layer, st.out_idx, n, uc);
                break;
            }
            default:
                throw ConfigError("unsupported execution granularity");
        }
        mac_count += uc.macs;
        return uc;
    }

    SectionEstimate next_estimate() const {
        const LayerSpec& l = model.layers[st.layer];
        UnitKind k = cfg.granularity;
        if (k == UnitKind::Mac && (!l.has_weights() || st.macs.empty())) k = UnitKind::OutputElement;
        return estimate_section(k, l, in_shapes[st.layer], cost);
    }

    void on_power_restore() {
        dev.sram.clear();
        if (cfg.restart_baseline) {
            st = fresh_state();
            return;
        }
        dev.progress->sync_after_restart();
        ProgressRecord r = dev.progress->load([this](const ProgressRecord& rec) { return record_valid(rec); });
        st = resume_from(r, model, mode);
        if (!cfg.protection && !st.done && r.weight_idx != 0) {
            // unprotected MAC mode: the pending sum lives in the acc cell
            st.acc = static_cast<acc_t>(
                static_cast<uint32_t>(dev.nvm.peek(dev.war_acc_cell)) |
                (static_cast<uint32_t>(dev.nvm.peek(dev.war_acc_cell + 1)) << 16));
        }
    }
};

}  // namespace

ExecutionReport run_intermittent(const ModelSpec& model, const QTensor& input,
                                 const PowerTrace& trace, const ExecConfig& cfg,
                                 const CostModel& cost, Device& dev) {
    validate_model(model);
    cost.check();
    dev.energy.check();
    if (!cfg.protection && cfg.granularity != UnitKind::Mac)
        throw ConfigError("WAR injection mode is only meaningful at MAC granularity");
    for (const LayerSpec& l : model.layers) check_low_energy_legal(l, select_mode(trace, cfg));

    InferenceMode mode = select_mode(trace, cfg);
    Executor ex(model, cfg, cost, dev, mode);
    ex.rep.mode_used = mode;

    // Host-side staging: input image into NVM, fresh progress.
    input.validate();
    if (input.shape != model.input_shape)
        throw ShapeError("run_intermittent: input shape mismatch");
    for (size_t i = 0; i < input.data.size(); ++i)
        dev.nvm.poke(dev.input_base + i, static_cast<uint16_t>(input.data[i]));
    dev.progress->format();
    dev.nvm.poke(dev.war_acc_cell, 0);
    dev.nvm.poke(dev.war_acc_cell + 1, 0);
    dev.nvm.reset_counters();
    dev.energy.harvested_j_total = 0;
    dev.energy.consumed_j_total = 0;
    double initial_stored = dev.energy.stored_j();

    if (dev.kill_at_write_tick > 0) {
        uint64_t kill_at = dev.kill_at_write_tick;
        dev.nvm.set_write_hook([kill_at, &dev](uint64_t tick) {
            if (tick == kill_at) throw SimPowerLoss{};
        });
    } else {
        dev.nvm.set_write_hook(nullptr);
    }

    ex.st = ex.fresh_state();
    bool have_state = false;
    auto idle_nj = [&](double dt_us) { return cost.idle_power_uw * dt_us * 1e-3; };

    while (true) {
        if (dev.energy.time_us > cfg.max_sim_time_us) break;
        if (!dev.energy.running) {
            PowerEvent ev = advance(dev.energy, trace, idle_nj(cfg.idle_step_us), cfg.idle_step_us);
            if (ev == PowerEvent::PowerRestore) {
                ++ex.rep.power_cycles;
                ex.on_power_restore();
                have_state = true;
            }
            continue;
        }
        if (!have_state) {  // e.g. device handed over already running
            ex.on_power_restore();
            ++ex.rep.power_cycles;
            have_state = true;
        }
        if (ex.st.done) {
            ex.rep.completed = true;
            break;
        }
        SectionEstimate est = ex.next_estimate();
        double dt_exec_us = static_cast<double>(est.cycles) / cost.clock_hz * 1e6;
        double e_req_total = est.e_req_nj + cost.e_layer_transition + idle_nj(dt_exec_us) +
                             (cfg.protection ? 0.0 : 2 * (cost.e_nvm_read + cost.e_nvm_write));
        if (!(dev.energy.available_nj() > e_req_total)) {
            PowerEvent ev = advance(dev.energy, trace, idle_nj(cfg.idle_step_us), cfg.idle_step_us);
            (void)ev;  // PowerFailure just flips running; next loop iteration waits
            continue;
        }
        bool lost = false;
        Executor::UnitCost uc;
        try {
            uc = ex.exec_unit();
        } catch (const SimPowerLoss&) {
            lost = true;
        }
        if (lost) {
            dev.sram.clear();
            dev.energy.running = false;
            dev.energy.voltage = 0.0;
            have_state = false;
            continue;
        }
        uint64_t cycles = uc.cycles(cost);
        double dt_us = std::max(1e-3, static_cast<double>(cycles) / cost.clock_hz * 1e6);
        PowerEvent ev = advance(dev.energy, trace, uc.energy_nj(cost) + idle_nj(dt_us), dt_us);
        ex.rep.cycles_total += cycles;
        if (ev == PowerEvent::PowerFailure)
            throw ConsistencyError("gate soundness violated: unit browned out mid-execution");
    }

    // Final accounting and output extraction.
    ExecutionReport rep = ex.rep;
    rep.sim_time_us = dev.energy.time_us;
    rep.nvm_reads = dev.nvm.read_count();
    rep.nvm_writes = dev.nvm.write_count();
    rep.volatile_accesses = dev.sram.access_count();
    rep.mac_count = ex.mac_count;
    rep.progress_commits = ex.commits;
    (void)initial_stored;
    rep.energy_harvested_nj = dev.energy.harvested_j_total * 1e9;
    rep.energy_consumed_nj = dev.energy.consumed_j_total * 1e9;
    if (rep.completed) {
        size_t n_layers = model.layers.size();
        const LayerSpec& last = model.layers.back();
        QTensor out(model_output_shape(model),
                    last.has_weights() ? last.out_scale : ex.in_scales.back());
        size_t base = dev.act_base[(n_layers - 1) % 2];
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<q15_t>(dev.nvm.peek(base + i));
        rep.predicted_class = argmax(out);
        rep.output = std::move(out);
    }
    dev.nvm.set_write_hook(nullptr);
    return rep;
}

ExecutionReport run_intermittent(const ModelSpec& model, const QTensor& input,
                                 const PowerTrace& trace, const ExecConfig& cfg,
                                 const CostModel& cost) {
    EnergyState es;
    auto dev = make_device(model, es);
    return run_intermittent(model, input, trace, cfg, cost, *dev);
}

}  // namespace ember
