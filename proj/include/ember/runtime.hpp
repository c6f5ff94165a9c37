#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ember/energy.hpp"
#include "ember/kernels.hpp"
#include "ember/model.hpp"
#include "ember/nvm.hpp"

namespace ember {

struct ConsistencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ModePolicy : uint8_t { Full, LowEnergy, AutoThreshold };

struct ExecConfig {
    UnitKind granularity = UnitKind::OutputElement;
    bool protection = true;  // false: WAR-injection mode, simulation only
    ModePolicy policy = ModePolicy::Full;
    double auto_threshold_uw = 50.0;
    double auto_window_us = 20000.0;
    double max_sim_time_us = 60e6;
    bool restart_baseline = false;  // BASE: no progress preservation
    double idle_step_us = 25.0;     // event-loop quantum while waiting/charging
};

struct ExecutionReport {
    bool completed = false;
    QTensor output;
    size_t predicted_class = 0;
    uint64_t power_cycles = 0;
    uint64_t cycles_total = 0;
    double energy_harvested_nj = 0;
    double energy_consumed_nj = 0;
    uint64_t nvm_reads = 0;
    uint64_t nvm_writes = 0;
    uint64_t volatile_accesses = 0;
    uint64_t mac_count = 0;
    uint64_t progress_commits = 0;
    InferenceMode mode_used = InferenceMode::Full;
    double sim_time_us = 0;
};

// A simulated device instance: one NVM image, one SRAM, one capacitor.
struct Device {
    NvmImage nvm;
    VolatileImage sram;
    EnergyState energy;
    std::unique_ptr<ProgressStore> progress;

    size_t weights_base = 0;
    size_t input_base = 0;
    size_t act_base[2] = {0, 0};
    size_t war_acc_cell = 0;  // 2-word raw accumulator used when protection is off
    std::vector<size_t> layer_weight_off;

    // Failure injection: throw SimPowerLoss right after this NVM word-write
    // tick lands. 0 disables.
    uint64_t kill_at_write_tick = 0;
};

// Lays out progress slots, weights and double-buffered activations inside
// the NVM image and loads the model weights.
std::unique_ptr<Device> make_device(const ModelSpec& model, const EnergyState& energy,
                                    size_t nvm_bytes = 256 * 1024, size_t sram_bytes = 8 * 1024);

// Volatile loop position rebuilt from a ProgressRecord on every restore.
struct LoopState {
    size_t layer = 0;
    size_t out_idx = 0;
    std::vector<std::pair<uint32_t, uint32_t>> macs;  // (w_flat, in_flat) of current element
    size_t mac_pos = 0;
    acc_t acc = 0;
    std::vector<size_t> in_shape;
    int in_scale = 0;
    size_t out_count = 0;
    int shift = 0;
    bool done = false;
};

// Expected input index for a record, derived from (L, O, W) under the
// canonical loop order. Used to cross-check the stored I.
uint32_t derive_input_index(const ModelSpec& model, InferenceMode mode, uint16_t layer,
                            uint32_t output_idx, uint32_t weight_idx);

// Maps a committed record back into the loop nest. Throws ConsistencyError
// if the stored I disagrees with the derived one.
LoopState resume_from(const ProgressRecord& record, const ModelSpec& model, InferenceMode mode);

InferenceMode select_mode(const PowerTrace& trace, const ExecConfig& cfg);

ExecutionReport run_intermittent(const ModelSpec& model, const QTensor& input,
                                 const PowerTrace& trace, const ExecConfig& cfg,
                                 const CostModel& cost, Device& device);

// Convenience: builds a default device (fully specified by the config).
ExecutionReport run_intermittent(const ModelSpec& model, const QTensor& input,
                                 const PowerTrace& trace, const ExecConfig& cfg,
                                 const CostModel& cost);

}  // namespace ember
