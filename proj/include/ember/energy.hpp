#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ember/model.hpp"

namespace ember {

struct EnergyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Capacitor-buffered supply. Stored energy E = 0.5 * C * V^2; the device
// runs between v_off (brown-out) and v_max, turning on at v_on.
struct EnergyState {
    double capacitance = 100e-6;  // farads
    double voltage = 0.0;         // volts
    double v_on = 2.8;
    double v_off = 1.8;
    double v_max = 3.6;
    double time_us = 0.0;
    bool running = false;

    // Lifetime tallies maintained by advance(). consumed counts all energy
    // leaving (or rejected by) the capacitor, so consumed <= harvested +
    // initial stored holds by construction.
    double harvested_j_total = 0.0;
    double consumed_j_total = 0.0;

    double stored_j() const { return 0.5 * capacitance * voltage * voltage; }

    // Energy available above the brown-out floor, in joules.
    double available_j() const {
        double e = 0.5 * capacitance * (voltage * voltage - v_off * v_off);
        return e > 0 ? e : 0;
    }
    double available_nj() const { return available_j() * 1e9; }

    void check() const {
        if (!(v_off < v_on && v_on <= v_max)) throw EnergyError("require v_off < v_on <= v_max");
    }
};

enum class PowerEvent { None, PowerFailure, PowerRestore };

enum class TraceKind : uint8_t { Constant, Square, Sine, SeededRandom, Samples };

struct PowerTrace {
    TraceKind kind = TraceKind::Constant;
    double amplitude_uw = 0.0;
    double period_us = 1000.0;
    double duty = 0.5;
    uint64_t seed = 0;
    std::vector<std::pair<double, double>> samples;  // (time_us, power_uw), sorted

    // Instantaneous harvest power in microwatts.
    double power_at(double t_us) const;
};

PowerTrace make_constant_trace(double amplitude_uw);
PowerTrace make_square_trace(double amplitude_uw, double period_us, double duty = 0.5);
PowerTrace make_sine_trace(double amplitude_uw, double period_us);
PowerTrace make_random_trace(double amplitude_uw, double period_us, uint64_t seed);

void save_trace_file(const PowerTrace& t, const std::string& path, double t_end_us, double step_us);
PowerTrace load_trace_file(const std::string& path);

// Per-operation prices. Energies in nanojoules, cycle counts at clock_hz.
struct CostModel {
    double e_mac = 1.0;
    double e_volatile = 0.2;
    double e_nvm_read = 1.0;
    double e_nvm_write = 2.0;
    double e_commit = 4.0;
    double e_layer_transition = 8.0;
    double idle_power_uw = 2.0;  // quiescent drain while powered or waiting

    uint64_t c_mac = 2;
    uint64_t c_nvm_access = 1;
    uint64_t c_volatile = 1;
    uint64_t c_commit = 12;
    uint64_t c_layer_transition = 8;

    double clock_hz = 16e6;

    void check() const {
        if (e_mac <= 0 || e_volatile <= 0 || e_nvm_read <= 0 || e_nvm_write <= 0 ||
            e_commit <= 0 || e_layer_transition <= 0)
            throw EnergyError("all cost model energies must be positive");
        if (e_nvm_write < e_nvm_read) throw EnergyError("NVM write cost must be >= read cost");
    }
};

enum class UnitKind : uint8_t { Mac, OutputElement, OutputRow, LayerTransition };

struct SectionEstimate {
    double e_req_nj = 0.0;
    uint64_t cycles = 0;
    UnitKind kind = UnitKind::OutputElement;
};

// Worst-case price of one atomic unit of the given layer (Full-mode MAC
// count; low-energy execution can only cost less).
SectionEstimate estimate_section(UnitKind kind, const LayerSpec& layer,
                                 const std::vector<size_t>& in_shape, const CostModel& cost);

// Admission gate: permit only when E_av strictly exceeds E_req.
inline bool gate(const EnergyState& state, const SectionEstimate& est) {
    return state.available_nj() > est.e_req_nj;
}

// Advances the capacitor by dt_us: integrates harvest, subtracts
// consumed_nj, emits the threshold-crossing event if any. Consumption that
// would drive V below v_off clamps to v_off and reports PowerFailure.
PowerEvent advance(EnergyState& state, const PowerTrace& trace, double consumed_nj, double dt_us);

}  // namespace ember
