#include "ember/energy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ember {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

double PowerTrace::power_at(double t_us) const {
    switch (kind) {
        case TraceKind::Constant:
            return amplitude_uw;
        case TraceKind::Square: {
            double phase = std::fmod(t_us, period_us);
            if (phase < 0) phase += period_us;
            return phase < duty * period_us ? amplitude_uw : 0.0;
        }
        case TraceKind::Sine: {
            double s = std::sin(2.0 * M_PI * t_us / period_us);
            return amplitude_uw * 0.5 * (1.0 + s);
        }
        case TraceKind::SeededRandom: {
            // Piecewise-constant, one level per period bucket, derived from
            // the seed alone so regeneration is exact.
            uint64_t bucket = static_cast<uint64_t>(std::floor(t_us / period_us));
            uint64_t h = splitmix64(seed ^ splitmix64(bucket + 1));
            double u = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
            return amplitude_uw * u;
        }
        case TraceKind::Samples: {
            if (samples.empty()) return 0.0;
            if (t_us <= samples.front().first) return samples.front().second;
            auto it = std::upper_bound(samples.begin(), samples.end(), t_us,
                                       [](double t, const auto& s) { return t < s.first; });
            return std::prev(it)->second;  // step-hold
        }
    }
    return 0.0;
}

namespace {
void check_amplitude(double a) {
    if (a < 0) throw EnergyError("trace amplitude must be non-negative");
}
}  // namespace

PowerTrace make_constant_trace(double amplitude_uw) {
    check_amplitude(amplitude_uw);
    PowerTrace t;
    t.kind = TraceKind::Constant;
    t.amplitude_uw = amplitude_uw;
    return t;
}

PowerTrace make_square_trace(double amplitude_uw, double period_us, double duty) {
    check_amplitude(amplitude_uw);
    if (period_us <= 0 || duty < 0 || duty > 1) throw EnergyError("bad square trace parameters");
    PowerTrace t;
    t.kind = TraceKind::Square;
    t.amplitude_uw = amplitude_uw;
    t.period_us = period_us;
    t.duty = duty;
    return t;
}

PowerTrace make_sine_trace(double amplitude_uw, double period_us) {
    check_amplitude(amplitude_uw);
    if (period_us <= 0) throw EnergyError("bad sine trace period");
    PowerTrace t;
    t.kind = TraceKind::Sine;
    t.amplitude_uw = amplitude_uw;
    t.period_us = period_us;
    return t;
}

PowerTrace make_random_trace(double amplitude_uw, double period_us, uint64_t seed) {
    check_amplitude(amplitude_uw);
    if (period_us <= 0) throw EnergyError("bad random trace period");
    PowerTrace t;
    t.kind = TraceKind::SeededRandom;
    t.amplitude_uw = amplitude_uw;
    t.period_us = period_us;
    t.seed = seed;
    return t;
}

void save_trace_file(const PowerTrace& t, const std::string& path, double t_end_us, double step_us) {
    std::ofstream f(path);
    if (!f) throw EnergyError("cannot open trace file for write: " + path);
    f.precision(17);
    for (double ts = 0; ts <= t_end_us; ts += step_us)
        f << ts << " " << t.power_at(ts) << "\n";
}

PowerTrace load_trace_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw EnergyError("cannot open trace file: " + path);
    PowerTrace t;
    t.kind = TraceKind::Samples;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double ts, p;
        if (!(ss >> ts >> p))
            throw EnergyError("trace file " + path + ": parse error at line " + std::to_string(lineno));
        if (p < 0) throw EnergyError("trace file " + path + ": negative power at line " + std::to_string(lineno));
        t.samples.emplace_back(ts, p);
    }
    std::sort(t.samples.begin(), t.samples.end());
    return t;
}

SectionEstimate estimate_section(UnitKind kind, const LayerSpec& layer,
                                 const std::vector<size_t>& in_shape, const CostModel& cost) {
    SectionEstimate est;
    est.kind = kind;
    auto price_macs = [&](uint64_t macs, uint64_t writes, uint64_t commits) {
        est.e_req_nj = macs * (cost.e_mac + 2 * cost.e_nvm_read) + writes * cost.e_nvm_write +
                       commits * cost.e_commit;
        est.cycles = macs * (cost.c_mac + 2 * cost.c_nvm_access) + writes * cost.c_nvm_access +
                     commits * cost.c_commit;
    };
    switch (kind) {
        case UnitKind::Mac:
            price_macs(1, 1, 1);
            break;
        case UnitKind::OutputElement: {
            uint64_t macs = 0;
            if (layer.kind == LayerKind::Conv2D) macs = layer.in_ch * layer.kh * layer.kw;
            else if (layer.kind == LayerKind::FullyConnected) macs = layer.in_features;
            else if (layer.kind == LayerKind::MaxPool) {
                est.e_req_nj = layer.pool * layer.pool * cost.e_nvm_read + cost.e_nvm_write + cost.e_commit;
                est.cycles = (layer.pool * layer.pool + 1) * cost.c_nvm_access + cost.c_commit;
                return est;
            } else {  // ReLU / ChannelSlice: one read, one write
                est.e_req_nj = cost.e_nvm_read + cost.e_nvm_write + cost.e_commit;
                est.cycles = 2 * cost.c_nvm_access + cost.c_commit;
                return est;
            }
            price_macs(macs, 1, 1);
            break;
        }
        case UnitKind::OutputRow: {
            size_t row_len = 1;
            uint64_t macs_per_elem = 0;
            if (layer.kind == LayerKind::Conv2D) {
                row_len = in_shape[2] - layer.kw + 1;
                macs_per_elem = layer.in_ch * layer.kh * layer.kw;
            } else if (layer.kind == LayerKind::FullyConnected) {
                row_len = 1;  // a weight-matrix row is one output element
                macs_per_elem = layer.in_features;
            } else {
                SectionEstimate e1 = estimate_section(UnitKind::OutputElement, layer, in_shape, cost);
                // weightless layers: a row of pool/relu outputs, single commit
                size_t n = in_shape.size() == 3
                               ? (layer.kind == LayerKind::MaxPool ? in_shape[2] / layer.pool : in_shape[2])
                               : in_shape[0];
                est.e_req_nj = (e1.e_req_nj - cost.e_commit) * n + cost.e_commit;
                est.cycles = (e1.cycles - cost.c_commit) * n + cost.c_commit;
                return est;
            }
            price_macs(macs_per_elem * row_len, row_len, 1);
            break;
        }
        case UnitKind::LayerTransition:
            est.e_req_nj = cost.e_layer_transition + cost.e_commit;
            est.cycles = cost.c_layer_transition + cost.c_commit;
            break;
    }
    return est;
}

PowerEvent advance(EnergyState& state, const PowerTrace& trace, double consumed_nj, double dt_us) {
    if (dt_us <= 0) throw EnergyError("advance: dt must be positive");
    double stored_before = state.stored_j();
    double harvested_j = trace.power_at(state.time_us) * 1e-6 * dt_us * 1e-6;
    double e = state.stored_j() + harvested_j - consumed_nj * 1e-9;
    if (e < 0) e = 0;  // never negative energy
    double v = std::sqrt(2.0 * e / state.capacitance);
    if (v > state.v_max) v = state.v_max;
    bool was_running = state.running;
    state.time_us += dt_us;
    state.harvested_j_total += harvested_j;
    PowerEvent ev = PowerEvent::None;
    if (was_running && v < state.v_off) {
        // Consumption past the brown-out floor clamps there; the overshoot
        // is unreachable energy, not debt.
        state.voltage = consumed_nj > 0 ? state.v_off : v;
        state.running = false;
        ev = PowerEvent::PowerFailure;
    } else {
        state.voltage = v;
        if (!was_running && v >= state.v_on) {
            state.running = true;
            ev = PowerEvent::PowerRestore;
        }
    }
    state.consumed_j_total += stored_before + harvested_j - state.stored_j();
    return ev;
}

}  // namespace ember
