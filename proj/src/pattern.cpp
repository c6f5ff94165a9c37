#include "ember/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

namespace ember {

PatternMask select_topk_mask(const std::vector<double>& values, size_t rows, size_t cols, size_t k) {
    const size_t n = rows * cols;
    if (values.size() != n) throw ConfigError("select_topk_mask: value count != rows*cols");
    if (k > n) throw ConfigError("select_topk_mask: k exceeds entry count");
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        double ma = std::fabs(values[a]), mb = std::fabs(values[b]);
        if (ma != mb) return ma > mb;
        return a < b;  // tie-break: lowest flat index
    });
    PatternMask m;
    m.rows = rows;
    m.cols = cols;
    m.active.assign(n, 0);
    for (size_t i = 0; i < k; ++i) m.active[idx[i]] = 1;
    m.entry_count = k;
    return m;
}

PatternMask select_topk_mask(const LayerSpec& layer, const UnitView& unit, size_t k) {
    std::vector<double> vals;
    vals.reserve(unit.rows * unit.cols);
    for (size_t r = 0; r < unit.rows; ++r)
        for (size_t c = 0; c < unit.cols; ++c)
            vals.push_back(std::fabs(static_cast<double>(layer.weights.data[unit.flat0 + r * unit.row_stride + c])));
    return select_topk_mask(vals, unit.rows, unit.cols, k);
}

std::vector<UnitView> partition_fc_blocks(const LayerSpec& layer, size_t block_rows, size_t block_cols) {
    if (layer.kind != LayerKind::FullyConnected)
        throw ConfigError("partition_fc_blocks: layer is not fully connected");
    if (block_rows == 0 || block_cols == 0)
        throw ConfigError("partition_fc_blocks: zero-sized block");
    const size_t R = layer.out_features, C = layer.in_features;
    std::vector<UnitView> blocks;
    for (size_t r0 = 0; r0 < R; r0 += block_rows)
        for (size_t c0 = 0; c0 < C; c0 += block_cols) {
            UnitView u;
            u.rows = std::min(block_rows, R - r0);
            u.cols = std::min(block_cols, C - c0);
            u.flat0 = r0 * C + c0;
            u.row_stride = C;
            blocks.push_back(u);
        }
    return blocks;
}

size_t partial_entries(size_t full_entries, size_t full_area, size_t area) {
    if (area >= full_area) return full_entries;
    return full_entries * area / full_area;
}

namespace {

constexpr size_t kEntryChoices[] = {3, 4, 6, 15};

size_t pick_entries(size_t area, double target) {
    size_t best = 0;
    double best_err = 1e9;
    for (size_t k : kEntryChoices) {
        if (k > area) continue;
        double err = std::fabs(static_cast<double>(k) / area - target);
        if (err < best_err - 1e-12) {
            best_err = err;
            best = k;
        }
    }
    if (best == 0) throw ConfigError("no admissible entry size for unit area " + std::to_string(area));
    return best;
}

struct FcShapeChoice { size_t rows, cols; };

void pick_fc_shape(double target, LayerPatternPlan& plan) {
    static const FcShapeChoice shapes[] = {{3, 3}, {3, 9}, {1, 25}, {5, 5}, {1, 12}};
    double best_err = 1e9;
    for (const auto& s : shapes) {
        const size_t area = s.rows * s.cols;
        for (size_t k : kEntryChoices) {
            if (k > area) continue;
            double err = std::fabs(static_cast<double>(k) / area - target);
            if (err < best_err - 1e-12) {
                best_err = err;
                plan.block_rows = s.rows;
                plan.block_cols = s.cols;
                plan.entries = k;
            }
        }
    }
}

struct TargetEntry { const char* model; int layer_id; double ratio; };

// Per-layer concentration targets for the stock architectures.
const TargetEntry kTargets[] = {
    {"mnist", 0, 0.588}, {"mnist", 3, 0.333}, {"mnist", 6, 0.4444},
    {"har", 3, 0.243},
    {"gtsrb", 3, 0.4444}, {"gtsrb", 5, 0.5555},
};

double target_for(const ModelSpec& m, int layer_id) {
    for (const auto& t : kTargets)
        if (m.name == t.model && t.layer_id == layer_id) return t.ratio;
    return 0.45;  // generic default for architectures outside Table I
}

}  // namespace

std::vector<LayerPatternPlan> default_pattern_plan(const ModelSpec& model) {
    std::vector<LayerPatternPlan> plan;
    for (const LayerSpec& l : model.layers) {
        if (!l.has_weights() || l.le_exempt) continue;
        LayerPatternPlan p;
        p.layer_id = l.id;
        p.target_ratio = target_for(model, l.id);
        if (l.kind == LayerKind::Conv2D) {
            p.block_rows = l.kh;
            p.block_cols = l.kw;
            p.entries = pick_entries(l.kh * l.kw, p.target_ratio);
        } else {
            pick_fc_shape(p.target_ratio, p);
        }
        plan.push_back(p);
    }
    if (plan.empty()) throw ConfigError("model has no patterned layers");
    return plan;
}

namespace {

std::vector<UnitView> layer_units(const LayerSpec& l, const LayerPatternPlan& p) {
    if (l.kind == LayerKind::Conv2D) {
        std::vector<UnitView> units;
        const size_t karea = l.kh * l.kw;
        for (size_t u = 0; u < l.out_ch * l.in_ch; ++u)
            units.push_back({u * karea, l.kh, l.kw, l.kw});
        return units;
    }
    return partition_fc_blocks(l, p.block_rows, p.block_cols);
}

struct GroupKey {
    size_t rows, cols, entries;
    bool operator<(const GroupKey& o) const {
        return std::tie(rows, cols, entries) < std::tie(o.rows, o.cols, o.entries);
    }
};

struct GroupData {
    std::vector<PatternMask> candidates;  // distinct masks, most frequent first
    size_t unit_count = 0;
};

double preserved_l1(const LayerSpec& l, const UnitView& u, const PatternMask& m) {
    double s = 0;
    for (size_t r = 0; r < u.rows; ++r)
        for (size_t c = 0; c < u.cols; ++c)
            if (m.active[r * u.cols + c])
                s += std::fabs(static_cast<double>(l.weights.data[u.flat0 + r * u.row_stride + c]));
    return s;
}

}  // namespace

PatternLibrary build_pattern_library(const ModelSpec& model,
                                     const std::vector<LayerPatternPlan>& plan,
                                     size_t library_size) {
    PatternLibrary lib;

    // Pass 1: per-unit top-k masks, grouped by (geometry, entries).
    std::map<GroupKey, std::map<std::vector<uint8_t>, size_t>> freq;
    std::map<GroupKey, size_t> group_units;
    std::vector<LayerAssignment> layer_assignments;

    for (const auto& p : plan) {
        const LayerSpec& l = model.layers.at(p.layer_id);
        LayerAssignment la;
        la.layer_id = p.layer_id;
        la.full_rows = p.block_rows;
        la.full_cols = p.block_cols;
        la.entries = p.entries;
        la.units = layer_units(l, p);
        const size_t full_area = p.block_rows * p.block_cols;
        for (const UnitView& u : la.units) {
            size_t k = partial_entries(p.entries, full_area, u.rows * u.cols);
            PatternMask m = select_topk_mask(l, u, k);
            GroupKey key{u.rows, u.cols, k};
            ++freq[key][m.active];
            ++group_units[key];
        }
        layer_assignments.push_back(std::move(la));
    }

    // Pass 2: keep the most frequent masks per group. The library budget is
    // split one pattern per group first (partial-edge geometries must be
    // representable), then the remainder proportionally to unit counts
    // (highest-quotient rounds), so the total never exceeds library_size
    // unless there are more geometry groups than the budget allows.
    std::map<GroupKey, size_t> budget;
    for (auto& [key, masks] : freq) {
        size_t distinct = masks.size();
        budget[key] = std::min<size_t>(1, distinct);
    }
    size_t allocated = 0;
    for (auto& [key, b] : budget) allocated += b;
    while (allocated < library_size) {
        const GroupKey* best_key = nullptr;
        double best_q = 0;
        for (auto& [key, b] : budget) {
            if (b >= freq[key].size()) continue;  // no more distinct masks
            double q = static_cast<double>(group_units[key]) / static_cast<double>(b + 1);
            if (q > best_q) {
                best_q = q;
                best_key = &key;
            }
        }
        if (!best_key) break;
        ++budget[*best_key];
        ++allocated;
    }

    std::map<GroupKey, std::pair<size_t, size_t>> group_range;  // first index, count
    for (auto& [key, masks] : freq) {
        std::vector<std::pair<std::vector<uint8_t>, size_t>> ordered(masks.begin(), masks.end());
        std::stable_sort(ordered.begin(), ordered.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        size_t first = lib.patterns.size();
        for (size_t i = 0; i < ordered.size() && i < budget[key]; ++i) {
            PatternMask m;
            m.rows = key.rows;
            m.cols = key.cols;
            m.active = ordered[i].first;
            m.entry_count = static_cast<size_t>(
                std::count(m.active.begin(), m.active.end(), uint8_t{1}));
            lib.patterns.push_back(std::move(m));
        }
        group_range[key] = {first, lib.patterns.size() - first};
    }

    // Pass 3: assign each unit the in-group pattern preserving the most L1.
    for (LayerAssignment& la : layer_assignments) {
        const LayerSpec& l = model.layers.at(la.layer_id);
        const size_t full_area = la.full_rows * la.full_cols;
        la.pattern_of_unit.resize(la.units.size());
        for (size_t ui = 0; ui < la.units.size(); ++ui) {
            const UnitView& u = la.units[ui];
            size_t k = partial_entries(la.entries, full_area, u.rows * u.cols);
            auto [first, count] = group_range.at(GroupKey{u.rows, u.cols, k});
            size_t best = first;
            double best_l1 = -1;
            for (size_t pi = first; pi < first + count; ++pi) {
                double s = preserved_l1(l, u, lib.patterns[pi]);
                if (s > best_l1) {
                    best_l1 = s;
                    best = pi;
                }
            }
            la.pattern_of_unit[ui] = best;
        }
        lib.layers.push_back(std::move(la));
    }
    return lib;
}

PatternLibrary build_pattern_library(const ModelSpec& model, size_t library_size) {
    return build_pattern_library(model, default_pattern_plan(model), library_size);
}

void materialize_masks(ModelSpec& model, const PatternLibrary& library) {
    for (const LayerAssignment& la : library.layers) {
        LayerSpec& l = model.layers.at(la.layer_id);
        l.mask.assign(l.weight_count(), 0);
        for (size_t ui = 0; ui < la.units.size(); ++ui) {
            const UnitView& u = la.units[ui];
            const PatternMask& m = library.patterns[la.pattern_of_unit[ui]];
            for (size_t r = 0; r < u.rows; ++r)
                for (size_t c = 0; c < u.cols; ++c)
                    if (m.active[r * u.cols + c])
                        l.mask[u.flat0 + r * u.row_stride + c] = 1;
        }
    }
}

std::vector<double> concentration_ratio(const ModelSpec& model, const PatternLibrary& library) {
    std::vector<double> ratios;
    for (const LayerSpec& l : model.layers) {
        if (!l.has_weights()) {
            ratios.push_back(1.0);
            continue;
        }
        const LayerAssignment* la = library.find_layer(l.id);
        if (!la) {
            ratios.push_back(1.0);
            continue;
        }
        size_t active = 0;
        for (size_t pi : la->pattern_of_unit) active += library.patterns[pi].entry_count;
        ratios.push_back(static_cast<double>(active) / static_cast<double>(l.weight_count()));
    }
    return ratios;
}

}  // namespace ember
