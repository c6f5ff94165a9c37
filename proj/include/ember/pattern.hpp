#pragma once

#include <cstdint>
#include <vector>

#include "ember/model.hpp"

namespace ember {

struct PatternMask {
    size_t rows = 0, cols = 0;
    std::vector<uint8_t> active;  // rows*cols entries, 0/1
    size_t entry_count = 0;

    bool operator==(const PatternMask& o) const {
        return rows == o.rows && cols == o.cols && active == o.active;
    }
};

// A kernel or FC block seen as a rectangular window into a layer's flat
// weight array: weight(r, c) = flat0 + r * row_stride + c.
struct UnitView {
    size_t flat0 = 0;
    size_t rows = 0, cols = 0;
    size_t row_stride = 0;
};

// Per-layer concentration plan: how a patterned layer is carved into units
// and how many entries each full unit keeps.
struct LayerPatternPlan {
    int layer_id = 0;
    size_t block_rows = 0, block_cols = 0;  // for fc layers; conv uses kernel shape
    size_t entries = 0;                     // k for a full-size unit
    double target_ratio = 0.0;
};

struct LayerAssignment {
    int layer_id = 0;
    size_t full_rows = 0, full_cols = 0;  // full-unit geometry
    size_t entries = 0;
    std::vector<UnitView> units;
    std::vector<size_t> pattern_of_unit;  // index into PatternLibrary::patterns
};

struct PatternLibrary {
    std::vector<PatternMask> patterns;
    std::vector<LayerAssignment> layers;

    const LayerAssignment* find_layer(int layer_id) const {
        for (const auto& la : layers)
            if (la.layer_id == layer_id) return &la;
        return nullptr;
    }
};

// Mask keeping the k largest-|w| entries of the unit; ties broken toward the
// lowest flat index.
PatternMask select_topk_mask(const std::vector<double>& values, size_t rows, size_t cols, size_t k);

// Same, reading Q15 weights through a unit view.
PatternMask select_topk_mask(const LayerSpec& layer, const UnitView& unit, size_t k);

// Row-major non-overlapping tiling of an FC weight matrix; edge blocks are
// partial. Throws ConfigError on zero-sized blocks or a non-fc layer.
std::vector<UnitView> partition_fc_blocks(const LayerSpec& layer, size_t block_rows, size_t block_cols);

// Scaled entry count for a partial block: floor(k * area / full_area).
size_t partial_entries(size_t full_entries, size_t full_area, size_t area);

// Entry sizes and block shapes per patterned layer, chosen so each layer's
// concentration ratio approaches its target.
std::vector<LayerPatternPlan> default_pattern_plan(const ModelSpec& model);

// Builds the frequency-clustered pattern library and assigns every unit the
// library pattern of its geometry that preserves the most L1 mass.
PatternLibrary build_pattern_library(const ModelSpec& model,
                                     const std::vector<LayerPatternPlan>& plan,
                                     size_t library_size = 10);

PatternLibrary build_pattern_library(const ModelSpec& model, size_t library_size = 10);

// Writes per-weight masks into the model's patterned layers.
void materialize_masks(ModelSpec& model, const PatternLibrary& library);

// active / total weights per layer; 1.0 for exempt and weightless layers.
std::vector<double> concentration_ratio(const ModelSpec& model, const PatternLibrary& library);

}  // namespace ember
