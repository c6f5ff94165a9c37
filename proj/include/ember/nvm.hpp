#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ember/model.hpp"

namespace ember {

// Thrown to model an instantaneous power loss inside the simulator. NVM
// words written before the throw stay durable; everything volatile is gone.
struct SimPowerLoss {};

struct NvmError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Word-addressed persistent memory. Writes are atomic at 16-bit width; the
// write hook fires after each word lands, which is where failure injection
// plugs in.
class NvmImage {
public:
    explicit NvmImage(size_t capacity_bytes = 256 * 1024)
        : words_(capacity_bytes / 2, 0) {}

    size_t word_capacity() const { return words_.size(); }

    uint16_t read(size_t addr) {
        bounds(addr);
        ++reads_;
        return words_[addr];
    }

    void write(size_t addr, uint16_t v) {
        bounds(addr);
        words_[addr] = v;
        ++writes_;
        ++write_ticks_;
        if (write_hook_) write_hook_(write_ticks_);
    }

    // Direct access without cost accounting or failure points (host-side
    // loading / inspection only).
    uint16_t peek(size_t addr) const { return words_.at(addr); }
    void poke(size_t addr, uint16_t v) { words_.at(addr) = v; }

    uint64_t read_count() const { return reads_; }
    uint64_t write_count() const { return writes_; }
    uint64_t write_ticks() const { return write_ticks_; }
    void reset_counters() { reads_ = writes_ = 0; }

    void set_write_hook(std::function<void(uint64_t)> hook) { write_hook_ = std::move(hook); }

private:
    void bounds(size_t addr) const {
        if (addr >= words_.size()) throw NvmError("NVM address out of range: " + std::to_string(addr));
    }
    std::vector<uint16_t> words_;
    uint64_t reads_ = 0, writes_ = 0, write_ticks_ = 0;
    std::function<void(uint64_t)> write_hook_;
};

// SRAM scratch; contents do not survive a power failure.
class VolatileImage {
public:
    explicit VolatileImage(size_t capacity_bytes = 8 * 1024) : words_(capacity_bytes / 2, 0) {}

    uint16_t read(size_t addr) {
        ++accesses_;
        return words_.at(addr);
    }
    void write(size_t addr, uint16_t v) {
        ++accesses_;
        words_.at(addr) = v;
    }
    void clear() { std::fill(words_.begin(), words_.end(), 0); }
    uint64_t access_count() const { return accesses_; }

private:
    std::vector<uint16_t> words_;
    uint64_t accesses_ = 0;
};

// Persisted execution progress: layer rank plus the (I, W, O) index triple,
// the pending accumulator (MAC granularity only), and a commit counter.
struct ProgressRecord {
    uint16_t layer = 0;       // L
    uint32_t input_idx = 0;   // I
    uint32_t weight_idx = 0;  // W
    uint32_t output_idx = 0;  // O
    acc_t acc = 0;
    uint32_t generation = 0;

    bool operator==(const ProgressRecord& o) const {
        return layer == o.layer && input_idx == o.input_idx && weight_idx == o.weight_idx &&
               output_idx == o.output_idx && acc == o.acc && generation == o.generation;
    }
};

// Two-slot alternating commit protocol on top of single-word atomic writes.
// A record is durable only once its checksum word (written last) matches;
// load returns the newest complete record.
class ProgressStore {
public:
    static constexpr size_t kSlotWords = 12;
    static constexpr size_t kStoreWords = 2 * kSlotWords;

    ProgressStore(NvmImage& nvm, size_t base_addr) : nvm_(nvm), base_(base_addr) {}

    // Seeds slot 0 with the initial record so a fresh device always loads
    // something valid.
    void format();

    // pre: record.generation == last_committed + 1. Every word write inside
    // is a distinct failure point.
    void commit(const ProgressRecord& record);

    // Newest complete record; `valid` (when given) can reject a structurally
    // inconsistent record, forcing fallback to the older slot.
    ProgressRecord load(const std::function<bool(const ProgressRecord&)>& valid = nullptr) const;

    uint32_t last_committed() const { return last_committed_; }
    void sync_after_restart() { last_committed_ = load().generation; }

private:
    size_t slot_addr(uint32_t generation) const { return base_ + (generation % 2) * kSlotWords; }
    NvmImage& nvm_;
    size_t base_;
    uint32_t last_committed_ = 0;
};

// ---- Model file format -----------------------------------------------------

struct SerializationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : SerializationError {
    using SerializationError::SerializationError;
};
struct VersionError : SerializationError {
    using SerializationError::SerializationError;
};
struct TruncationError : SerializationError {
    using SerializationError::SerializationError;
};
struct ChecksumError : SerializationError {
    using SerializationError::SerializationError;
};

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

// pack_low_energy stores only mask-active weights of patterned layers;
// deserialization restores masked-out positions as zero.
std::vector<uint8_t> serialize_model(const ModelSpec& model, bool pack_low_energy = false);
ModelSpec deserialize_model(const std::vector<uint8_t>& bytes);

void save_model_file(const ModelSpec& model, const std::string& path, bool pack_low_energy = false);
ModelSpec load_model_file(const std::string& path);

}  // namespace ember
