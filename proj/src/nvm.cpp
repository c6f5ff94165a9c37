#include "ember/nvm.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace ember {

namespace {

// Slot layout: L, I_lo, I_hi, W_lo, W_hi, O_lo, O_hi, acc_lo, acc_hi,
// gen_lo, gen_hi, checksum. The checksum word goes last so a torn commit is
// always detectable.
constexpr uint16_t kChecksumSeed = 0xEB00;

std::array<uint16_t, ProgressStore::kSlotWords - 1> pack_record(const ProgressRecord& r) {
    auto lo = [](uint32_t v) { return static_cast<uint16_t>(v & 0xFFFF); };
    auto hi = [](uint32_t v) { return static_cast<uint16_t>(v >> 16); };
    uint32_t acc = static_cast<uint32_t>(r.acc);
    return {r.layer,
            lo(r.input_idx),  hi(r.input_idx),
            lo(r.weight_idx), hi(r.weight_idx),
            lo(r.output_idx), hi(r.output_idx),
            lo(acc),          hi(acc),
            lo(r.generation), hi(r.generation)};
}

uint16_t slot_checksum(const std::array<uint16_t, ProgressStore::kSlotWords - 1>& words) {
    uint16_t s = kChecksumSeed;
    for (uint16_t w : words) s = static_cast<uint16_t>(s + w * 31u + 7u);
    return s;
}

}  // namespace

void ProgressStore::format() {
    ProgressRecord initial;  // L=0, C=(0,0,0), generation 0
    auto words = pack_record(initial);
    size_t a = slot_addr(0);
    for (size_t i = 0; i < words.size(); ++i) nvm_.poke(a + i, words[i]);
    nvm_.poke(a + words.size(), slot_checksum(words));
    // Invalidate the other slot.
    size_t b = slot_addr(1);
    for (size_t i = 0; i < kSlotWords; ++i) nvm_.poke(b + i, 0);
    last_committed_ = 0;
}

void ProgressStore::commit(const ProgressRecord& record) {
    if (record.generation != last_committed_ + 1)
        throw NvmError("commit generation " + std::to_string(record.generation) +
                       " is not last committed + 1");
    auto words = pack_record(record);
    size_t a = slot_addr(record.generation);
    for (size_t i = 0; i < words.size(); ++i) nvm_.write(a + i, words[i]);
    nvm_.write(a + words.size(), slot_checksum(words));  // commit point
    last_committed_ = record.generation;
}

ProgressRecord ProgressStore::load(const std::function<bool(const ProgressRecord&)>& valid) const {
    ProgressRecord best;
    bool found = false;
    for (size_t slot = 0; slot < 2; ++slot) {
        size_t a = base_ + slot * kSlotWords;
        std::array<uint16_t, kSlotWords - 1> words;
        for (size_t i = 0; i < words.size(); ++i) words[i] = nvm_.peek(a + i);
        if (nvm_.peek(a + words.size()) != slot_checksum(words)) continue;
        ProgressRecord r;
        r.layer = words[0];
        r.input_idx = words[1] | (static_cast<uint32_t>(words[2]) << 16);
        r.weight_idx = words[3] | (static_cast<uint32_t>(words[4]) << 16);
        r.output_idx = words[5] | (static_cast<uint32_t>(words[6]) << 16);
        r.acc = static_cast<acc_t>(words[7] | (static_cast<uint32_t>(words[8]) << 16));
        r.generation = words[9] | (static_cast<uint32_t>(words[10]) << 16);
        if (valid && !valid(r)) continue;
        if (!found || r.generation > best.generation) {
            best = r;
            found = true;
        }
    }
    if (!found) throw NvmError("progress store: no complete record in either slot");
    return best;
}

// ---- CRC32 (IEEE, reflected) ----------------------------------------------

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// ---- Model serialization ---------------------------------------------------

namespace {

struct Writer {
    std::vector<uint8_t> out;
    void u8(uint8_t v) { out.push_back(v); }
    void u16(uint16_t v) {
        out.push_back(v & 0xFF);
        out.push_back(v >> 8);
    }
    void u32(uint32_t v) {
        u16(v & 0xFFFF);
        u16(v >> 16);
    }
    void i8(int8_t v) { u8(static_cast<uint8_t>(v)); }
    void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
};

struct Reader {
    const std::vector<uint8_t>& in;
    size_t pos = 0;
    void need(size_t n) const {
        if (pos + n > in.size())
            throw TruncationError("model stream truncated at offset " + std::to_string(pos));
    }
    uint8_t u8() {
        need(1);
        return in[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = in[pos] | (static_cast<uint16_t>(in[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        uint32_t lo = u16();
        return lo | (static_cast<uint32_t>(u16()) << 16);
    }
    int8_t i8() { return static_cast<int8_t>(u8()); }
    int16_t i16() { return static_cast<int16_t>(u16()); }
    int32_t i32() { return static_cast<int32_t>(u32()); }
};

constexpr uint16_t kFormatVersion = 1;

}  // namespace

std::vector<uint8_t> serialize_model(const ModelSpec& m, bool pack_low_energy) {
    Writer w;
    w.out.insert(w.out.end(), {'E', 'H', 'N', 'N'});
    w.u16(kFormatVersion);
    w.u16(static_cast<uint16_t>(m.name.size()));
    for (char c : m.name) w.u8(static_cast<uint8_t>(c));
    w.u8(static_cast<uint8_t>(m.input_shape.size()));
    for (size_t d : m.input_shape) w.u16(static_cast<uint16_t>(d));
    w.i8(static_cast<int8_t>(m.input_scale));
    w.u16(static_cast<uint16_t>(m.layers.size()));
    for (const LayerSpec& l : m.layers) {
        w.u8(static_cast<uint8_t>(l.kind));
        bool packed = pack_low_energy && !l.mask.empty();
        uint8_t flags = (l.mask.empty() ? 0 : 1) | (l.le_exempt ? 2 : 0) | (packed ? 4 : 0);
        w.u8(flags);
        switch (l.kind) {
            case LayerKind::Conv2D:
                w.u16(static_cast<uint16_t>(l.out_ch));
                w.u16(static_cast<uint16_t>(l.in_ch));
                w.u16(static_cast<uint16_t>(l.kh));
                w.u16(static_cast<uint16_t>(l.kw));
                break;
            case LayerKind::FullyConnected:
                w.u16(static_cast<uint16_t>(l.out_features));
                w.u16(static_cast<uint16_t>(l.in_features));
                break;
            case LayerKind::MaxPool:
                w.u16(static_cast<uint16_t>(l.pool));
                break;
            case LayerKind::ReLU:
                break;
            case LayerKind::ChannelSlice:
                w.u16(static_cast<uint16_t>(l.keep_channels));
                break;
        }
        if (l.has_weights()) {
            w.i8(static_cast<int8_t>(l.weights.scale));
            w.i8(static_cast<int8_t>(l.out_scale));
            w.u16(static_cast<uint16_t>(l.bias.size()));
            for (acc_t b : l.bias) w.i32(b);
            if (!l.mask.empty()) {
                // bit field, LSB first
                uint8_t byte = 0;
                for (size_t i = 0; i < l.mask.size(); ++i) {
                    if (l.mask[i]) byte |= static_cast<uint8_t>(1u << (i % 8));
                    if (i % 8 == 7 || i + 1 == l.mask.size()) {
                        w.u8(byte);
                        byte = 0;
                    }
                }
            }
            if (packed) {
                for (size_t i = 0; i < l.weights.data.size(); ++i)
                    if (l.mask[i]) w.i16(l.weights.data[i]);
            } else {
                for (q15_t q : l.weights.data) w.i16(q);
            }
        }
    }
    uint32_t crc = crc32(w.out.data(), w.out.size());
    w.u32(crc);
    return w.out;
}

ModelSpec deserialize_model(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8) throw TruncationError("model stream shorter than header");
    if (std::memcmp(bytes.data(), "EHNN", 4) != 0) throw BadMagicError("bad magic, expected EHNN");
    uint32_t stored = bytes[bytes.size() - 4] | (bytes[bytes.size() - 3] << 8) |
                      (bytes[bytes.size() - 2] << 16) |
                      (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
    if (crc32(bytes.data(), bytes.size() - 4) != stored)
        throw ChecksumError("model stream CRC mismatch");

    Reader r{bytes};
    r.pos = 4;
    uint16_t version = r.u16();
    if (version != kFormatVersion)
        throw VersionError("unsupported model format version " + std::to_string(version));
    ModelSpec m;
    uint16_t name_len = r.u16();
    r.need(name_len);
    m.name.assign(bytes.begin() + r.pos, bytes.begin() + r.pos + name_len);
    r.pos += name_len;
    uint8_t rank = r.u8();
    for (size_t i = 0; i < rank; ++i) m.input_shape.push_back(r.u16());
    m.input_scale = r.i8();
    uint16_t n_layers = r.u16();
    for (size_t li = 0; li < n_layers; ++li) {
        LayerSpec l;
        l.kind = static_cast<LayerKind>(r.u8());
        uint8_t flags = r.u8();
        l.le_exempt = (flags & 2) != 0;
        l.id = static_cast<int>(li);
        switch (l.kind) {
            case LayerKind::Conv2D:
                l.out_ch = r.u16();
                l.in_ch = r.u16();
                l.kh = r.u16();
                l.kw = r.u16();
                l.weights.shape = {l.out_ch, l.in_ch, l.kh, l.kw};
                break;
            case LayerKind::FullyConnected:
                l.out_features = r.u16();
                l.in_features = r.u16();
                l.weights.shape = {l.out_features, l.in_features};
                break;
            case LayerKind::MaxPool:
                l.pool = r.u16();
                break;
            case LayerKind::ReLU:
                break;
            case LayerKind::ChannelSlice:
                l.keep_channels = r.u16();
                break;
            default:
                throw SerializationError("unknown layer kind in stream");
        }
        if (l.has_weights()) {
            l.weights.scale = r.i8();
            l.out_scale = r.i8();
            uint16_t nb = r.u16();
            for (size_t i = 0; i < nb; ++i) l.bias.push_back(r.i32());
            size_t n = l.weight_count();
            if (flags & 1) {
                l.mask.assign(n, 0);
                size_t nbytes = (n + 7) / 8;
                r.need(nbytes);
                for (size_t i = 0; i < n; ++i)
                    l.mask[i] = (bytes[r.pos + i / 8] >> (i % 8)) & 1;
                r.pos += nbytes;
            }
            l.weights.data.assign(n, 0);
            if (flags & 4) {
                if (l.mask.empty())
                    throw SerializationError("packed layer without mask in stream");
                for (size_t i = 0; i < n; ++i)
                    if (l.mask[i]) l.weights.data[i] = r.i16();
            } else {
                for (size_t i = 0; i < n; ++i) l.weights.data[i] = r.i16();
            }
        }
        m.layers.push_back(std::move(l));
    }
    validate_model(m);
    return m;
}

void save_model_file(const ModelSpec& model, const std::string& path, bool pack_low_energy) {
    auto bytes = serialize_model(model, pack_low_energy);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SerializationError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelSpec load_model_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SerializationError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace ember
