#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ember {

// 16-bit signed fixed point, 15 fractional bits. real value = q * 2^(scale-15).
using q15_t = int16_t;
using acc_t = int32_t;

constexpr q15_t kQ15Max = 32767;
constexpr q15_t kQ15Min = -32768;

inline acc_t sat_add32(acc_t a, acc_t b) {
    int64_t s = static_cast<int64_t>(a) + b;
    if (s > INT32_MAX) return INT32_MAX;
    if (s < INT32_MIN) return INT32_MIN;
    return static_cast<acc_t>(s);
}

inline q15_t sat16(acc_t v) {
    if (v > kQ15Max) return kQ15Max;
    if (v < kQ15Min) return kQ15Min;
    return static_cast<q15_t>(v);
}

// Divide by 2^shift, rounding half away from zero. shift may be negative
// (multiply). Result saturated to 16 bits.
inline q15_t requantize(acc_t acc, int shift) {
    if (shift <= 0) {
        int64_t v = static_cast<int64_t>(acc) << (-shift);
        if (v > kQ15Max) return kQ15Max;
        if (v < kQ15Min) return kQ15Min;
        return static_cast<q15_t>(v);
    }
    int64_t half = int64_t{1} << (shift - 1);
    int64_t v = static_cast<int64_t>(acc);
    v = (v >= 0) ? ((v + half) >> shift) : -((-v + half) >> shift);
    if (v > kQ15Max) return kQ15Max;
    if (v < kQ15Min) return kQ15Min;
    return static_cast<q15_t>(v);
}

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct QTensor {
    std::vector<size_t> shape;
    std::vector<q15_t> data;
    int scale = 0;  // power-of-two exponent; value = q * 2^(scale-15)

    QTensor() = default;
    QTensor(std::vector<size_t> s, int sc = 0) : shape(std::move(s)), scale(sc) {
        data.assign(element_count(), 0);
    }

    size_t element_count() const {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }

    void validate() const {
        if (data.size() != element_count())
            throw ShapeError("QTensor: data length " + std::to_string(data.size()) +
                             " != shape product " + std::to_string(element_count()));
    }

    double value_at(size_t i) const {
        return static_cast<double>(data[i]) * std::pow(2.0, scale - 15);
    }

    static q15_t quantize_value(double v, int scale) {
        double q = v * std::pow(2.0, 15 - scale);
        double r = (q >= 0) ? std::floor(q + 0.5) : std::ceil(q - 0.5);
        if (r > kQ15Max) return kQ15Max;
        if (r < kQ15Min) return kQ15Min;
        return static_cast<q15_t>(r);
    }

    static QTensor from_values(std::vector<size_t> shape, const std::vector<double>& vals, int scale) {
        QTensor t(std::move(shape), scale);
        if (vals.size() != t.data.size()) throw ShapeError("from_values: size mismatch");
        for (size_t i = 0; i < vals.size(); ++i) t.data[i] = quantize_value(vals[i], scale);
        return t;
    }

    bool operator==(const QTensor& o) const {
        return shape == o.shape && data == o.data && scale == o.scale;
    }
};

}  // namespace ember
