#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "pcilt/errors.hpp"

namespace pcilt {

/// Number of distinct values an activation can take, expressed as a bit width.
class Cardinality {
public:
    Cardinality() = default; // 1 bit
    explicit Cardinality(unsigned bits);
    unsigned bits() const noexcept { return bits_; }
    std::uint32_t levels() const noexcept { return 1u << bits_; }
    friend bool operator==(Cardinality a, Cardinality b) noexcept { return a.bits_ == b.bits_; }
    friend bool operator!=(Cardinality a, Cardinality b) noexcept { return a.bits_ != b.bits_; }
    friend bool operator<(Cardinality a, Cardinality b) noexcept { return a.bits_ < b.bits_; }

private:
    unsigned bits_ = 1;
};

/// Dense row-major 2-D grid of unsigned quantized activations.
/// Every value is < card.levels(); activations are table offsets, so they
/// are unsigned by construction.
struct QTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Cardinality card;
    std::vector<std::uint16_t> values;

    static QTensor make(std::size_t rows, std::size_t cols, Cardinality card,
                        std::vector<std::uint16_t> values);
    std::uint16_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

enum class WeightKind : std::uint8_t { IntN = 0, Real64 = 1 };

/// 2-D filter. IntN weights are signed and bounded by weight_bits;
/// Real64 weights are IEEE doubles. The input weight is the scalar the
/// classic algorithm multiplies the per-position dot result by.
struct Filter {
    std::size_t kh = 0;
    std::size_t kw = 0;
    WeightKind kind = WeightKind::IntN;
    unsigned weight_bits = 8; // IntN only, in [1, 16]
    std::vector<std::int32_t> iweights;
    std::vector<double> rweights;
    std::int64_t input_weight = 1;    // IntN path
    double input_weight_real = 1.0;   // Real64 path

    static Filter ints(std::size_t kh, std::size_t kw, unsigned weight_bits,
                       std::vector<std::int32_t> weights, std::int64_t input_weight = 1);
    static Filter reals(std::size_t kh, std::size_t kw, std::vector<double> weights,
                        double input_weight = 1.0);
    std::size_t taps() const noexcept { return kh * kw; }
};

/// Integer convolution output. Accumulation is always signed 64-bit.
struct AccTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int64_t> values;

    static AccTensor zeros(std::size_t rows, std::size_t cols);
    std::int64_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Real convolution output (Real64 weights or learned tables).
struct RealTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    static RealTensor zeros(std::size_t rows, std::size_t cols);
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Map one value between cardinalities: round(v * (2^B - 1) / (2^b - 1)).
/// Monotone, 0 -> 0, max -> max.
std::uint16_t rescale_value(std::uint16_t v, Cardinality from, Cardinality to);

/// Align a set of tensors to a common cardinality. With no explicit target
/// the widest bit width present is used, so only upscaling happens; an
/// explicit narrower target trades precision for smaller tables.
std::vector<QTensor> rescale_to_common_cardinality(const std::vector<QTensor>& tensors,
                                                   std::optional<Cardinality> target = std::nullopt);

} // namespace pcilt
