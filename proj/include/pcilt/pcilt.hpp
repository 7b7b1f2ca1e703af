#pragma once

#include "pcilt/conv_fn.hpp"
#include "pcilt/op_counters.hpp"
#include "pcilt/reference_conv.hpp"
#include "pcilt/types.hpp"

namespace pcilt {

/// Storage width of one table entry. Integer tables use the minimal signed
/// width holding every entry, rounded up to 8/16/32/64 bits.
enum class EntryKind : std::uint8_t { I8 = 0, I16 = 1, I32 = 2, I64 = 3, R64 = 4 };

unsigned entry_bits(EntryKind k);
EntryKind minimal_entry_kind(std::int64_t min_entry, std::int64_t max_entry);

/// One lookup table: entries[a] = fn(base, a) for every activation level a.
struct Pcilt {
    WeightKind base_kind = WeightKind::IntN;
    std::int64_t base_i = 0;
    double base_r = 0.0;
    Cardinality act_card;
    EntryKind kind = EntryKind::I8;
    std::vector<std::int64_t> ivals;
    std::vector<double> rvals;

    bool real() const noexcept { return kind == EntryKind::R64; }
    std::uint32_t levels() const noexcept { return act_card.levels(); }
    std::uint64_t payload_bytes() const;
};

/// One table per filter tap, row-major. `folded` is the scalar already
/// multiplied into the entries; `ifdr_weight` is the residual scalar applied
/// to each position's sum at inference (1 = multiplication-free path).
struct PciltBank {
    std::size_t kh = 0;
    std::size_t kw = 0;
    ConvFn fn;
    Cardinality act_card;
    EntryKind kind = EntryKind::I8;
    std::vector<Pcilt> tables;
    std::int64_t folded = 1;
    double folded_real = 1.0;
    std::int64_t ifdr_weight = 1;
    double ifdr_weight_real = 1.0;
    std::uint64_t build_fn_evals = 0;
    std::int64_t max_abs_entry = 0; // integer banks; accumulation overflow guard

    bool real() const noexcept { return kind == EntryKind::R64; }
    std::size_t taps() const noexcept { return kh * kw; }
    std::uint64_t payload_bytes() const;
    std::uint64_t table_checksum() const; // fnv over entries; inference must never change it
};

enum class InputWeightMode : std::uint8_t {
    Fold = 0,    // multiply the input weight into the entries at build
    Multiply = 1 // keep it as a per-position scalar multiplication
};

Pcilt build_pcilt(std::int64_t weight, Cardinality card, const ConvFn& fn,
                  OpCounters* counters = nullptr);
Pcilt build_pcilt_real(double weight, Cardinality card, const ConvFn& fn,
                       OpCounters* counters = nullptr);

/// kh*kw tables; exactly kh*kw*levels fn evaluations, recorded in the result
/// and in `counters` when given.
PciltBank build_bank(const Filter& filter, Cardinality card, const ConvFn& fn,
                     InputWeightMode mode = InputWeightMode::Fold,
                     OpCounters* counters = nullptr);

/// Lookup convolution. Bit-identical to dm_conv2d for the same filter and fn,
/// with zero multiplications when ifdr_weight == 1.
AccTensor pcilt_conv2d(const QTensor& input, const PciltBank& bank, int threads = 1,
                       OpCounters* counters = nullptr);
RealTensor pcilt_conv2d_real(const QTensor& input, const PciltBank& bank, int threads = 1,
                             OpCounters* counters = nullptr);

/// Same kernel over raw per-tap table pointers; shared banks route their
/// references through this so entries are read from the shared store.
AccTensor pcilt_conv2d_tables(const QTensor& input, std::size_t kh, std::size_t kw,
                              std::span<const std::int64_t* const> tables, std::int64_t ifdr,
                              int threads = 1, OpCounters* counters = nullptr);

/// Multiply every entry by s (widening the entry kind as needed).
PciltBank fold_input_weight(const PciltBank& bank, std::int64_t s);
PciltBank fold_input_weight_real(const PciltBank& bank, double s);

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

} // namespace pcilt
