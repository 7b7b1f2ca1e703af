#include "pcilt/pcilt.hpp"

#include <algorithm>
#include <cmath>

#include "pcilt/checked.hpp"

namespace pcilt {

unsigned entry_bits(EntryKind k) {
    switch (k) {
    case EntryKind::I8: return 8;
    case EntryKind::I16: return 16;
    case EntryKind::I32: return 32;
    case EntryKind::I64: return 64;
    case EntryKind::R64: return 64;
    }
    return 64;
}

EntryKind minimal_entry_kind(std::int64_t min_entry, std::int64_t max_entry) {
    auto fits = [&](unsigned bits) {
        const std::int64_t lo = -(std::int64_t(1) << (bits - 1));
        const std::int64_t hi = (std::int64_t(1) << (bits - 1)) - 1;
        return min_entry >= lo && max_entry <= hi;
    };
    if (fits(8)) return EntryKind::I8;
    if (fits(16)) return EntryKind::I16;
    if (fits(32)) return EntryKind::I32;
    return EntryKind::I64;
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t Pcilt::payload_bytes() const {
    return std::uint64_t(levels()) * entry_bits(kind) / 8;
}

std::uint64_t PciltBank::payload_bytes() const {
    std::uint64_t total = 0;
    for (const Pcilt& t : tables)
        total += t.payload_bytes();
    return total;
}

std::uint64_t PciltBank::table_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Pcilt& t : tables) {
        if (t.real())
            h = fnv1a64(t.rvals.data(), t.rvals.size() * sizeof(double), h);
        else
            h = fnv1a64(t.ivals.data(), t.ivals.size() * sizeof(std::int64_t), h);
    }
    return h;
}

Pcilt build_pcilt(std::int64_t weight, Cardinality card, const ConvFn& fn, OpCounters* counters) {
    Pcilt t;
    t.base_kind = WeightKind::IntN;
    t.base_i = weight;
    t.act_card = card;
    const std::uint32_t levels = card.levels();
    t.ivals.resize(levels);
    std::int64_t lo = 0, hi = 0;
    for (std::uint32_t a = 0; a < levels; ++a) {
        const std::int64_t v = fn.eval_int(weight, a);
        t.ivals[a] = v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (counters)
        counters->fn_evals += levels;
    t.kind = minimal_entry_kind(lo, hi);
    return t;
}

Pcilt build_pcilt_real(double weight, Cardinality card, const ConvFn& fn, OpCounters* counters) {
    Pcilt t;
    t.base_kind = WeightKind::Real64;
    t.base_r = weight;
    t.act_card = card;
    t.kind = EntryKind::R64;
    const std::uint32_t levels = card.levels();
    t.rvals.resize(levels);
    for (std::uint32_t a = 0; a < levels; ++a) {
        t.rvals[a] = fn.eval_real(weight, a);
        if (!std::isfinite(t.rvals[a]))
            throw RangeError("non-finite table entry at (w=" + std::to_string(weight) +
                             ", a=" + std::to_string(a) + ")");
    }
    if (counters)
        counters->fn_evals += levels;
    return t;
}

namespace {

// overflow guard for folded integer banks: |sum| <= taps * max|entry| must stay below 2^63
void refresh_max_abs(PciltBank& bank) {
    std::int64_t m = 0;
    for (const Pcilt& t : bank.tables)
        for (std::int64_t v : t.ivals)
            m = std::max(m, v == INT64_MIN ? INT64_MAX : std::abs(v));
    bank.max_abs_entry = m;
}

void widen_bank_kind(PciltBank& bank) {
    if (bank.real())
        return;
    EntryKind k = EntryKind::I8;
    for (const Pcilt& t : bank.tables)
        k = std::max(k, t.kind);
    bank.kind = k;
    for (Pcilt& t : bank.tables)
        t.kind = k;
}

} // namespace

PciltBank build_bank(const Filter& filter, Cardinality card, const ConvFn& fn, InputWeightMode mode,
                     OpCounters* counters) {
    PciltBank bank;
    bank.kh = filter.kh;
    bank.kw = filter.kw;
    bank.fn = fn;
    bank.act_card = card;
    bank.tables.reserve(filter.taps());
    OpCounters local;
    const bool integer = filter.kind == WeightKind::IntN && fn.integer_entries(filter.kind);
    for (std::size_t t = 0; t < filter.taps(); ++t) {
        if (integer)
            bank.tables.push_back(build_pcilt(filter.iweights[t], card, fn, &local));
        else if (filter.kind == WeightKind::Real64)
            bank.tables.push_back(build_pcilt_real(filter.rweights[t], card, fn, &local));
        else
            throw ConfigError("function '" + fn.id() + "' produces real entries for integer weights");
    }
    bank.build_fn_evals = local.fn_evals;
    if (counters)
        *counters += local;
    if (integer) {
        bank.kind = EntryKind::I8;
        widen_bank_kind(bank);
        refresh_max_abs(bank);
        if (mode == InputWeightMode::Fold) {
            if (filter.input_weight != 1)
                return fold_input_weight(bank, filter.input_weight);
        } else {
            bank.ifdr_weight = filter.input_weight;
        }
    } else {
        bank.kind = EntryKind::R64;
        if (mode == InputWeightMode::Fold) {
            if (filter.input_weight_real != 1.0)
                return fold_input_weight_real(bank, filter.input_weight_real);
        } else {
            bank.ifdr_weight_real = filter.input_weight_real;
        }
    }
    return bank;
}

namespace {

template <bool Count>
AccTensor pcilt_core_int(const QTensor& in, std::size_t kh, std::size_t kw,
                         std::span<const std::int64_t* const> tabs, std::int64_t ifdr, int threads,
                         OpCounters* counters) {
    const ConvGeometry g = ConvGeometry::of(in, kh, kw);
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    AccTensor out = AccTensor::zeros(out_rows, out_cols);
    const std::uint16_t* src = in.values.data();
    const std::size_t stride = in.cols;

    auto row_work = [&](std::size_t y, OpCounters& c) {
        std::int64_t* dst = out.values.data() + y * out_cols;
        for (std::size_t x = 0; x < out_cols; ++x) {
            std::int64_t acc = 0;
            std::size_t t = 0;
            for (std::size_t i = 0; i < kh; ++i) {
                const std::uint16_t* row = src + (y + i) * stride + x;
                for (std::size_t j = 0; j < kw; ++j, ++t)
                    acc += tabs[t][row[j]];
            }
            if constexpr (Count) {
                c.lookups += kh * kw;
                c.adds += kh * kw - 1;
            }
            if (ifdr != 1) {
                acc *= ifdr;
                if constexpr (Count)
                    ++c.mults;
            }
            dst[x] = acc;
        }
    };

    if (threads <= 1) {
        OpCounters local;
        for (std::size_t y = 0; y < out_rows; ++y)
            row_work(y, local);
        if (counters)
            *counters += local;
    } else {
#pragma omp parallel num_threads(threads)
        {
            OpCounters local;
#pragma omp for schedule(static)
            for (std::int64_t y = 0; y < static_cast<std::int64_t>(out_rows); ++y)
                row_work(static_cast<std::size_t>(y), local);
            if (counters) {
#pragma omp critical(pcilt_counters)
                *counters += local;
            }
        }
    }
    return out;
}

void check_conv_inputs(const QTensor& in, const PciltBank& bank) {
    if (bank.tables.size() != bank.taps())
        throw ShapeError("bank holds " + std::to_string(bank.tables.size()) + " tables, filter needs " +
                         std::to_string(bank.taps()));
    if (in.card != bank.act_card)
        throw ShapeError("input cardinality " + std::to_string(in.card.bits()) +
                         "-bit does not match bank cardinality " +
                         std::to_string(bank.act_card.bits()) + "-bit");
}

} // namespace

AccTensor pcilt_conv2d(const QTensor& input, const PciltBank& bank, int threads, OpCounters* counters) {
    check_conv_inputs(input, bank);
    if (bank.real())
        throw ConfigError("bank holds real entries; use pcilt_conv2d_real");
    if (bank.max_abs_entry > 0 &&
        static_cast<std::uint64_t>(bank.max_abs_entry) > (std::uint64_t(1) << 62) / bank.taps())
        throw RangeError("bank entries too large to accumulate without overflow");
    std::vector<const std::int64_t*> tabs(bank.taps());
    for (std::size_t t = 0; t < bank.taps(); ++t)
        tabs[t] = bank.tables[t].ivals.data();
    return pcilt_conv2d_tables(input, bank.kh, bank.kw, tabs, bank.ifdr_weight, threads, counters);
}

AccTensor pcilt_conv2d_tables(const QTensor& input, std::size_t kh, std::size_t kw,
                              std::span<const std::int64_t* const> tables, std::int64_t ifdr,
                              int threads, OpCounters* counters) {
    if (tables.size() != kh * kw)
        throw ShapeError("need one table per filter tap");
    if (counters)
        return pcilt_core_int<true>(input, kh, kw, tables, ifdr, threads, counters);
    return pcilt_core_int<false>(input, kh, kw, tables, ifdr, threads, nullptr);
}

RealTensor pcilt_conv2d_real(const QTensor& input, const PciltBank& bank, int threads,
                             OpCounters* counters) {
    check_conv_inputs(input, bank);
    if (!bank.real())
        throw ConfigError("bank holds integer entries; use pcilt_conv2d");
    const ConvGeometry g = ConvGeometry::of(input, bank.kh, bank.kw);
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    RealTensor out = RealTensor::zeros(out_rows, out_cols);
    const std::uint16_t* src = input.values.data();
    const std::size_t stride = input.cols;
    const double ifdr = bank.ifdr_weight_real;

    std::vector<const double*> tabs(bank.taps());
    for (std::size_t t = 0; t < bank.taps(); ++t)
        tabs[t] = bank.tables[t].rvals.data();

    auto row_work = [&](std::size_t y, OpCounters& c) {
        double* dst = out.values.data() + y * out_cols;
        for (std::size_t x = 0; x < out_cols; ++x) {
            double acc = 0.0;
            std::size_t t = 0;
            for (std::size_t i = 0; i < bank.kh; ++i) {
                const std::uint16_t* row = src + (y + i) * stride + x;
                for (std::size_t j = 0; j < bank.kw; ++j, ++t)
                    acc += tabs[t][row[j]];
            }
            c.lookups += bank.taps();
            c.adds += bank.taps() - 1;
            if (ifdr != 1.0) {
                acc *= ifdr;
                ++c.mults;
            }
            dst[x] = acc;
        }
    };

    if (threads <= 1) {
        OpCounters local;
        for (std::size_t y = 0; y < out_rows; ++y)
            row_work(y, local);
        if (counters)
            *counters += local;
    } else {
#pragma omp parallel num_threads(threads)
        {
            OpCounters local;
#pragma omp for schedule(static)
            for (std::int64_t y = 0; y < static_cast<std::int64_t>(out_rows); ++y)
                row_work(static_cast<std::size_t>(y), local);
            if (counters) {
#pragma omp critical(pcilt_counters)
                *counters += local;
            }
        }
    }
    return out;
}

PciltBank fold_input_weight(const PciltBank& bank, std::int64_t s) {
    if (bank.real())
        throw ConfigError("integer fold applied to a real bank");
    PciltBank folded = bank;
    for (Pcilt& t : folded.tables) {
        std::int64_t lo = 0, hi = 0;
        for (std::int64_t& v : t.ivals) {
            if (__builtin_mul_overflow(v, s, &v))
                throw RangeError("folding weight " + std::to_string(s) +
                                 " overflows 64-bit table entries");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        t.kind = minimal_entry_kind(lo, hi);
    }
    folded.folded = checked_mul_i64(bank.folded, s, "folded weight");
    widen_bank_kind(folded);
    refresh_max_abs(folded);
    return folded;
}

PciltBank fold_input_weight_real(const PciltBank& bank, double s) {
    if (!bank.real())
        throw ConfigError("real fold applied to an integer bank");
    PciltBank folded = bank;
    for (Pcilt& t : folded.tables)
        for (double& v : t.rvals) {
            v *= s;
            if (!std::isfinite(v))
                throw RangeError("folding produced a non-finite entry");
        }
    folded.folded_real = bank.folded_real * s;
    return folded;
}

} // namespace pcilt
