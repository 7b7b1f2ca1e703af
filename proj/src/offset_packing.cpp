#include "pcilt/offset_packing.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "pcilt/checked.hpp"

namespace pcilt {

void SegmentPlan::validate() const {
    if (kh == 0 || kw == 0)
        throw ShapeError("plan filter dimensions must be positive");
    if (act_bits < 1 || act_bits > 16)
        throw RangeError("plan activation bits must be in [1, 16]");
    for (std::size_t s = 0; s < segments.size(); ++s) {
        if (segments[s].empty())
            throw ConfigError("segment " + std::to_string(s) + " is empty");
        if (offset_bits(s) > kMaxOffsetBits)
            throw ConfigError("segment " + std::to_string(s) + " needs " +
                              std::to_string(offset_bits(s)) + " offset bits, cap is " +
                              std::to_string(kMaxOffsetBits));
        for (std::uint16_t t : segments[s])
            if (t >= taps())
                throw ConfigError("segment " + std::to_string(s) + " references tap " +
                                  std::to_string(t) + ", filter has " + std::to_string(taps()));
    }
}

std::string SegmentPlan::to_text() const {
    std::ostringstream os;
    os << "plan v1\n";
    os << "filter " << kh << "x" << kw << "\n";
    os << "act_bits " << act_bits << "\n";
    for (const auto& seg : segments) {
        os << "segment";
        for (std::uint16_t t : seg)
            os << ' ' << t;
        os << "\n";
    }
    return os.str();
}

SegmentPlan SegmentPlan::from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    SegmentPlan plan;
    bool saw_header = false, saw_filter = false, saw_bits = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key))
            continue;
        if (key == "plan") {
            std::string version;
            ls >> version;
            if (version != "v1")
                throw ConfigError("unsupported plan version '" + version + "'");
            saw_header = true;
        } else if (key == "filter") {
            char x = 0;
            if (!(ls >> plan.kh >> x >> plan.kw) || x != 'x')
                throw ConfigError("malformed plan filter line: " + line);
            saw_filter = true;
        } else if (key == "act_bits") {
            if (!(ls >> plan.act_bits))
                throw ConfigError("malformed plan act_bits line: " + line);
            saw_bits = true;
        } else if (key == "segment") {
            std::vector<std::uint16_t> seg;
            unsigned t = 0;
            while (ls >> t)
                seg.push_back(static_cast<std::uint16_t>(t));
            plan.segments.push_back(std::move(seg));
        } else {
            throw ConfigError("unknown plan directive '" + key + "'");
        }
    }
    if (!saw_header || !saw_filter || !saw_bits)
        throw ConfigError("plan text is missing a header line");
    plan.validate();
    return plan;
}

SegmentPlan compile_plan(std::size_t kh, std::size_t kw, unsigned act_bits, unsigned segment_len,
                         const std::vector<std::uint16_t>& skips,
                         const std::vector<std::uint16_t>& extra_repeats) {
    if (segment_len < 1)
        throw ConfigError("segment length must be at least 1");
    if (segment_len * act_bits > kMaxOffsetBits)
        throw ConfigError("segment length " + std::to_string(segment_len) + " at " +
                          std::to_string(act_bits) + " bits exceeds the " +
                          std::to_string(kMaxOffsetBits) + "-bit offset cap");
    const std::size_t taps = kh * kw;
    std::set<std::uint16_t> skip_set;
    for (std::uint16_t t : skips) {
        if (t >= taps)
            throw ConfigError("skip of nonexistent tap " + std::to_string(t));
        skip_set.insert(t);
    }
    std::map<std::uint16_t, unsigned> extra;
    for (std::uint16_t t : extra_repeats) {
        if (t >= taps)
            throw ConfigError("repeat of nonexistent tap " + std::to_string(t));
        if (skip_set.count(t))
            throw ConfigError("tap " + std::to_string(t) + " is both skipped and repeated");
        ++extra[t];
    }

    std::vector<std::uint16_t> order;
    order.reserve(taps);
    for (std::size_t t = 0; t < taps; ++t) {
        const auto tap = static_cast<std::uint16_t>(t);
        if (skip_set.count(tap))
            continue;
        const unsigned copies = 1 + (extra.count(tap) ? extra[tap] : 0);
        for (unsigned c = 0; c < copies; ++c)
            order.push_back(tap);
    }

    SegmentPlan plan;
    plan.kh = kh;
    plan.kw = kw;
    plan.act_bits = act_bits;
    for (std::size_t i = 0; i < order.size(); i += segment_len) {
        const std::size_t end = std::min(order.size(), i + segment_len);
        plan.segments.emplace_back(order.begin() + i, order.begin() + end);
    }
    plan.validate();
    return plan;
}

std::vector<std::uint32_t> pack_window(std::span<const std::uint16_t> window,
                                       const SegmentPlan& plan) {
    if (window.size() != plan.taps())
        throw ShapeError("window has " + std::to_string(window.size()) + " activations, plan needs " +
                         std::to_string(plan.taps()));
    std::vector<std::uint32_t> offsets(plan.segments.size(), 0);
    for (std::size_t s = 0; s < plan.segments.size(); ++s) {
        std::uint32_t off = 0;
        const auto& seg = plan.segments[s];
        for (std::size_t k = 0; k < seg.size(); ++k)
            off |= std::uint32_t(window[seg[k]]) << (k * plan.act_bits);
        offsets[s] = off;
    }
    return offsets;
}

std::uint64_t SegmentBank::payload_bytes() const {
    std::uint64_t total = 0;
    for (std::size_t s = 0; s < tables.size(); ++s)
        total += std::uint64_t(tables[s].size()) * entry_bits(kind) / 8;
    return total;
}

SegmentBank build_segment_bank(const Filter& filter, const SegmentPlan& plan, const ConvFn& fn,
                               OpCounters* counters) {
    plan.validate();
    if (filter.kind != WeightKind::IntN || !fn.integer_entries(filter.kind))
        throw ConfigError("offset packing requires integer weights and an integer-valued function");
    if (plan.kh != filter.kh || plan.kw != filter.kw)
        throw ShapeError("plan was compiled for a " + std::to_string(plan.kh) + "x" +
                         std::to_string(plan.kw) + " filter");

    SegmentBank bank;
    bank.plan = plan;
    bank.fn = fn;
    bank.folded = filter.input_weight;
    const unsigned bits = plan.act_bits;
    const std::uint32_t mask = (1u << bits) - 1;
    std::int64_t lo = 0, hi = 0;
    std::uint64_t evals = 0;

    for (const auto& seg : plan.segments) {
        std::vector<std::int64_t> base(seg.size());
        for (std::size_t k = 0; k < seg.size(); ++k)
            base[k] = filter.iweights[seg[k]];

        const std::size_t entries = std::size_t(1) << (seg.size() * bits);
        std::vector<std::int64_t> table(entries);
        for (std::size_t o = 0; o < entries; ++o) {
            std::int64_t sum = 0;
            for (std::size_t k = 0; k < seg.size(); ++k) {
                const auto a = static_cast<std::uint32_t>((o >> (k * bits)) & mask);
                sum += fn.eval_int(base[k], a);
            }
            evals += seg.size();
            if (filter.input_weight != 1)
                sum = checked_mul_i64(sum, filter.input_weight, "segment entry fold");
            table[o] = sum;
            lo = std::min(lo, sum);
            hi = std::max(hi, sum);
        }
        bank.bases.push_back(std::move(base));
        bank.tables.push_back(std::move(table));
    }
    bank.kind = minimal_entry_kind(lo, hi);
    bank.max_abs_entry = std::max(hi, lo == INT64_MIN ? INT64_MAX : -lo);
    bank.build_fn_evals = evals;
    if (counters)
        counters->fn_evals += evals;
    return bank;
}

namespace {

// a run of taps adjacent in one input row, fetched with one bit-field extract
struct ExtractRun {
    std::uint32_t di = 0;      // filter row
    std::uint32_t bit_off = 0; // first column of the run, in bits
    std::uint64_t mask = 0;    // (1 << run length * act_bits) - 1
    std::uint32_t dest_shift = 0;
};

// runs of all segments flattened; seg_start[s] .. seg_start[s+1] belong to s
struct ExtractProgram {
    std::vector<ExtractRun> runs;
    std::vector<std::uint32_t> seg_start;
};

ExtractProgram compile_extracts(const SegmentPlan& plan) {
    ExtractProgram prog;
    const unsigned bits = plan.act_bits;
    for (std::size_t s = 0; s < plan.segments.size(); ++s) {
        prog.seg_start.push_back(static_cast<std::uint32_t>(prog.runs.size()));
        const auto& seg = plan.segments[s];
        std::uint32_t run_first = 0; // segment index where the open run started
        for (std::size_t k = 0; k < seg.size(); ++k) {
            const auto di = static_cast<std::uint32_t>(seg[k] / plan.kw);
            const auto dj = static_cast<std::uint32_t>(seg[k] % plan.kw);
            if (!prog.runs.empty() && prog.seg_start.back() < prog.runs.size()) {
                ExtractRun& last = prog.runs.back();
                const unsigned run_len = static_cast<unsigned>(k - run_first);
                if (last.di == di && dj * bits == last.bit_off + run_len * bits) {
                    last.mask = (last.mask << bits) | ((std::uint64_t(1) << bits) - 1);
                    continue;
                }
            }
            run_first = static_cast<std::uint32_t>(k);
            prog.runs.push_back(ExtractRun{di, dj * bits, (std::uint64_t(1) << bits) - 1,
                                           static_cast<std::uint32_t>(k * bits)});
        }
    }
    prog.seg_start.push_back(static_cast<std::uint32_t>(prog.runs.size()));
    return prog;
}

// row bit stream: value at column c occupies bits [c*bits, (c+1)*bits) of the
// row's bytes; 8 pad bytes let extraction use one unaligned 64-bit load
struct BitRows {
    std::vector<std::uint8_t> bytes;
    std::size_t bytes_per_row = 0;

    const std::uint8_t* row(std::size_t r) const { return bytes.data() + r * bytes_per_row; }
};

BitRows pack_rows(const QTensor& in, unsigned bits) {
    BitRows bs;
    bs.bytes_per_row = (in.cols * bits + 7) / 8 + 8;
    bs.bytes.assign(in.rows * bs.bytes_per_row, 0);
    for (std::size_t r = 0; r < in.rows; ++r) {
        std::uint8_t* row = bs.bytes.data() + r * bs.bytes_per_row;
        for (std::size_t c = 0; c < in.cols; ++c) {
            const std::uint64_t v = in.values[r * in.cols + c];
            const std::size_t bitpos = c * bits;
            std::uint64_t chunk;
            std::memcpy(&chunk, row + (bitpos >> 3), 8);
            chunk |= v << (bitpos & 7);
            std::memcpy(row + (bitpos >> 3), &chunk, 8);
        }
    }
    return bs;
}

inline std::uint32_t extract_bits(const std::uint8_t* row, std::size_t bitpos, std::uint64_t mask) {
    std::uint64_t v;
    std::memcpy(&v, row + (bitpos >> 3), 8);
    return static_cast<std::uint32_t>((v >> (bitpos & 7)) & mask);
}

template <bool Count>
AccTensor packed_core(const QTensor& in, const SegmentPlan& plan,
                      std::span<const std::int64_t* const> tabs, int threads,
                      OpCounters* counters) {
    const ConvGeometry g = ConvGeometry::of(in, plan.kh, plan.kw);
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    AccTensor out = AccTensor::zeros(out_rows, out_cols);
    const unsigned bits = plan.act_bits;
    const std::size_t nseg = plan.segments.size();
    if (nseg == 0)
        return out;

    const BitRows bs = pack_rows(in, bits);
    const ExtractProgram prog = compile_extracts(plan);
    const std::size_t nruns = prog.runs.size();

    // one streaming pass per run builds the whole row's offsets, then one
    // gather pass per segment adds the looked-up entries
    auto row_work = [&](std::size_t y, std::span<const std::uint8_t*> row_base,
                        std::span<std::uint32_t> off_buf, OpCounters& c) {
        for (std::size_t r = 0; r < nruns; ++r)
            row_base[r] = bs.row(y + prog.runs[r].di);
        const ExtractRun* runs = prog.runs.data();
        const std::uint32_t* seg_start = prog.seg_start.data();
        std::int64_t* dst = out.values.data() + y * out_cols;
        for (std::size_t s = 0; s < nseg; ++s) {
            const std::uint32_t rs = seg_start[s];
            const std::uint32_t re = seg_start[s + 1];
            const std::int64_t* tab = tabs[s];
            if (re - rs == 1) {
                const std::uint8_t* base = row_base[rs];
                const std::uint64_t mask = runs[rs].mask;
                std::size_t bitpos = runs[rs].bit_off;
                if (s == 0)
                    for (std::size_t x = 0; x < out_cols; ++x, bitpos += bits)
                        dst[x] = tab[extract_bits(base, bitpos, mask)];
                else
                    for (std::size_t x = 0; x < out_cols; ++x, bitpos += bits)
                        dst[x] += tab[extract_bits(base, bitpos, mask)];
            } else {
                for (std::uint32_t r = rs; r < re; ++r) {
                    const std::uint8_t* base = row_base[r];
                    const std::uint64_t mask = runs[r].mask;
                    const std::uint32_t shift = runs[r].dest_shift;
                    std::size_t bitpos = runs[r].bit_off;
                    if (r == rs)
                        for (std::size_t x = 0; x < out_cols; ++x, bitpos += bits)
                            off_buf[x] = extract_bits(base, bitpos, mask); // first run lands at bit 0
                    else
                        for (std::size_t x = 0; x < out_cols; ++x, bitpos += bits)
                            off_buf[x] |= extract_bits(base, bitpos, mask) << shift;
                }
                if (s == 0)
                    for (std::size_t x = 0; x < out_cols; ++x)
                        dst[x] = tab[off_buf[x]];
                else
                    for (std::size_t x = 0; x < out_cols; ++x)
                        dst[x] += tab[off_buf[x]];
            }
            if constexpr (Count) {
                c.lookups += out_cols;
                if (s > 0)
                    c.adds += out_cols;
            }
        }
    };

    if (threads <= 1) {
        OpCounters local;
        std::vector<const std::uint8_t*> row_base(nruns);
        std::vector<std::uint32_t> off_buf(out_cols);
        for (std::size_t y = 0; y < out_rows; ++y)
            row_work(y, row_base, off_buf, local);
        if (counters)
            *counters += local;
    } else {
#pragma omp parallel num_threads(threads)
        {
            OpCounters local;
            std::vector<const std::uint8_t*> row_base(nruns);
            std::vector<std::uint32_t> off_buf(out_cols);
#pragma omp for schedule(static)
            for (std::int64_t y = 0; y < static_cast<std::int64_t>(out_rows); ++y)
                row_work(static_cast<std::size_t>(y), row_base, off_buf, local);
            if (counters) {
#pragma omp critical(pcilt_counters)
                *counters += local;
            }
        }
    }
    return out;
}

} // namespace

AccTensor packed_conv2d(const QTensor& input, const SegmentBank& bank, int threads,
                        OpCounters* counters) {
    if (input.card.bits() != bank.plan.act_bits)
        throw ShapeError("input cardinality " + std::to_string(input.card.bits()) +
                         "-bit does not match plan cardinality " +
                         std::to_string(bank.plan.act_bits) + "-bit");
    if (bank.tables.size() != bank.plan.segments.size())
        throw ShapeError("bank table count does not match its plan");
    if (bank.max_abs_entry > 0 && !bank.plan.segments.empty() &&
        static_cast<std::uint64_t>(bank.max_abs_entry) >
            (std::uint64_t(1) << 62) / bank.plan.segments.size())
        throw RangeError("bank entries too large to accumulate without overflow");
    std::vector<const std::int64_t*> tabs(bank.tables.size());
    for (std::size_t s = 0; s < bank.tables.size(); ++s)
        tabs[s] = bank.tables[s].data();
    return packed_conv2d_tables(input, bank.plan, tabs, threads, counters);
}

AccTensor packed_conv2d_tables(const QTensor& input, const SegmentPlan& plan,
                               std::span<const std::int64_t* const> tables, int threads,
                               OpCounters* counters) {
    if (input.card.bits() != plan.act_bits)
        throw ShapeError("input cardinality does not match the plan");
    if (tables.size() != plan.segments.size())
        throw ShapeError("need one table per plan segment");
    if (counters)
        return packed_core<true>(input, plan, tables, threads, counters);
    return packed_core<false>(input, plan, tables, threads, nullptr);
}

std::vector<TapWeight> tap_appearances(const SegmentBank& bank) {
    std::vector<TapWeight> taps;
    for (std::size_t s = 0; s < bank.plan.segments.size(); ++s) {
        const auto& seg = bank.plan.segments[s];
        for (std::size_t k = 0; k < seg.size(); ++k)
            taps.push_back(TapWeight{static_cast<std::uint32_t>(seg[k] / bank.plan.kw),
                                     static_cast<std::uint32_t>(seg[k] % bank.plan.kw),
                                     bank.bases[s][k]});
    }
    return taps;
}

PciltBank effective_basic_bank(const SegmentBank& bank) {
    PciltBank basic;
    basic.kh = bank.plan.kh;
    basic.kw = bank.plan.kw;
    basic.fn = bank.fn;
    basic.act_card = Cardinality(bank.plan.act_bits);
    basic.folded = bank.folded;
    const std::uint32_t levels = basic.act_card.levels();
    basic.tables.assign(basic.taps(), Pcilt{});
    for (std::size_t t = 0; t < basic.taps(); ++t) {
        Pcilt& tab = basic.tables[t];
        tab.act_card = basic.act_card;
        tab.ivals.assign(levels, 0);
    }
    for (std::size_t s = 0; s < bank.plan.segments.size(); ++s) {
        const auto& seg = bank.plan.segments[s];
        for (std::size_t k = 0; k < seg.size(); ++k) {
            Pcilt& tab = basic.tables[seg[k]];
            tab.base_i += bank.bases[s][k]; // effective weight, meaningful for product
            for (std::uint32_t a = 0; a < levels; ++a)
                tab.ivals[a] += bank.fn.eval_int(bank.bases[s][k], a);
        }
    }
    std::int64_t lo = 0, hi = 0;
    for (Pcilt& tab : basic.tables) {
        for (std::int64_t& v : tab.ivals) {
            v = checked_mul_i64(v, bank.folded, "effective bank fold");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    basic.kind = minimal_entry_kind(lo, hi);
    for (Pcilt& tab : basic.tables)
        tab.kind = basic.kind;
    basic.max_abs_entry = std::max(hi, lo == INT64_MIN ? INT64_MAX : -lo);
    return basic;
}

SplitBank build_split_bank(const Filter& filter, Cardinality card, unsigned part_bits,
                           const ConvFn& fn, OpCounters* counters) {
    if (fn.fn_kind() != FnKind::Product)
        throw ConfigError("activation splitting is defined for the product function only; '" +
                          fn.id() + "' does not distribute over the parts");
    if (filter.kind != WeightKind::IntN)
        throw ConfigError("activation splitting requires integer weights");
    if (card.bits() < 2)
        throw ConfigError("cannot split a " + std::to_string(card.bits()) + "-bit activation");
    if (part_bits < 1 || part_bits >= card.bits())
        throw ConfigError("split part bits must be in [1, " + std::to_string(card.bits() - 1) + "]");

    SplitBank split;
    split.act_bits = card.bits();
    split.part_bits = part_bits;
    split.lo = build_bank(filter, Cardinality(part_bits), fn, InputWeightMode::Fold, counters);
    PciltBank hi = build_bank(filter, Cardinality(card.bits() - part_bits), fn,
                              InputWeightMode::Fold, counters);
    // high-part entries carry the 2^part_bits place value
    split.hi = fold_input_weight(hi, std::int64_t(1) << part_bits);
    split.hi.folded = hi.folded; // the place value is layout, not an input weight
    return split;
}

namespace {

void check_split_fn(const SplitBank& bank) {
    if (bank.lo.fn.fn_kind() != FnKind::Product)
        throw ConfigError("activation splitting is defined for the product function only");
}

template <bool Count>
AccTensor split_core(const QTensor& in, const SplitBank& bank, int threads, OpCounters* counters) {
    const ConvGeometry g = ConvGeometry::of(in, bank.lo.kh, bank.lo.kw);
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    const std::size_t kh = bank.lo.kh, kw = bank.lo.kw;
    const std::size_t taps = kh * kw;
    AccTensor out = AccTensor::zeros(out_rows, out_cols);
    const std::uint16_t* src = in.values.data();
    const std::size_t stride = in.cols;
    const unsigned p = bank.part_bits;
    const std::uint32_t mask = (1u << p) - 1;

    std::vector<const std::int64_t*> lo_tabs(taps), hi_tabs(taps);
    for (std::size_t t = 0; t < taps; ++t) {
        lo_tabs[t] = bank.lo.tables[t].ivals.data();
        hi_tabs[t] = bank.hi.tables[t].ivals.data();
    }

    auto row_work = [&](std::size_t y, OpCounters& c) {
        std::int64_t* dst = out.values.data() + y * out_cols;
        for (std::size_t x = 0; x < out_cols; ++x) {
            std::int64_t acc = 0;
            std::size_t t = 0;
            for (std::size_t i = 0; i < kh; ++i) {
                const std::uint16_t* row = src + (y + i) * stride + x;
                for (std::size_t j = 0; j < kw; ++j, ++t) {
                    const std::uint16_t a = row[j];
                    acc += lo_tabs[t][a & mask] + hi_tabs[t][a >> p];
                }
            }
            if constexpr (Count) {
                c.lookups += 2 * taps;
                c.adds += 2 * taps - 1;
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

} // namespace

AccTensor split_conv2d(const QTensor& input, const SplitBank& bank, int threads,
                       OpCounters* counters) {
    check_split_fn(bank);
    if (input.card.bits() != bank.act_bits)
        throw ShapeError("input cardinality " + std::to_string(input.card.bits()) +
                         "-bit does not match split bank cardinality " +
                         std::to_string(bank.act_bits) + "-bit");
    if (counters)
        return split_core<true>(input, bank, threads, counters);
    return split_core<false>(input, bank, threads, nullptr);
}

} // namespace pcilt
