#pragma once

#include <span>
#include <string>

#include "pcilt/pcilt.hpp"

namespace pcilt {

/// Assignment of filter taps to packed table offsets. Taps are row-major ids
/// into the filter window; a tap may appear in several segments (weighting it
/// beyond the filter range) or in none (skipping it). Within a segment, tap k
/// occupies bits [k*act_bits, (k+1)*act_bits) of the offset, tap 0 lowest.
struct SegmentPlan {
    std::size_t kh = 0;
    std::size_t kw = 0;
    unsigned act_bits = 1;
    std::vector<std::vector<std::uint16_t>> segments;

    std::size_t taps() const noexcept { return kh * kw; }
    unsigned offset_bits(std::size_t s) const {
        return static_cast<unsigned>(segments[s].size()) * act_bits;
    }
    void validate() const;

    std::string to_text() const;
    static SegmentPlan from_text(const std::string& text);
};

// Offsets are capped at 24 bits so no single table exceeds 2^24 entries.
inline constexpr unsigned kMaxOffsetBits = 24;

/// Greedy row-major packing: skipped taps are dropped, repeated taps emitted
/// consecutively with their extra multiplicity, the rest chunked into
/// segments of at most `segment_len` taps. Same inputs, same plan.
SegmentPlan compile_plan(std::size_t kh, std::size_t kw, unsigned act_bits, unsigned segment_len,
                         const std::vector<std::uint16_t>& skips = {},
                         const std::vector<std::uint16_t>& extra_repeats = {});

/// Pack one receptive-field window (kh*kw activations, row-major) into one
/// offset per segment. Shift/mask/or only.
std::vector<std::uint32_t> pack_window(std::span<const std::uint16_t> window, const SegmentPlan& plan);

/// One table per segment; entry at packed offset o is the sum over the
/// segment's taps of fn(w_tap, activation bits of o).
struct SegmentBank {
    SegmentPlan plan;
    ConvFn fn;
    EntryKind kind = EntryKind::I64;
    std::vector<std::vector<std::int64_t>> bases;  // weight tuple per segment
    std::vector<std::vector<std::int64_t>> tables; // 2^offset_bits entries per segment
    std::int64_t folded = 1;
    std::uint64_t build_fn_evals = 0;
    std::int64_t max_abs_entry = 0;

    std::size_t segment_count() const noexcept { return plan.segments.size(); }
    std::uint64_t payload_bytes() const;
};

SegmentBank build_segment_bank(const Filter& filter, const SegmentPlan& plan, const ConvFn& fn,
                               OpCounters* counters = nullptr);

/// Packed lookup convolution: one table read per segment per output position.
/// Input rows are pre-packed into a bit stream so each run of adjacent taps
/// is fetched with a single shift+mask extraction.
AccTensor packed_conv2d(const QTensor& input, const SegmentBank& bank, int threads = 1,
                        OpCounters* counters = nullptr);

/// Packed kernel over raw per-segment table pointers (shared-bank path).
AccTensor packed_conv2d_tables(const QTensor& input, const SegmentPlan& plan,
                               std::span<const std::int64_t* const> tables, int threads = 1,
                               OpCounters* counters = nullptr);

/// Flatten a segment bank into (tap, weight) appearances; repeats show up
/// once per inclusion. This is what the direct reference evaluates.
std::vector<TapWeight> tap_appearances(const SegmentBank& bank);

/// Per-tap bank equivalent to a segment bank: each tap's table is the sum of
/// that tap's appearance tables. Matches packed_conv2d bit for bit.
PciltBank effective_basic_bank(const SegmentBank& bank);

/// Activation splitting: a B-bit activation is looked up as a low part of
/// `part_bits` and a high part of B - part_bits bits, the high table holding
/// fn(w, a_hi) * 2^part_bits. Product only; relies on distributivity.
struct SplitBank {
    unsigned act_bits = 0;
    unsigned part_bits = 0;
    PciltBank lo;
    PciltBank hi;

    std::uint64_t payload_bytes() const { return lo.payload_bytes() + hi.payload_bytes(); }
};

SplitBank build_split_bank(const Filter& filter, Cardinality card, unsigned part_bits,
                           const ConvFn& fn, OpCounters* counters = nullptr);
AccTensor split_conv2d(const QTensor& input, const SplitBank& bank, int threads = 1,
                       OpCounters* counters = nullptr);

} // namespace pcilt
