#pragma once

#include "pcilt/offset_packing.hpp"
#include "pcilt/pcilt.hpp"

namespace pcilt {

/// Deduplicated table store. One table per distinct weight tuple; a tuple used
/// at several cardinalities keeps only the widest table when the narrower one
/// is its prefix, and narrower users view a prefix of it.
struct SharedBank {
    struct UniqueTable {
        std::vector<std::int64_t> base; // weight tuple (length 1 for per-tap tables)
        unsigned act_bits = 1;
        EntryKind kind = EntryKind::I64;
        std::vector<std::int64_t> entries;
    };
    struct TapRef {
        std::uint32_t table = 0;
        std::uint32_t view_levels = 0; // entries visible to this consumer
    };
    /// One input bank, re-expressed as references into the unique tables.
    struct Consumer {
        bool segmented = false;
        std::size_t kh = 0;
        std::size_t kw = 0;
        unsigned act_bits = 1;
        SegmentPlan plan;            // segmented only
        std::vector<TapRef> refs;    // per tap (basic) or per segment
        std::int64_t ifdr_weight = 1;
    };
    struct Stats {
        std::size_t unique_tables = 0;
        std::size_t referenced = 0;
        std::size_t prefix_merges = 0;
        std::size_t distinct_bases = 0;
        std::size_t distinct_cards = 0;
    };

    std::string fn_id;
    std::int64_t folded = 1;
    std::vector<UniqueTable> tables;
    std::vector<Consumer> consumers;
    Stats stats;

    std::uint64_t table_payload_bytes() const;
    std::uint64_t ref_bytes() const;
};

/// Deduplicate integer banks sharing one fn and one folded scalar. Inference
/// through the result is bit-identical to the per-bank kernels.
SharedBank dedup(std::span<const PciltBank> banks, std::span<const SegmentBank> segment_banks = {});

/// True iff the narrower table equals the leading entries of the wider one.
bool prefix_check(const Pcilt& low, const Pcilt& high);

AccTensor shared_conv2d(const QTensor& input, const SharedBank& shared, std::size_t consumer,
                        int threads = 1, OpCounters* counters = nullptr);

/// Narrow per-table index arrays into a deduplicated array of unique entry
/// values. Identical index arrays are stored once (two-level indirection).
/// With `inline_values`, a code with the top bit set carries the entry value
/// itself in the remaining index_bits - 1 bits.
struct IndirectBank {
    unsigned index_bits = 0;
    bool inline_values = false;
    std::vector<std::int64_t> unique_values;
    std::vector<std::vector<std::uint32_t>> index_arrays; // deduplicated
    std::vector<std::uint32_t> table_to_array;

    std::vector<std::int64_t> reconstruct(std::size_t table) const;
    std::uint64_t index_bytes() const;
    std::uint64_t value_bytes() const;
};

/// Infeasibility is a value, not an error: both byte totals are reported so
/// the caller can compare the representations.
struct IndirectionResult {
    bool feasible = false;
    IndirectBank bank;
    std::uint64_t indirect_bytes = 0;
    std::uint64_t direct_bytes = 0;
};

IndirectionResult value_indirection(const SharedBank& shared, unsigned index_bits,
                                    bool inline_values = false);

} // namespace pcilt
