#include "pcilt/shared_pcilt.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace pcilt {

namespace {

struct Candidate {
    std::vector<std::int64_t> base;
    unsigned act_bits = 1;
    const std::vector<std::int64_t>* entries = nullptr;
    EntryKind kind = EntryKind::I64;
    std::size_t consumer = 0;
    std::size_t position = 0; // tap or segment index within the consumer
};

} // namespace

std::uint64_t SharedBank::table_payload_bytes() const {
    std::uint64_t total = 0;
    for (const UniqueTable& t : tables)
        total += std::uint64_t(t.entries.size()) * entry_bits(t.kind) / 8;
    return total;
}

std::uint64_t SharedBank::ref_bytes() const {
    std::uint64_t total = 0;
    for (const Consumer& c : consumers)
        total += std::uint64_t(c.refs.size()) * sizeof(TapRef);
    return total;
}

bool prefix_check(const Pcilt& low, const Pcilt& high) {
    if (low.real() || high.real())
        return false;
    if (low.ivals.size() > high.ivals.size())
        return false;
    return std::equal(low.ivals.begin(), low.ivals.end(), high.ivals.begin());
}

SharedBank dedup(std::span<const PciltBank> banks, std::span<const SegmentBank> segment_banks) {
    if (banks.empty() && segment_banks.empty())
        throw ConfigError("dedup needs at least one bank");

    SharedBank shared;
    std::vector<Candidate> cands;
    bool first = true;
    auto take_meta = [&](const std::string& fn_id, std::int64_t folded) {
        if (first) {
            shared.fn_id = fn_id;
            shared.folded = folded;
            first = false;
            return;
        }
        if (shared.fn_id != fn_id)
            throw ConfigError("cannot share tables across functions '" + shared.fn_id + "' and '" +
                              fn_id + "'");
        if (shared.folded != folded)
            throw ConfigError("cannot share tables across different folded scalars");
    };

    for (std::size_t b = 0; b < banks.size(); ++b) {
        const PciltBank& bank = banks[b];
        if (bank.real())
            throw ConfigError("dedup handles integer banks only");
        take_meta(bank.fn.id(), bank.folded);
        SharedBank::Consumer c;
        c.segmented = false;
        c.kh = bank.kh;
        c.kw = bank.kw;
        c.act_bits = bank.act_card.bits();
        c.ifdr_weight = bank.ifdr_weight;
        c.refs.resize(bank.tables.size());
        shared.consumers.push_back(std::move(c));
        for (std::size_t t = 0; t < bank.tables.size(); ++t)
            cands.push_back(Candidate{{bank.tables[t].base_i},
                                      bank.act_card.bits(),
                                      &bank.tables[t].ivals,
                                      bank.tables[t].kind,
                                      shared.consumers.size() - 1,
                                      t});
    }
    for (std::size_t b = 0; b < segment_banks.size(); ++b) {
        const SegmentBank& bank = segment_banks[b];
        take_meta(bank.fn.id(), bank.folded);
        SharedBank::Consumer c;
        c.segmented = true;
        c.kh = bank.plan.kh;
        c.kw = bank.plan.kw;
        c.act_bits = bank.plan.act_bits;
        c.plan = bank.plan;
        c.refs.resize(bank.tables.size());
        shared.consumers.push_back(std::move(c));
        for (std::size_t s = 0; s < bank.tables.size(); ++s)
            cands.push_back(Candidate{bank.bases[s],
                                      bank.plan.act_bits,
                                      &bank.tables[s],
                                      bank.kind,
                                      shared.consumers.size() - 1,
                                      s});
    }

    // group by weight tuple; within a group, wider tables absorb any
    // narrower table that is their prefix
    std::map<std::vector<std::int64_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < cands.size(); ++i)
        groups[cands[i].base].push_back(i);

    std::set<unsigned> all_cards;
    for (const Candidate& c : cands)
        all_cards.insert(c.act_bits);

    for (auto& [base, members] : groups) {
        std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            return cands[a].entries->size() > cands[b].entries->size();
        });
        // distinct table contents this group actually stores
        std::vector<std::uint32_t> stored; // indices into shared.tables
        std::set<std::pair<std::size_t, bool>> seen_sizes_merged;
        for (std::size_t idx : members) {
            const Candidate& c = cands[idx];
            std::uint32_t table_id = UINT32_MAX;
            bool merged = false;
            for (std::uint32_t s : stored) {
                const SharedBank::UniqueTable& u = shared.tables[s];
                if (u.entries.size() == c.entries->size()) {
                    if (u.entries == *c.entries) {
                        table_id = s;
                        break;
                    }
                } else if (u.entries.size() > c.entries->size() &&
                           std::equal(c.entries->begin(), c.entries->end(), u.entries.begin())) {
                    table_id = s;
                    merged = true;
                    break;
                }
            }
            if (table_id == UINT32_MAX) {
                SharedBank::UniqueTable u;
                u.base = c.base;
                u.act_bits = c.act_bits;
                u.kind = c.kind;
                u.entries = *c.entries;
                shared.tables.push_back(std::move(u));
                table_id = static_cast<std::uint32_t>(shared.tables.size() - 1);
                stored.push_back(table_id);
            }
            if (merged && !seen_sizes_merged.count({c.entries->size(), true})) {
                ++shared.stats.prefix_merges;
                seen_sizes_merged.insert({c.entries->size(), true});
            }
            shared.consumers[c.consumer].refs[c.position] =
                SharedBank::TapRef{table_id, static_cast<std::uint32_t>(c.entries->size())};
        }
    }

    shared.stats.unique_tables = shared.tables.size();
    shared.stats.referenced = cands.size();
    shared.stats.distinct_bases = groups.size();
    shared.stats.distinct_cards = all_cards.size();
    return shared;
}

AccTensor shared_conv2d(const QTensor& input, const SharedBank& shared, std::size_t consumer,
                        int threads, OpCounters* counters) {
    if (consumer >= shared.consumers.size())
        throw ConfigError("consumer index " + std::to_string(consumer) + " out of range");
    const SharedBank::Consumer& c = shared.consumers[consumer];
    if (input.card.bits() != c.act_bits)
        throw ShapeError("input cardinality does not match the shared consumer");
    std::vector<const std::int64_t*> tabs(c.refs.size());
    for (std::size_t i = 0; i < c.refs.size(); ++i) {
        const SharedBank::TapRef& r = c.refs[i];
        if (r.table >= shared.tables.size() || r.view_levels > shared.tables[r.table].entries.size())
            throw ShapeError("shared reference outside its table");
        tabs[i] = shared.tables[r.table].entries.data();
    }
    if (c.segmented)
        return packed_conv2d_tables(input, c.plan, tabs, threads, counters);
    return pcilt_conv2d_tables(input, c.kh, c.kw, tabs, c.ifdr_weight, threads, counters);
}

std::vector<std::int64_t> IndirectBank::reconstruct(std::size_t table) const {
    const std::vector<std::uint32_t>& codes = index_arrays[table_to_array[table]];
    std::vector<std::int64_t> out(codes.size());
    const std::uint32_t top = 1u << (index_bits - 1);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (inline_values && (codes[i] & top))
            out[i] = static_cast<std::int64_t>(codes[i] & (top - 1));
        else
            out[i] = unique_values[codes[i]];
    }
    return out;
}

std::uint64_t IndirectBank::index_bytes() const {
    std::uint64_t bits = 0;
    for (const auto& arr : index_arrays)
        bits += std::uint64_t(arr.size()) * index_bits;
    return (bits + 7) / 8 + std::uint64_t(table_to_array.size()) * 4;
}

std::uint64_t IndirectBank::value_bytes() const {
    return std::uint64_t(unique_values.size()) * 8;
}

IndirectionResult value_indirection(const SharedBank& shared, unsigned index_bits,
                                    bool inline_values) {
    if (index_bits < 1 || index_bits > 31)
        throw ConfigError("index bits must be in [1, 31]");
    IndirectionResult res;
    unsigned value_bits = 8;
    for (const SharedBank::UniqueTable& t : shared.tables)
        value_bits = std::max(value_bits, entry_bits(t.kind));

    res.direct_bytes = shared.table_payload_bytes();

    const std::uint32_t top = 1u << (index_bits - 1);
    auto inlineable = [&](std::int64_t v) {
        return inline_values && index_bits > 1 && v >= 0 && v < static_cast<std::int64_t>(top);
    };

    std::set<std::int64_t> spilled;
    for (const SharedBank::UniqueTable& t : shared.tables)
        for (std::int64_t v : t.entries)
            if (!inlineable(v))
                spilled.insert(v);

    const std::uint64_t slots = inline_values ? top : (std::uint64_t(1) << index_bits);
    IndirectBank bank;
    bank.index_bits = index_bits;
    bank.inline_values = inline_values;
    bank.unique_values.assign(spilled.begin(), spilled.end());

    std::map<std::int64_t, std::uint32_t> slot_of;
    for (std::size_t i = 0; i < bank.unique_values.size(); ++i)
        slot_of[bank.unique_values[i]] = static_cast<std::uint32_t>(i);

    std::map<std::vector<std::uint32_t>, std::uint32_t> array_ids;
    for (const SharedBank::UniqueTable& t : shared.tables) {
        std::vector<std::uint32_t> codes(t.entries.size());
        for (std::size_t i = 0; i < t.entries.size(); ++i) {
            const std::int64_t v = t.entries[i];
            codes[i] = inlineable(v) ? (top | static_cast<std::uint32_t>(v)) : slot_of[v];
        }
        auto [it, inserted] = array_ids.try_emplace(codes, static_cast<std::uint32_t>(bank.index_arrays.size()));
        if (inserted)
            bank.index_arrays.push_back(std::move(codes));
        bank.table_to_array.push_back(it->second);
    }

    res.indirect_bytes = bank.index_bytes() + bank.value_bytes();
    res.feasible = bank.unique_values.size() <= slots && index_bits < value_bits;
    if (res.feasible)
        res.bank = std::move(bank);
    return res;
}

} // namespace pcilt
