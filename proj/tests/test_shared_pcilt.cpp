#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "pcilt/shared_pcilt.hpp"

using namespace pcilt;

namespace {

QTensor random_input(std::mt19937_64& rng, std::size_t rows, std::size_t cols, unsigned bits) {
    const Cardinality card(bits);
    std::vector<std::uint16_t> vals(rows * cols);
    for (auto& v : vals)
        v = static_cast<std::uint16_t>(rng() % card.levels());
    return QTensor::make(rows, cols, card, std::move(vals));
}

PciltBank bank_of(std::vector<std::int32_t> weights, std::size_t kh, std::size_t kw, unsigned bits,
                  const ConvFn& fn = builtin("product")) {
    return build_bank(Filter::ints(kh, kw, 12, std::move(weights)), Cardinality(bits), fn);
}

} // namespace

TEST_CASE("dedup keeps one table per distinct base") {
    const SharedBank shared = dedup(std::vector<PciltBank>{bank_of({3, 3, 5}, 1, 3, 4)});
    CHECK(shared.stats.unique_tables == 2);
    CHECK(shared.stats.referenced == 3);
    CHECK(shared.stats.distinct_bases == 2);
    CHECK(shared.consumers[0].refs[0].table == shared.consumers[0].refs[1].table);
}

TEST_CASE("a narrower table is stored as a prefix view of the wider one") {
    const std::vector<PciltBank> banks = {bank_of({7}, 1, 1, 2), bank_of({7}, 1, 1, 4)};
    const SharedBank shared = dedup(banks);
    CHECK(shared.stats.unique_tables == 1);
    CHECK(shared.tables[0].entries.size() == 16);
    CHECK(shared.stats.prefix_merges == 1);
    // the 2-bit consumer views the first four entries
    const SharedBank::Consumer& low =
        shared.consumers[0].act_bits == 2 ? shared.consumers[0] : shared.consumers[1];
    CHECK(low.refs[0].view_levels == 4);
}

TEST_CASE("all-distinct weights give no savings") {
    const SharedBank shared = dedup(std::vector<PciltBank>{bank_of({1, 2, 3, 4}, 2, 2, 3)});
    CHECK(shared.stats.unique_tables == 4);
}

TEST_CASE("prefix_check compares leading entries") {
    const ConvFn fn = builtin("product");
    CHECK(prefix_check(build_pcilt(3, Cardinality(2), fn), build_pcilt(3, Cardinality(4), fn)));
    CHECK_FALSE(prefix_check(build_pcilt(3, Cardinality(2), fn), build_pcilt(4, Cardinality(2), fn)));
    const Pcilt t = build_pcilt(-9, Cardinality(3), fn);
    CHECK(prefix_check(t, t));
}

TEST_CASE("shared inference is bit-identical to the per-bank kernels, fuzzed") {
    std::mt19937_64 rng(404);
    for (int trial = 0; trial < 25; ++trial) {
        const unsigned n_banks = 2 + rng() % 7; // up to 8 filters
        std::vector<PciltBank> banks;
        std::vector<SegmentBank> seg_banks;
        const unsigned bits = 1 + rng() % 3;
        for (unsigned b = 0; b < n_banks; ++b) {
            const std::size_t kh = 1 + rng() % 3, kw = 1 + rng() % 3;
            std::vector<std::int32_t> w(kh * kw);
            for (auto& x : w)
                x = static_cast<std::int32_t>(rng() % 5) - 2; // few distinct bases
            if (rng() % 3 == 0)
                seg_banks.push_back(build_segment_bank(
                    Filter::ints(kh, kw, 8, std::move(w)),
                    compile_plan(kh, kw, bits, 1 + rng() % 3), builtin("product")));
            else
                banks.push_back(bank_of(std::move(w), kh, kw, bits));
        }
        const SharedBank shared = dedup(banks, seg_banks);
        REQUIRE(shared.consumers.size() == banks.size() + seg_banks.size());

        for (std::size_t c = 0; c < shared.consumers.size(); ++c) {
            const auto& cons = shared.consumers[c];
            const QTensor in = random_input(rng, cons.kh + rng() % 6, cons.kw + rng() % 6, bits);
            const AccTensor via_shared = shared_conv2d(in, shared, c, 1 + trial % 2);
            const AccTensor direct = c < banks.size()
                                         ? pcilt_conv2d(in, banks[c])
                                         : packed_conv2d(in, seg_banks[c - banks.size()]);
            CHECK(via_shared.values == direct.values);
        }

        CHECK(shared.stats.unique_tables >= shared.stats.distinct_bases);
        CHECK(shared.stats.unique_tables <=
              shared.stats.distinct_bases * shared.stats.distinct_cards);
    }
}

TEST_CASE("shared memory never exceeds the input banks") {
    std::mt19937_64 rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<PciltBank> banks;
        std::uint64_t input_bytes = 0;
        const bool force_repeat = trial % 2 == 0;
        for (int b = 0; b < 3; ++b) {
            std::vector<std::int32_t> w(4);
            for (auto& x : w)
                x = force_repeat ? static_cast<std::int32_t>(rng() % 2)
                                 : static_cast<std::int32_t>(rng() % 500) + b * 600;
            banks.push_back(bank_of(std::move(w), 2, 2, 3));
            input_bytes += banks.back().payload_bytes();
        }
        const SharedBank shared = dedup(banks);
        CHECK(shared.table_payload_bytes() <= input_bytes);
        if (shared.stats.referenced == shared.stats.unique_tables)
            CHECK(shared.table_payload_bytes() == input_bytes);
        if (force_repeat)
            CHECK(shared.table_payload_bytes() < input_bytes);
    }
}

TEST_CASE("dedup rejects mixed functions") {
    const std::vector<PciltBank> banks = {bank_of({1}, 1, 1, 2),
                                          bank_of({1}, 1, 1, 2, builtin("log_product"))};
    CHECK_THROWS_AS(dedup(banks), ConfigError);
}

TEST_CASE("value indirection over low-cardinality segment sums") {
    // boolean activations packed in pairs with +-1 weights: few distinct sums
    std::vector<SegmentBank> segs;
    segs.push_back(build_segment_bank(Filter::ints(1, 2, 2, {1, -1}),
                                      compile_plan(1, 2, 1, 2), builtin("product")));
    segs.push_back(build_segment_bank(Filter::ints(1, 2, 2, {-1, 1}),
                                      compile_plan(1, 2, 1, 2), builtin("product")));
    const SharedBank shared = dedup({}, segs);
    const IndirectionResult res = value_indirection(shared, 4);
    REQUIRE(res.feasible);
    CHECK(res.bank.unique_values.size() == 3); // sums enumerate to {-1, 0, 1}
    for (std::size_t t = 0; t < shared.tables.size(); ++t)
        CHECK(res.bank.reconstruct(t) == shared.tables[t].entries);
    // identical-but-reordered tables share nothing at table level, so the
    // index arrays carry the reuse
    CHECK(res.bank.index_arrays.size() <= shared.tables.size());

    // wide weights push the value width up; 8-bit indices then pay off
    std::vector<SegmentBank> wide;
    wide.push_back(build_segment_bank(Filter::ints(1, 2, 10, {300, -300}),
                                      compile_plan(1, 2, 1, 2), builtin("product")));
    const SharedBank wshared = dedup({}, wide);
    const IndirectionResult wres = value_indirection(wshared, 8);
    REQUIRE(wres.feasible);
    CHECK(wres.bank.unique_values.size() == 3);
    CHECK(wres.indirect_bytes == wres.bank.index_bytes() + wres.bank.value_bytes());
}

TEST_CASE("indirection is infeasible when every entry is distinct") {
    std::vector<PciltBank> banks;
    for (int b = 0; b < 4; ++b)
        banks.push_back(bank_of({std::int32_t(101 + 13 * b)}, 1, 1, 8));
    const SharedBank shared = dedup(banks);
    const IndirectionResult res = value_indirection(shared, 8);
    CHECK_FALSE(res.feasible); // 4 * 256 distinct products exceed 2^8 slots
    CHECK(res.indirect_bytes > 0);
    CHECK(res.direct_bytes == shared.table_payload_bytes());
}

TEST_CASE("tiny tables are trivially feasible") {
    const SharedBank shared = dedup(std::vector<PciltBank>{bank_of({0}, 1, 1, 1)});
    const IndirectionResult res = value_indirection(shared, 1);
    REQUIRE(res.feasible);
    CHECK(res.bank.unique_values.size() == 1);
    CHECK(res.bank.reconstruct(0) == std::vector<std::int64_t>{0, 0});
}

TEST_CASE("inline-value codes reconstruct exactly") {
    std::vector<PciltBank> banks = {bank_of({3}, 1, 1, 4), bank_of({-2}, 1, 1, 4)};
    const SharedBank shared = dedup(banks);
    const IndirectionResult res = value_indirection(shared, 6, true);
    REQUIRE(res.feasible);
    // small nonnegative products ride inline; negatives spill to the value array
    CHECK(!res.bank.unique_values.empty());
    for (std::size_t t = 0; t < shared.tables.size(); ++t)
        CHECK(res.bank.reconstruct(t) == shared.tables[t].entries);
}

TEST_CASE("two-level indirection deduplicates identical index arrays") {
    // a grid whose rows 0 and 1 coincide: distinct bases, identical content
    auto grid = std::make_shared<ValueGrid>();
    grid->wdomain = 3;
    grid->levels = 4;
    grid->ivals = {5, 6, 7, 8, 5, 6, 7, 8, 1, 2, 3, 4};
    const ConvFn fn = builtin("table", grid);
    std::vector<PciltBank> banks = {bank_of({0, 2}, 1, 2, 2, fn), bank_of({1, 2}, 1, 2, 2, fn)};
    const SharedBank shared = dedup(banks);
    CHECK(shared.stats.unique_tables == 3); // bases 0 and 1 stay distinct tables
    const IndirectionResult res = value_indirection(shared, 4);
    REQUIRE(res.feasible);
    CHECK(res.bank.index_arrays.size() == 2); // but share one index array
    for (std::size_t t = 0; t < shared.tables.size(); ++t)
        CHECK(res.bank.reconstruct(t) == shared.tables[t].entries);
}
