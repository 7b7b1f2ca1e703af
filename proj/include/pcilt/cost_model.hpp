#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "pcilt/offset_packing.hpp"
#include "pcilt/reference_conv.hpp"

namespace pcilt {

/// Network shape for memory accounting: a filter per (previous neuron, next
/// neuron) pair across adjacent layers.
struct NetConfig {
    std::vector<std::uint64_t> layer_sizes;
    std::size_t kh = 5;
    std::size_t kw = 5;
    unsigned act_bits = 8;
    unsigned weight_bits = 8;
    unsigned entry_bits = 0; // 0 = auto: 8 * ceil((act_bits + weight_bits) / 8)

    void validate() const;
    unsigned resolved_entry_bits() const;
    std::uint64_t filter_count() const;
};

/// Sum over layer pairs of filters * kh * kw * 2^act_bits * entry bytes.
std::uint64_t pcilt_memory_bytes(const NetConfig& cfg);

/// Table build cost: one fn evaluation per (tap, level).
std::uint64_t build_mults(std::size_t kh, std::size_t kw, unsigned act_bits);
std::uint64_t build_mults(const NetConfig& cfg); // network-wide, per-filter cost times filters

struct InferenceCounts {
    std::uint64_t dm_mults = 0;
    std::uint64_t lookups = 0;
    std::uint64_t adds = 0;
};

/// Per output position: direct multiplication does kh*kw multiplications and
/// kh*kw - 1 additions; the table kernels do kh*kw lookups (or one per
/// segment) and fan_in - 1 additions, zero multiplications. Each level of
/// table indirection adds one dependent access per fetch.
InferenceCounts inference_counts(const ConvGeometry& geom, std::uint64_t samples = 1,
                                 const SegmentPlan* plan = nullptr,
                                 unsigned indirection_levels = 0);

/// Minimal adder-tree depth: smallest d with 2^d >= fan_in.
unsigned adder_tree_depth(std::uint64_t fan_in);

struct SharedCounts {
    std::uint64_t unique_tables = 0;
    std::uint64_t value_growth = 1; // X^(N-1): distinct weight tuples per original base
};

SharedCounts shared_counts(std::uint64_t weight_cardinality, std::size_t act_card_count,
                           unsigned segment_len);

struct CostReport {
    std::uint64_t build_mults = 0;
    std::uint64_t dm_mults = 0;
    std::uint64_t pcilt_lookups = 0;
    std::uint64_t pcilt_adds = 0;
    std::uint64_t memory_bytes = 0;
    unsigned adder_tree_depth = 0;
    std::uint64_t shared_unique_tables = 0;
    std::uint64_t segment_value_growth_factor = 1;

    std::string to_text() const;
    nlohmann::json to_json() const;
};

struct CostInputs {
    NetConfig net;
    std::optional<ConvGeometry> geometry;
    std::uint64_t samples = 1;
    std::optional<unsigned> segment_len;
    std::optional<std::uint64_t> weight_cardinality;
    std::vector<unsigned> act_cardinalities;
};

CostReport cost_report(const CostInputs& inputs);
CostInputs parse_cost_config(const nlohmann::json& cfg);

} // namespace pcilt
