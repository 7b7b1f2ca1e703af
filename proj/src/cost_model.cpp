#include "pcilt/cost_model.hpp"

#include <sstream>

#include "pcilt/checked.hpp"

namespace pcilt {

void NetConfig::validate() const {
    if (layer_sizes.size() < 2)
        throw ConfigError("memory accounting needs at least two layers");
    for (std::uint64_t n : layer_sizes)
        if (n == 0)
            throw ConfigError("layer sizes must be positive");
    if (kh == 0 || kw == 0)
        throw ConfigError("filter dimensions must be positive");
    if (act_bits < 1 || act_bits > 16)
        throw RangeError("activation bits must be in [1, 16]");
    if (weight_bits < 1 || weight_bits > 16)
        throw RangeError("weight bits must be in [1, 16]");
    if (entry_bits > 64)
        throw RangeError("entry bits must be at most 64");
}

unsigned NetConfig::resolved_entry_bits() const {
    if (entry_bits != 0)
        return entry_bits;
    return 8 * ((act_bits + weight_bits + 7) / 8);
}

std::uint64_t NetConfig::filter_count() const {
    std::uint64_t total = 0;
    for (std::size_t l = 1; l < layer_sizes.size(); ++l)
        total = checked_add_u64(
            total, checked_mul_u64(layer_sizes[l - 1], layer_sizes[l], "filter count"),
            "filter count");
    return total;
}

std::uint64_t pcilt_memory_bytes(const NetConfig& cfg) {
    cfg.validate();
    const std::uint64_t entries_per_filter =
        checked_mul_u64(cfg.kh * cfg.kw, std::uint64_t(1) << cfg.act_bits, "table entries");
    const std::uint64_t entries =
        checked_mul_u64(cfg.filter_count(), entries_per_filter, "table entries");
    const std::uint64_t bits =
        checked_mul_u64(entries, cfg.resolved_entry_bits(), "table bits");
    return (bits + 7) / 8;
}

std::uint64_t build_mults(std::size_t kh, std::size_t kw, unsigned act_bits) {
    return checked_mul_u64(std::uint64_t(kh) * kw, std::uint64_t(1) << act_bits, "build mults");
}

std::uint64_t build_mults(const NetConfig& cfg) {
    cfg.validate();
    return checked_mul_u64(cfg.filter_count(), build_mults(cfg.kh, cfg.kw, cfg.act_bits),
                           "build mults");
}

InferenceCounts inference_counts(const ConvGeometry& geom, std::uint64_t samples,
                                 const SegmentPlan* plan, unsigned indirection_levels) {
    const std::uint64_t positions =
        checked_mul_u64(checked_mul_u64(geom.out_rows(), geom.out_cols(), "positions"), samples,
                        "positions");
    InferenceCounts c;
    c.dm_mults = checked_mul_below_2_63(positions, geom.taps(), "dm mults");
    const std::uint64_t fan_in = plan ? plan->segments.size() : geom.taps();
    c.lookups = checked_mul_u64(positions, fan_in * (1 + std::uint64_t(indirection_levels)),
                                "lookups");
    c.adds = fan_in == 0 ? 0 : checked_mul_u64(positions, fan_in - 1, "adds");
    return c;
}

unsigned adder_tree_depth(std::uint64_t fan_in) {
    if (fan_in == 0)
        throw ConfigError("adder tree fan-in must be at least 1");
    unsigned d = 0;
    while ((std::uint64_t(1) << d) < fan_in)
        ++d;
    return d;
}

SharedCounts shared_counts(std::uint64_t weight_cardinality, std::size_t act_card_count,
                           unsigned segment_len) {
    if (weight_cardinality < 1)
        throw ConfigError("weight cardinality must be at least 1");
    if (segment_len < 1)
        throw ConfigError("segment length must be at least 1");
    SharedCounts c;
    c.unique_tables =
        checked_mul_u64(weight_cardinality, act_card_count, "unique tables");
    c.value_growth = 1;
    for (unsigned i = 1; i < segment_len; ++i)
        c.value_growth = checked_mul_u64(c.value_growth, weight_cardinality, "value growth");
    return c;
}

std::string CostReport::to_text() const {
    std::ostringstream os;
    os << "build_mults: " << build_mults << "\n";
    os << "dm_mults: " << dm_mults << "\n";
    os << "pcilt_lookups: " << pcilt_lookups << "\n";
    os << "pcilt_adds: " << pcilt_adds << "\n";
    os << "memory_bytes: " << memory_bytes << "\n";
    os << "adder_tree_depth: " << adder_tree_depth << "\n";
    os << "shared_unique_tables: " << shared_unique_tables << "\n";
    os << "segment_value_growth_factor: " << segment_value_growth_factor << "\n";
    return os.str();
}

nlohmann::json CostReport::to_json() const {
    return nlohmann::json{{"build_mults", build_mults},
                          {"dm_mults", dm_mults},
                          {"pcilt_lookups", pcilt_lookups},
                          {"pcilt_adds", pcilt_adds},
                          {"memory_bytes", memory_bytes},
                          {"adder_tree_depth", adder_tree_depth},
                          {"shared_unique_tables", shared_unique_tables},
                          {"segment_value_growth_factor", segment_value_growth_factor}};
}

CostReport cost_report(const CostInputs& inputs) {
    inputs.net.validate();
    CostReport r;
    r.memory_bytes = pcilt_memory_bytes(inputs.net);
    r.build_mults = build_mults(inputs.net.kh, inputs.net.kw, inputs.net.act_bits);

    std::optional<SegmentPlan> plan;
    if (inputs.segment_len) {
        plan = compile_plan(inputs.net.kh, inputs.net.kw, inputs.net.act_bits, *inputs.segment_len);
        r.adder_tree_depth = adder_tree_depth(plan->segments.size());
    } else {
        r.adder_tree_depth = adder_tree_depth(inputs.net.kh * inputs.net.kw);
    }

    if (inputs.geometry) {
        const InferenceCounts c =
            inference_counts(*inputs.geometry, inputs.samples, plan ? &*plan : nullptr);
        r.dm_mults = c.dm_mults;
        r.pcilt_lookups = c.lookups;
        r.pcilt_adds = c.adds;
    }

    if (inputs.weight_cardinality) {
        const std::size_t cards =
            inputs.act_cardinalities.empty() ? 1 : inputs.act_cardinalities.size();
        const SharedCounts sc =
            shared_counts(*inputs.weight_cardinality, cards, inputs.segment_len.value_or(1));
        r.shared_unique_tables = sc.unique_tables;
        r.segment_value_growth_factor = sc.value_growth;
    }
    return r;
}

CostInputs parse_cost_config(const nlohmann::json& cfg) {
    CostInputs in;
    if (!cfg.is_object())
        throw ConfigError("cost config must be a JSON object");
    if (!cfg.contains("layers") || !cfg["layers"].is_array() || cfg["layers"].empty())
        throw ConfigError("cost config needs a non-empty 'layers' array");
    for (const auto& v : cfg["layers"])
        in.net.layer_sizes.push_back(v.get<std::uint64_t>());
    if (cfg.contains("filter")) {
        const auto& f = cfg["filter"];
        if (!f.is_array() || f.size() != 2)
            throw ConfigError("'filter' must be [kh, kw]");
        in.net.kh = f[0].get<std::size_t>();
        in.net.kw = f[1].get<std::size_t>();
    }
    if (cfg.contains("act_bits"))
        in.net.act_bits = cfg["act_bits"].get<unsigned>();
    if (cfg.contains("weight_bits"))
        in.net.weight_bits = cfg["weight_bits"].get<unsigned>();
    if (cfg.contains("entry_bits"))
        in.net.entry_bits = cfg["entry_bits"].get<unsigned>();
    else if (cfg.contains("entry_bytes")) {
        const auto& e = cfg["entry_bytes"];
        if (e.is_string()) {
            if (e.get<std::string>() != "auto")
                throw ConfigError("'entry_bytes' must be a number or \"auto\"");
        } else {
            const double bytes = e.get<double>();
            const double bits = bytes * 8.0;
            if (bits < 1 || bits > 64 || bits != static_cast<double>(static_cast<unsigned>(bits)))
                throw ConfigError("'entry_bytes' must resolve to a whole number of bits");
            in.net.entry_bits = static_cast<unsigned>(bits);
        }
    }
    if (cfg.contains("input_size")) {
        const auto& s = cfg["input_size"];
        if (!s.is_array() || s.size() != 2)
            throw ConfigError("'input_size' must be [rows, cols]");
        in.geometry = ConvGeometry::make(s[0].get<std::size_t>(), s[1].get<std::size_t>(),
                                         in.net.kh, in.net.kw);
    }
    if (cfg.contains("samples"))
        in.samples = cfg["samples"].get<std::uint64_t>();
    if (cfg.contains("segment_len"))
        in.segment_len = cfg["segment_len"].get<unsigned>();
    if (cfg.contains("weight_cardinality"))
        in.weight_cardinality = cfg["weight_cardinality"].get<std::uint64_t>();
    if (cfg.contains("act_cardinalities"))
        for (const auto& v : cfg["act_cardinalities"])
            in.act_cardinalities.push_back(v.get<unsigned>());
    in.net.validate();
    return in;
}

} // namespace pcilt
