#pragma once

#include <json.hpp>

#include "pcilt/bank_io.hpp"

namespace pcilt {

struct BenchConfig {
    std::size_t in_rows = 0;
    std::size_t in_cols = 0;
    std::uint64_t samples = 1;
    int threads = 1;
    int reps = 3; // timed repetitions, median reported
    std::uint64_t seed = 1;
};

struct BenchResult {
    std::string kernel;
    int threads = 1;
    double median_ms = 0.0;
    double positions_per_s = 0.0;
    double speedup_vs_dm = 1.0;
    std::uint64_t checksum = 0;
};

/// Time the table kernels of a bank against the scalar direct-multiplication
/// baseline on seeded random inputs. Checksums of every kernel are compared
/// before any timing is reported; a mismatch aborts the run.
std::vector<BenchResult> run_bench(const AnyBank& bank, const BenchConfig& cfg);

/// Timing fields are what vary between machines; "stable" keys everything
/// else so determinism checks can strip them.
nlohmann::json bench_to_json(const BenchConfig& cfg, const std::vector<BenchResult>& results);

} // namespace pcilt
