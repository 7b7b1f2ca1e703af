#include "pcilt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <random>

namespace pcilt {

namespace {

struct Kernel {
    std::string id;
    int threads = 1;
    std::function<AccTensor(const QTensor&)> run;
};

struct BenchSetup {
    unsigned act_bits = 0;
    std::vector<Kernel> kernels; // kernels[0] is the scalar dm baseline
};

BenchSetup plan_bench(const AnyBank& any, int threads) {
    BenchSetup setup;

    if (const auto* basic = std::get_if<PciltBank>(&any)) {
        if (basic->real())
            throw ConfigError("bench covers the integer kernels");
        setup.act_bits = basic->act_card.bits();
        std::vector<TapWeight> taps(basic->taps());
        for (std::size_t t = 0; t < basic->taps(); ++t)
            taps[t] = TapWeight{static_cast<std::uint32_t>(t / basic->kw),
                                static_cast<std::uint32_t>(t % basic->kw),
                                basic->tables[t].base_i};
        const std::int64_t iw = basic->folded * basic->ifdr_weight;
        const ConvFn fn = basic->fn;
        const std::size_t kh = basic->kh, kw = basic->kw;
        setup.kernels.push_back(Kernel{"dm", 1, [taps, fn, iw, kh, kw](const QTensor& in) {
                                           return dm_conv2d_taps(in, kh, kw, taps, fn, iw, 1);
                                       }});
        if (threads > 1)
            setup.kernels.push_back(Kernel{"dm_omp", threads,
                                           [taps, fn, iw, kh, kw, threads](const QTensor& in) {
                                               return dm_conv2d_taps(in, kh, kw, taps, fn, iw, threads);
                                           }});
        setup.kernels.push_back(Kernel{"pcilt", 1, [basic](const QTensor& in) {
                                           return pcilt_conv2d(in, *basic, 1);
                                       }});
        if (threads > 1)
            setup.kernels.push_back(Kernel{"pcilt_omp", threads, [basic, threads](const QTensor& in) {
                                               return pcilt_conv2d(in, *basic, threads);
                                           }});
        return setup;
    }

    if (const auto* seg = std::get_if<SegmentBank>(&any)) {
        setup.act_bits = seg->plan.act_bits;
        const std::vector<TapWeight> taps = tap_appearances(*seg);
        const std::int64_t iw = seg->folded;
        const ConvFn fn = seg->fn;
        const std::size_t kh = seg->plan.kh, kw = seg->plan.kw;
        auto basic = std::make_shared<PciltBank>(effective_basic_bank(*seg));
        setup.kernels.push_back(Kernel{"dm", 1, [taps, fn, iw, kh, kw](const QTensor& in) {
                                           return dm_conv2d_taps(in, kh, kw, taps, fn, iw, 1);
                                       }});
        if (threads > 1)
            setup.kernels.push_back(Kernel{"dm_omp", threads,
                                           [taps, fn, iw, kh, kw, threads](const QTensor& in) {
                                               return dm_conv2d_taps(in, kh, kw, taps, fn, iw, threads);
                                           }});
        setup.kernels.push_back(Kernel{"pcilt", 1, [basic](const QTensor& in) {
                                           return pcilt_conv2d(in, *basic, 1);
                                       }});
        setup.kernels.push_back(Kernel{"packed", 1, [seg](const QTensor& in) {
                                           return packed_conv2d(in, *seg, 1);
                                       }});
        if (threads > 1)
            setup.kernels.push_back(Kernel{"packed_omp", threads, [seg, threads](const QTensor& in) {
                                               return packed_conv2d(in, *seg, threads);
                                           }});
        return setup;
    }

    if (const auto* split = std::get_if<SplitBank>(&any)) {
        setup.act_bits = split->act_bits;
        const std::size_t kh = split->lo.kh, kw = split->lo.kw;
        std::vector<TapWeight> taps(kh * kw);
        for (std::size_t t = 0; t < taps.size(); ++t)
            taps[t] = TapWeight{static_cast<std::uint32_t>(t / kw),
                                static_cast<std::uint32_t>(t % kw), split->lo.tables[t].base_i};
        const std::int64_t iw = split->lo.folded;
        const ConvFn fn = split->lo.fn;
        setup.kernels.push_back(Kernel{"dm", 1, [taps, fn, iw, kh, kw](const QTensor& in) {
                                           return dm_conv2d_taps(in, kh, kw, taps, fn, iw, 1);
                                       }});
        if (threads > 1)
            setup.kernels.push_back(Kernel{"dm_omp", threads,
                                           [taps, fn, iw, kh, kw, threads](const QTensor& in) {
                                               return dm_conv2d_taps(in, kh, kw, taps, fn, iw, threads);
                                           }});
        setup.kernels.push_back(Kernel{"split", 1, [split](const QTensor& in) {
                                           return split_conv2d(in, *split, 1);
                                       }});
        if (threads > 1)
            setup.kernels.push_back(Kernel{"split_omp", threads, [split, threads](const QTensor& in) {
                                               return split_conv2d(in, *split, threads);
                                           }});
        return setup;
    }

    throw ConfigError("bench supports basic, segment and split banks; got " +
                      std::string(bank_kind_name(bank_kind(any))));
}

std::uint64_t tensor_checksum(const AccTensor& t, std::uint64_t h) {
    return fnv1a64(t.values.data(), t.values.size() * sizeof(std::int64_t), h);
}

} // namespace

std::vector<BenchResult> run_bench(const AnyBank& bank, const BenchConfig& cfg) {
    if (cfg.in_rows == 0 || cfg.in_cols == 0 || cfg.samples == 0)
        throw ConfigError("bench needs a positive input size and sample count");
    BenchSetup setup = plan_bench(bank, cfg.threads);

    // a few distinct inputs cycled over the sample count keep memory bounded
    const std::size_t unique = static_cast<std::size_t>(std::min<std::uint64_t>(cfg.samples, 4));
    std::mt19937_64 rng(cfg.seed);
    const Cardinality card(setup.act_bits);
    std::vector<QTensor> inputs;
    inputs.reserve(unique);
    for (std::size_t i = 0; i < unique; ++i) {
        std::vector<std::uint16_t> vals(cfg.in_rows * cfg.in_cols);
        for (auto& v : vals)
            v = static_cast<std::uint16_t>(rng() % card.levels());
        inputs.push_back(QTensor::make(cfg.in_rows, cfg.in_cols, card, std::move(vals)));
    }

    // correctness gates speed: every kernel must agree before anything is timed
    std::vector<std::uint64_t> checks(setup.kernels.size(), 0xcbf29ce484222325ull);
    std::size_t out_rows = 0, out_cols = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t k = 0; k < setup.kernels.size(); ++k) {
            const AccTensor out = setup.kernels[k].run(inputs[i]);
            out_rows = out.rows;
            out_cols = out.cols;
            checks[k] = tensor_checksum(out, checks[k]);
        }
    for (std::size_t k = 1; k < setup.kernels.size(); ++k)
        if (checks[k] != checks[0])
            throw VerifyError("checksum mismatch: kernel '" + setup.kernels[k].id +
                              "' disagrees with the dm baseline; benchmark aborted");

    std::vector<BenchResult> results;
    double dm_median = 0.0;
    for (std::size_t k = 0; k < setup.kernels.size(); ++k) {
        const Kernel& kern = setup.kernels[k];
        auto run_cycle = [&]() {
            for (std::uint64_t s = 0; s < cfg.samples; ++s) {
                const AccTensor out = kern.run(inputs[s % unique]);
                (void)out;
            }
        };
        run_cycle(); // warmup
        std::vector<double> times;
        const int reps = std::max(cfg.reps, 3);
        for (int rep = 0; rep < reps; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            run_cycle();
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        const double median = times[times.size() / 2];

        BenchResult r;
        r.kernel = kern.id;
        r.threads = kern.threads;
        r.median_ms = median;
        const double total_positions =
            static_cast<double>(out_rows * out_cols) * static_cast<double>(cfg.samples);
        r.positions_per_s = median > 0.0 ? total_positions / (median / 1000.0) : 0.0;
        if (k == 0)
            dm_median = median;
        r.speedup_vs_dm = median > 0.0 ? dm_median / median : 0.0;
        r.checksum = checks[k];
        results.push_back(std::move(r));
    }
    return results;
}

nlohmann::json bench_to_json(const BenchConfig& cfg, const std::vector<BenchResult>& results) {
    nlohmann::json stable = {{"input_rows", cfg.in_rows},
                             {"input_cols", cfg.in_cols},
                             {"samples", cfg.samples},
                             {"seed", cfg.seed},
                             {"checksums_equal", true}};
    nlohmann::json kernels = nlohmann::json::array();
    for (const BenchResult& r : results) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(r.checksum));
        kernels.push_back({{"kernel", r.kernel},
                           {"threads", r.threads},
                           {"checksum", buf},
                           {"median_ms", r.median_ms},
                           {"positions_per_s", r.positions_per_s},
                           {"speedup_vs_dm", r.speedup_vs_dm}});
    }
    return nlohmann::json{{"stable", stable}, {"kernels", kernels}};
}

} // namespace pcilt
