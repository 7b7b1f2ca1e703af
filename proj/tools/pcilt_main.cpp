#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcilt/bank_io.hpp"
#include "pcilt/bench.hpp"
#include "pcilt/cost_model.hpp"
#include "pcilt/qtf_io.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitConfig = 2;

struct GlobalOpts {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string json_path;
};

void write_json(const std::string& path, const json& j) {
    if (path.empty())
        return;
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw pcilt::Error("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos)
        throw pcilt::ConfigError("size must look like 1024x768, got '" + s + "'");
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
}

// ---------------------------------------------------------------- build ----

struct BuildOpts {
    std::string filter_path;
    unsigned act_bits = 8;
    std::string fn_id = "product";
    std::string grid_path;
    std::int64_t input_weight = 1;
    bool ifdr_multiply = false;
    unsigned segment_len = 0;
    std::vector<unsigned> skips;
    std::vector<unsigned> repeats;
    unsigned split_bits = 0;
    std::string out_path;
};

int cmd_build(const GlobalOpts&, const BuildOpts& opt) {
    using namespace pcilt;
    Filter filter = load_filter_qtf(opt.filter_path);
    if (filter.kind == WeightKind::IntN)
        filter.input_weight = opt.input_weight;
    else
        filter.input_weight_real = static_cast<double>(opt.input_weight);

    std::shared_ptr<const ValueGrid> grid;
    if (!opt.grid_path.empty())
        grid = std::make_shared<ValueGrid>(load_grid_qtf(opt.grid_path));
    const ConvFn fn = builtin(opt.fn_id, grid);
    const Cardinality card(opt.act_bits);

    if (opt.segment_len > 0 && opt.split_bits > 0)
        throw ConfigError("--segment-len and --split are mutually exclusive");

    OpCounters counters;
    AnyBank bank = [&]() -> AnyBank {
        if (opt.segment_len > 0) {
            std::vector<std::uint16_t> skips(opt.skips.begin(), opt.skips.end());
            std::vector<std::uint16_t> repeats(opt.repeats.begin(), opt.repeats.end());
            const SegmentPlan plan =
                compile_plan(filter.kh, filter.kw, opt.act_bits, opt.segment_len, skips, repeats);
            return build_segment_bank(filter, plan, fn, &counters);
        }
        if (!opt.skips.empty() || !opt.repeats.empty())
            throw ConfigError("--skip/--repeat need --segment-len");
        if (opt.split_bits > 0)
            return build_split_bank(filter, card, opt.split_bits, fn, &counters);
        return build_bank(filter, card, fn,
                          opt.ifdr_multiply ? InputWeightMode::Multiply : InputWeightMode::Fold,
                          &counters);
    }();

    save_bank(bank, opt.out_path);
    std::cout << "build multiplications: " << counters.fn_evals << "\n";
    std::cout << "bank kind: " << bank_kind_name(bank_kind(bank)) << " -> " << opt.out_path << "\n";
    return kExitOk;
}

// --------------------------------------------------------------- verify ----

struct VerifyOpts {
    std::string bank_path;
    std::uint64_t seeds = 100;
    std::size_t max_hw = 16;
};

struct VerifyKernel {
    std::size_t kh = 0, kw = 0;
    unsigned act_bits = 0;
    std::vector<pcilt::TapWeight> ref_taps;
    pcilt::ConvFn ref_fn;
    std::int64_t ref_input_weight = 1;
    std::function<pcilt::AccTensor(const pcilt::QTensor&, int)> run;
    std::string name;
};

std::vector<VerifyKernel> verify_kernels(const pcilt::AnyBank& any) {
    using namespace pcilt;
    std::vector<VerifyKernel> kernels;

    if (const auto* basic = std::get_if<PciltBank>(&any)) {
        if (basic->real())
            throw ConfigError("verify covers the integer kernels");
        VerifyKernel k;
        k.kh = basic->kh;
        k.kw = basic->kw;
        k.act_bits = basic->act_card.bits();
        for (std::size_t t = 0; t < basic->taps(); ++t)
            k.ref_taps.push_back(TapWeight{static_cast<std::uint32_t>(t / basic->kw),
                                           static_cast<std::uint32_t>(t % basic->kw),
                                           basic->tables[t].base_i});
        k.ref_fn = basic->fn;
        k.ref_input_weight = basic->folded * basic->ifdr_weight;
        k.run = [basic](const QTensor& in, int threads) { return pcilt_conv2d(in, *basic, threads); };
        k.name = "pcilt";
        kernels.push_back(std::move(k));
    } else if (const auto* seg = std::get_if<SegmentBank>(&any)) {
        VerifyKernel k;
        k.kh = seg->plan.kh;
        k.kw = seg->plan.kw;
        k.act_bits = seg->plan.act_bits;
        k.ref_taps = tap_appearances(*seg);
        k.ref_fn = seg->fn;
        k.ref_input_weight = seg->folded;
        k.run = [seg](const QTensor& in, int threads) { return packed_conv2d(in, *seg, threads); };
        k.name = "packed";
        kernels.push_back(std::move(k));
    } else if (const auto* split = std::get_if<SplitBank>(&any)) {
        VerifyKernel k;
        k.kh = split->lo.kh;
        k.kw = split->lo.kw;
        k.act_bits = split->act_bits;
        for (std::size_t t = 0; t < split->lo.taps(); ++t)
            k.ref_taps.push_back(TapWeight{static_cast<std::uint32_t>(t / k.kw),
                                           static_cast<std::uint32_t>(t % k.kw),
                                           split->lo.tables[t].base_i});
        k.ref_fn = split->lo.fn;
        k.ref_input_weight = split->lo.folded;
        k.run = [split](const QTensor& in, int threads) { return split_conv2d(in, *split, threads); };
        k.name = "split";
        kernels.push_back(std::move(k));
    } else if (const auto* shared = std::get_if<SharedBank>(&any)) {
        if (shared->fn_id == "table")
            throw ConfigError("shared banks do not carry table-fn grids; verify the source banks");
        const ConvFn fn = builtin(shared->fn_id);
        for (std::size_t c = 0; c < shared->consumers.size(); ++c) {
            const SharedBank::Consumer& cons = shared->consumers[c];
            VerifyKernel k;
            k.kh = cons.kh;
            k.kw = cons.kw;
            k.act_bits = cons.act_bits;
            k.ref_fn = fn;
            if (cons.segmented) {
                for (std::size_t s = 0; s < cons.plan.segments.size(); ++s) {
                    const auto& base = shared->tables[cons.refs[s].table].base;
                    const auto& segtaps = cons.plan.segments[s];
                    for (std::size_t i = 0; i < segtaps.size(); ++i)
                        k.ref_taps.push_back(
                            TapWeight{static_cast<std::uint32_t>(segtaps[i] / cons.kw),
                                      static_cast<std::uint32_t>(segtaps[i] % cons.kw), base[i]});
                }
                k.ref_input_weight = shared->folded;
            } else {
                for (std::size_t t = 0; t < cons.refs.size(); ++t)
                    k.ref_taps.push_back(TapWeight{static_cast<std::uint32_t>(t / cons.kw),
                                                   static_cast<std::uint32_t>(t % cons.kw),
                                                   shared->tables[cons.refs[t].table].base[0]});
                k.ref_input_weight = shared->folded * cons.ifdr_weight;
            }
            k.run = [shared, c](const QTensor& in, int threads) {
                return shared_conv2d(in, *shared, c, threads);
            };
            k.name = "shared[" + std::to_string(c) + "]";
            kernels.push_back(std::move(k));
        }
    } else {
        throw ConfigError("verify supports basic, segment, split and shared banks");
    }
    return kernels;
}

int cmd_verify(const GlobalOpts& g, const VerifyOpts& opt) {
    using namespace pcilt;
    const AnyBank bank = load_bank(opt.bank_path);
    const std::vector<VerifyKernel> kernels = verify_kernels(bank);

    if (opt.seeds == 0)
        std::cout << "warning: 0 seeds requested; pass is vacuous\n";

    std::uint64_t mismatches = 0;
    std::uint64_t trials = 0;
    for (std::uint64_t s = 0; s < opt.seeds; ++s) {
        std::mt19937_64 rng(g.seed + s);
        for (const VerifyKernel& k : kernels) {
            const std::size_t max_h = std::max(k.kh, opt.max_hw);
            const std::size_t max_w = std::max(k.kw, opt.max_hw);
            const std::size_t H = k.kh + rng() % (max_h - k.kh + 1);
            const std::size_t W = k.kw + rng() % (max_w - k.kw + 1);
            const Cardinality card(k.act_bits);
            std::vector<std::uint16_t> vals(H * W);
            for (auto& v : vals)
                v = static_cast<std::uint16_t>(rng() % card.levels());
            const QTensor input = QTensor::make(H, W, card, std::move(vals));

            const AccTensor got = k.run(input, g.threads);
            const AccTensor want =
                dm_conv2d_taps(input, k.kh, k.kw, k.ref_taps, k.ref_fn, k.ref_input_weight, 1);
            ++trials;
            for (std::size_t i = 0; i < want.values.size(); ++i) {
                if (got.values[i] != want.values[i]) {
                    ++mismatches;
                    std::cout << "mismatch: seed=" << g.seed + s << " kernel=" << k.name
                              << " position=(" << i / want.cols << "," << i % want.cols
                              << ") expected=" << want.values[i] << " got=" << got.values[i]
                              << "\n";
                    break;
                }
            }
        }
    }
    std::cout << "verify: " << (trials - mismatches) << "/" << trials << " trials ok\n";
    write_json(g.json_path, json{{"bank", opt.bank_path},
                                 {"seeds", opt.seeds},
                                 {"trials", trials},
                                 {"mismatches", mismatches}});
    return mismatches == 0 ? kExitOk : kExitVerifyFail;
}

// ---------------------------------------------------------------- bench ----

struct BenchOpts {
    std::string bank_path;
    std::string input_size = "256x256";
    std::uint64_t samples = 4;
    int reps = 3;
};

int cmd_bench(const GlobalOpts& g, const BenchOpts& opt) {
    using namespace pcilt;
#ifndef NDEBUG
    std::cout << "warning: benchmarking a non-release build\n";
#endif
    const AnyBank bank = load_bank(opt.bank_path);
    BenchConfig cfg;
    const auto [rows, cols] = parse_size(opt.input_size);
    cfg.in_rows = rows;
    cfg.in_cols = cols;
    cfg.samples = opt.samples;
    cfg.threads = g.threads;
    cfg.reps = opt.reps;
    cfg.seed = g.seed;

    const std::vector<BenchResult> results = run_bench(bank, cfg);
    for (const BenchResult& r : results) {
        std::printf("kernel=%-10s threads=%-2d median_ms=%10.3f positions/s=%12.0f speedup=%6.2f "
                    "checksum=0x%016llx\n",
                    r.kernel.c_str(), r.threads, r.median_ms, r.positions_per_s, r.speedup_vs_dm,
                    static_cast<unsigned long long>(r.checksum));
    }
    write_json(g.json_path, bench_to_json(cfg, results));
    return kExitOk;
}

// ----------------------------------------------------------------- cost ----

struct CostOpts {
    std::string config_path;
};

int cmd_cost(const GlobalOpts& g, const CostOpts& opt) {
    using namespace pcilt;
    std::ifstream in(opt.config_path);
    if (!in)
        throw Error("cannot open '" + opt.config_path + "' for reading");
    json cfg;
    try {
        in >> cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    const CostInputs inputs = parse_cost_config(cfg);
    const CostReport report = cost_report(inputs);
    std::cout << report.to_text();
    write_json(g.json_path, json{{"config", cfg}, {"report", report.to_json()}});
    return kExitOk;
}

// ---------------------------------------------------------------- train ----

struct TrainOpts {
    std::string granularity = "filter_wide";
    unsigned steps = 200;
    std::string lr = "auto";
    std::string task = "hidden-conv";
    std::string hidden = "scaled";
    double target_scale = 3.0;
    std::string filter_size = "3x3";
    unsigned act_bits = 4;
    std::size_t samples = 4;
    std::string input_size = "8x8";
    std::string out_path;
    std::string trace_path;
};

int cmd_train(const GlobalOpts& g, const TrainOpts& opt) {
    using namespace pcilt;
    if (opt.task != "hidden-conv")
        throw ConfigError("unknown task '" + opt.task + "' (hidden-conv)");
    const Granularity gran = parse_granularity(opt.granularity);
    HiddenTarget target;
    if (opt.hidden == "scaled")
        target = HiddenTarget::ScaledBase;
    else if (opt.hidden == "square")
        target = HiddenTarget::SquareLaw;
    else
        throw ConfigError("unknown hidden target '" + opt.hidden + "' (scaled | square)");

    const auto [kh, kw] = parse_size(opt.filter_size);
    const auto [in_rows, in_cols] = parse_size(opt.input_size);
    HiddenConvTask task = make_hidden_conv_task(g.seed, kh, kw, opt.act_bits, opt.samples, in_rows,
                                                in_cols, target, opt.target_scale, gran);

    TrainConfig cfg;
    cfg.steps = opt.steps;
    cfg.threads = g.threads;
    cfg.lr = opt.lr == "auto" ? choose_lr(task.bank, task.data) : std::stod(opt.lr);

    const TrainResult result = train(task.bank, task.data, cfg);

    if (!opt.trace_path.empty()) {
        std::ofstream trace(opt.trace_path, std::ios::trunc);
        if (!trace)
            throw Error("cannot open '" + opt.trace_path + "' for writing");
        trace << "step,loss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", result.loss_trace[i]);
            trace << i << "," << buf << "\n";
        }
    }
    if (!opt.out_path.empty())
        save_bank(task.bank, opt.out_path);

    const double final_loss = result.loss_trace.back();
    std::cout << "train: granularity=" << granularity_name(gran) << " steps=" << opt.steps
              << " lr=" << cfg.lr << " final_loss=" << final_loss << "\n";
    if (gran == Granularity::FilterWide)
        std::cout << "train: scale=" << task.bank.scale << "\n";
    if (result.diverged)
        std::cout << "train: diverged (loss exceeded " << cfg.divergence_limit
                  << "); partial trace written\n";

    write_json(g.json_path, json{{"granularity", granularity_name(gran)},
                                 {"steps", opt.steps},
                                 {"lr", cfg.lr},
                                 {"final_loss", final_loss},
                                 {"scale", task.bank.scale},
                                 {"diverged", result.diverged}});
    return result.diverged ? kExitVerifyFail : kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lookup-table convolution engine"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--seed", g.seed, "rng seed shared by all commands");
    app.add_option("--threads", g.threads, "worker threads for the kernels");
    app.add_option("--json", g.json_path, "write a machine-readable report here");

    BuildOpts build;
    CLI::App* cb = app.add_subcommand("build", "precompute lookup tables for a filter");
    cb->add_option("--filter", build.filter_path, "filter weights (.qtf)")->required();
    cb->add_option("--act-bits", build.act_bits, "activation bit width");
    cb->add_option("--fn", build.fn_id, "convolutional function id");
    cb->add_option("--grid", build.grid_path, "value grid for --fn table (.qtf)");
    cb->add_option("--input-weight", build.input_weight, "scalar input weight");
    cb->add_flag("--ifdr-multiply", build.ifdr_multiply,
                 "keep the input weight as a per-position multiply instead of folding it");
    cb->add_option("--segment-len", build.segment_len, "pack this many taps per offset");
    cb->add_option("--skip", build.skips, "tap id to drop (repeatable)");
    cb->add_option("--repeat", build.repeats, "tap id to include once more (repeatable)");
    cb->add_option("--split", build.split_bits, "split activations, low part this wide");
    cb->add_option("-o,--output", build.out_path, "bank file to write")->required();

    VerifyOpts verify;
    CLI::App* cv = app.add_subcommand("verify", "compare a bank against direct multiplication");
    cv->add_option("--bank", verify.bank_path, "bank file (.pcb)")->required();
    cv->add_option("--seeds", verify.seeds, "number of random trials");
    cv->add_option("--max-hw", verify.max_hw, "largest random input side");

    BenchOpts bench;
    CLI::App* cn = app.add_subcommand("bench", "time kernels against the scalar dm baseline");
    cn->add_option("--bank", bench.bank_path, "bank file (.pcb)")->required();
    cn->add_option("--input-size", bench.input_size, "input size, e.g. 1024x768");
    cn->add_option("--samples", bench.samples, "inputs processed per repetition");
    cn->add_option("--reps", bench.reps, "timed repetitions (median reported)");

    CostOpts cost;
    CLI::App* cc = app.add_subcommand("cost", "analytic op and memory report");
    cc->add_option("--config", cost.config_path, "network config (.json)")->required();

    TrainOpts tr;
    CLI::App* ct = app.add_subcommand("train", "gradient-train tables on a toy regression");
    ct->add_option("--granularity", tr.granularity,
                   "filter_wide | per_table | per_offset | per_value");
    ct->add_option("--steps", tr.steps, "gradient steps");
    ct->add_option("--lr", tr.lr, "learning rate or 'auto'");
    ct->add_option("--task", tr.task, "training task (hidden-conv)");
    ct->add_option("--hidden", tr.hidden, "hidden target: scaled | square");
    ct->add_option("--target-scale", tr.target_scale, "scale of the hidden target");
    ct->add_option("--filter-size", tr.filter_size, "filter size, e.g. 3x3");
    ct->add_option("--act-bits", tr.act_bits, "activation bit width");
    ct->add_option("--samples", tr.samples, "dataset samples");
    ct->add_option("--input-size", tr.input_size, "sample input size, e.g. 8x8");
    ct->add_option("-o,--output", tr.out_path, "trained bank file to write");
    ct->add_option("--trace", tr.trace_path, "loss trace CSV to write");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) { // --help
            app.exit(e);
            return kExitOk;
        }
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (cb->parsed())
            return cmd_build(g, build);
        if (cv->parsed())
            return cmd_verify(g, verify);
        if (cn->parsed())
            return cmd_bench(g, bench);
        if (cc->parsed())
            return cmd_cost(g, cost);
        if (ct->parsed())
            return cmd_train(g, tr);
    } catch (const pcilt::VerifyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerifyFail;
    } catch (const pcilt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
