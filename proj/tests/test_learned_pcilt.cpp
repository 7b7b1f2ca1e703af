#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pcilt/learned_pcilt.hpp"
#include "pcilt/pcilt.hpp"
#include "pcilt/reference_conv.hpp"

using namespace pcilt;

namespace {

QTensor random_input(std::mt19937_64& rng, std::size_t rows, std::size_t cols, unsigned bits) {
    const Cardinality card(bits);
    std::vector<std::uint16_t> vals(rows * cols);
    for (auto& v : vals)
        v = static_cast<std::uint16_t>(rng() % card.levels());
    return QTensor::make(rows, cols, card, std::move(vals));
}

// total analytic gradient of dataset_loss at the bank's current parameters
LearnedGradients total_gradients(LearnedBank& bank, std::span<const Sample> data) {
    double total_positions = 0;
    for (const Sample& s : data) {
        const ConvGeometry g = ConvGeometry::of(s.input, bank.kh, bank.kw);
        total_positions += static_cast<double>(g.positions());
    }
    LearnedGradients acc;
    acc.gran = bank.gran;
    acc.table_scales.assign(bank.table_count(), 0.0);
    acc.offset_deltas.assign(bank.levels(), 0.0);
    acc.theta.assign(bank.table_count(), std::vector<double>(bank.levels(), 0.0));
    for (const Sample& s : data) {
        ForwardTrace trace;
        const RealTensor out = learned_forward(s.input, bank, &trace);
        RealTensor upstream = RealTensor::zeros(out.rows, out.cols);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            upstream.values[i] = (out.values[i] - s.target.values[i]) / total_positions;
        const LearnedGradients g = learned_backward(bank, trace, upstream);
        acc.scale += g.scale;
        for (std::size_t i = 0; i < g.table_scales.size(); ++i)
            acc.table_scales[i] += g.table_scales[i];
        for (std::size_t i = 0; i < g.offset_deltas.size(); ++i)
            acc.offset_deltas[i] += g.offset_deltas[i];
        for (std::size_t t = 0; t < g.theta.size(); ++t)
            for (std::size_t o = 0; o < g.theta[t].size(); ++o)
                acc.theta[t][o] += g.theta[t][o];
    }
    return acc;
}

double param_get(const LearnedBank& b, std::size_t i) {
    switch (b.gran) {
    case Granularity::FilterWide: return b.scale;
    case Granularity::PerTable: return b.table_scales[i];
    case Granularity::PerOffset: return b.offset_deltas[i];
    case Granularity::PerValue: return b.theta[i / b.levels()][i % b.levels()];
    }
    return 0;
}

void param_set(LearnedBank& b, std::size_t i, double v) {
    switch (b.gran) {
    case Granularity::FilterWide: b.scale = v; break;
    case Granularity::PerTable: b.table_scales[i] = v; break;
    case Granularity::PerOffset: b.offset_deltas[i] = v; break;
    case Granularity::PerValue: b.theta[i / b.levels()][i % b.levels()] = v; break;
    }
    ++b.revision;
}

double grad_get(const LearnedBank& b, const LearnedGradients& g, std::size_t i) {
    switch (b.gran) {
    case Granularity::FilterWide: return g.scale;
    case Granularity::PerTable: return g.table_scales[i];
    case Granularity::PerOffset: return g.offset_deltas[i];
    case Granularity::PerValue: return g.theta[i / b.levels()][i % b.levels()];
    }
    return 0;
}

} // namespace

TEST_CASE("identity parameters reproduce the real lookup kernel bit for bit") {
    std::mt19937_64 rng(2);
    HiddenConvTask task = make_hidden_conv_task(5, 2, 2, 3, 1, 6, 6, HiddenTarget::ScaledBase, 1.0,
                                                Granularity::FilterWide);
    // a per-tap bank over the same base tables
    PciltBank real_bank;
    real_bank.kh = task.bank.kh;
    real_bank.kw = task.bank.kw;
    real_bank.act_card = task.bank.act_card;
    real_bank.kind = EntryKind::R64;
    for (std::size_t t = 0; t < task.bank.table_count(); ++t) {
        Pcilt tab;
        tab.base_kind = WeightKind::Real64;
        tab.act_card = task.bank.act_card;
        tab.kind = EntryKind::R64;
        tab.rvals = task.bank.base[t];
        real_bank.tables.push_back(std::move(tab));
    }
    const QTensor in = random_input(rng, 7, 5, 3);
    const RealTensor a = learned_forward(in, task.bank);
    const RealTensor b = pcilt_conv2d_real(in, real_bank);
    CHECK(a.values == b.values);
}

TEST_CASE("zero free parameters zero the output") {
    HiddenConvTask task =
        make_hidden_conv_task(6, 2, 2, 2, 1, 5, 5, HiddenTarget::ScaledBase, 1.0,
                              Granularity::PerValue);
    for (auto& tab : task.bank.theta)
        std::fill(tab.begin(), tab.end(), 0.0);
    std::mt19937_64 rng(3);
    const RealTensor out = learned_forward(random_input(rng, 5, 5, 2), task.bank);
    for (double v : out.values)
        CHECK(v == 0.0);
}

TEST_CASE("a constant per-offset delta shifts every position by tables x delta") {
    std::mt19937_64 rng(4);
    HiddenConvTask task = make_hidden_conv_task(7, 3, 3, 2, 1, 6, 6, HiddenTarget::ScaledBase, 1.0,
                                                Granularity::PerOffset);
    const QTensor in = random_input(rng, 6, 6, 2);
    const RealTensor before = learned_forward(in, task.bank);
    const double c = 0.75;
    std::fill(task.bank.offset_deltas.begin(), task.bank.offset_deltas.end(), c);
    const RealTensor after = learned_forward(in, task.bank);
    for (std::size_t i = 0; i < before.values.size(); ++i)
        CHECK(after.values[i] ==
              doctest::Approx(before.values[i] + 9.0 * c).epsilon(1e-12));
}

TEST_CASE("hit counters sum to positions times tables") {
    std::mt19937_64 rng(8);
    HiddenConvTask task = make_hidden_conv_task(9, 2, 3, 2, 1, 7, 8, HiddenTarget::ScaledBase, 1.0,
                                                Granularity::PerTable);
    const QTensor in = random_input(rng, 7, 8, 2);
    task.bank.reset_hits();
    learned_forward(in, task.bank);
    std::uint64_t total = 0;
    for (const auto& row : task.bank.hits)
        for (std::uint64_t h : row)
            total += h;
    const ConvGeometry g = ConvGeometry::of(in, 2, 3);
    CHECK(total == g.positions() * task.bank.table_count());
}

TEST_CASE("one-hot trace yields unit gradients at the looked-up entries") {
    // a single output position: input the size of the filter
    HiddenConvTask task = make_hidden_conv_task(11, 2, 2, 2, 1, 2, 2, HiddenTarget::ScaledBase, 1.0,
                                                Granularity::PerValue);
    const QTensor& in = task.data[0].input;
    ForwardTrace trace;
    learned_forward(in, task.bank, &trace);
    RealTensor upstream = RealTensor::zeros(1, 1);
    upstream.values[0] = 1.0;
    const LearnedGradients g = learned_backward(task.bank, trace, upstream);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::uint32_t o = 0; o < task.bank.levels(); ++o) {
            const double want = in.values[(t / 2) * 2 + (t % 2)] == o ? 1.0 : 0.0;
            CHECK(g.theta[t][o] == want);
        }
}

TEST_CASE("analytic gradients match central finite differences") {
    std::mt19937_64 rng(123);
    for (const Granularity gran : {Granularity::FilterWide, Granularity::PerTable,
                                   Granularity::PerOffset, Granularity::PerValue}) {
        for (int inst = 0; inst < 5; ++inst) {
            HiddenConvTask task =
                make_hidden_conv_task(100 + inst * 17 + static_cast<int>(gran), 2, 2, 2, 2, 5, 5,
                                      HiddenTarget::SquareLaw, 1.0, gran);
            // move off the base point so every granularity has nonzero gradients
            for (std::size_t i = 0; i < task.bank.param_count(); ++i)
                param_set(task.bank, i, param_get(task.bank, i) +
                                            0.1 * ((rng() % 100) / 100.0 - 0.5));

            const LearnedGradients g = total_gradients(task.bank, task.data);
            const double h = 1e-4;
            for (std::size_t i = 0; i < task.bank.param_count(); ++i) {
                const double p0 = param_get(task.bank, i);
                param_set(task.bank, i, p0 + h);
                const double lp = dataset_loss(task.bank, task.data);
                param_set(task.bank, i, p0 - h);
                const double lm = dataset_loss(task.bank, task.data);
                param_set(task.bank, i, p0);
                const double fd = (lp - lm) / (2 * h);
                const double an = grad_get(task.bank, g, i);
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
                CHECK(std::abs(fd - an) / denom < 1e-6);
            }
        }
    }
}

TEST_CASE("training a scaled target recovers the scale") {
    HiddenConvTask task = make_hidden_conv_task(21, 3, 3, 4, 3, 8, 8, HiddenTarget::ScaledBase, 3.0,
                                                Granularity::FilterWide);
    TrainConfig cfg;
    cfg.lr = choose_lr(task.bank, task.data);
    cfg.steps = 500;
    const TrainResult res = train(task.bank, task.data, cfg);
    CHECK_FALSE(res.diverged);
    CHECK(task.bank.scale == doctest::Approx(3.0).epsilon(1e-3));
    CHECK(res.loss_trace.back() < 1e-9 * res.loss_trace.front());
}

TEST_CASE("targets produced by the base tables keep the loss at zero") {
    for (const Granularity gran : {Granularity::FilterWide, Granularity::PerTable,
                                   Granularity::PerOffset, Granularity::PerValue}) {
        HiddenConvTask task =
            make_hidden_conv_task(33, 2, 2, 2, 2, 5, 5, HiddenTarget::ScaledBase, 1.0, gran);
        TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.steps = 5;
        const TrainResult res = train(task.bank, task.data, cfg);
        for (double l : res.loss_trace)
            CHECK(l == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("free entries recover a hidden square-law target") {
    HiddenConvTask task = make_hidden_conv_task(44, 2, 2, 4, 4, 9, 9, HiddenTarget::SquareLaw, 1.0,
                                                Granularity::PerValue);
    // the optimum is exact: the hidden tables themselves realize the targets
    LearnedBank optimum = task.bank;
    for (std::size_t t = 0; t < optimum.table_count(); ++t)
        for (std::uint32_t o = 0; o < optimum.levels(); ++o) {
            const double w = optimum.base[t][1]; // base is w * o, so base[1] = w
            optimum.theta[t][o] = w * static_cast<double>(o) * o;
        }
    ++optimum.revision;
    CHECK(dataset_loss(optimum, task.data) == doctest::Approx(0.0).epsilon(1e-18));

    TrainConfig cfg;
    cfg.lr = choose_lr(task.bank, task.data);
    cfg.steps = 4000;
    const TrainResult res = train(task.bank, task.data, cfg);
    CHECK_FALSE(res.diverged);
    CHECK(res.loss_trace.back() < 1e-6 * res.loss_trace.front());
}

TEST_CASE("achievable loss never worsens with finer granularity") {
    // equal weights make the per-offset family contain the square-law optimum
    const Filter f = Filter::ints(2, 2, 4, {2, 2, 2, 2});
    const Cardinality card(3);
    std::mt19937_64 rng(55);
    std::vector<Sample> data;
    for (int s = 0; s < 3; ++s) {
        const QTensor in = random_input(rng, 6, 6, 3);
        const ConvGeometry g = ConvGeometry::of(in, 2, 2);
        RealTensor tgt = RealTensor::zeros(g.out_rows(), g.out_cols());
        for (std::size_t y = 0; y < g.out_rows(); ++y)
            for (std::size_t x = 0; x < g.out_cols(); ++x) {
                double acc = 0;
                for (std::size_t i = 0; i < 2; ++i)
                    for (std::size_t j = 0; j < 2; ++j) {
                        const double a = in.at(y + i, x + j);
                        acc += 2.0 * a * a;
                    }
                tgt.values[y * g.out_cols() + x] = acc;
            }
        data.push_back(Sample{in, std::move(tgt)});
    }

    std::vector<double> final_losses;
    for (const Granularity gran : {Granularity::FilterWide, Granularity::PerTable,
                                   Granularity::PerOffset, Granularity::PerValue}) {
        LearnedBank bank = LearnedBank::from_filter(f, card, builtin("product"), gran);
        TrainConfig cfg;
        cfg.lr = choose_lr(bank, data);
        cfg.steps = 3000;
        const TrainResult res = train(bank, data, cfg);
        REQUIRE_FALSE(res.diverged);
        final_losses.push_back(res.loss_trace.back());
    }
    for (std::size_t i = 1; i < final_losses.size(); ++i)
        CHECK(final_losses[i] <= final_losses[i - 1] + 1e-9 + 1e-6 * final_losses[i - 1]);
}

TEST_CASE("reconstruction inverts product tables") {
    SUBCASE("untrained tables return the original weights with zero residual") {
        const Filter f = Filter::ints(2, 2, 4, {3, -1, 0, 7});
        LearnedBank bank = LearnedBank::from_filter(f, Cardinality(3), builtin("product"),
                                                    Granularity::PerValue);
        const Reconstruction rec = reconstruct_filter(bank);
        for (std::size_t t = 0; t < 4; ++t) {
            CHECK(rec.filter.rweights[t] == doctest::Approx(f.iweights[t]).epsilon(1e-12));
            CHECK(rec.residuals[t] == doctest::Approx(0.0).epsilon(1e-12));
        }
    }

    SUBCASE("a trained scale commutes with the fit") {
        HiddenConvTask task = make_hidden_conv_task(66, 2, 2, 3, 2, 6, 6, HiddenTarget::ScaledBase,
                                                    3.0, Granularity::FilterWide);
        TrainConfig cfg;
        cfg.lr = choose_lr(task.bank, task.data);
        cfg.steps = 200;
        train(task.bank, task.data, cfg);
        const Reconstruction rec = reconstruct_filter(task.bank);
        for (std::size_t t = 0; t < 4; ++t) {
            const double w = task.bank.base[t][1];
            CHECK(rec.filter.rweights[t] == doctest::Approx(3.0 * w).epsilon(1e-6));
            CHECK(rec.residuals[t] < 1e-9);
        }
    }

    SUBCASE("random tables report a residual without failing") {
        LearnedBank bank =
            LearnedBank::random(2, 2, Cardinality(3), Granularity::PerValue, 99);
        const Reconstruction rec = reconstruct_filter(bank);
        bool some_residual = false;
        for (double r : rec.residuals)
            some_residual = some_residual || r > 1e-6;
        CHECK(some_residual);
    }

    SUBCASE("zero residual implies exact agreement with direct convolution") {
        std::mt19937_64 rng(77);
        const Filter f = Filter::ints(2, 2, 4, {5, -3, 2, 1});
        LearnedBank bank = LearnedBank::from_filter(f, Cardinality(3), builtin("product"),
                                                    Granularity::PerValue);
        const Reconstruction rec = reconstruct_filter(bank);
        for (double r : rec.residuals)
            REQUIRE(r == doctest::Approx(0.0).epsilon(1e-12));
        const QTensor in = random_input(rng, 6, 6, 3);
        const RealTensor learned = learned_forward(in, bank);
        const RealTensor direct = dm_conv2d_real(in, rec.filter, builtin("product"));
        for (std::size_t i = 0; i < learned.values.size(); ++i) {
            const double denom = std::max(1.0, std::abs(direct.values[i]));
            CHECK(std::abs(learned.values[i] - direct.values[i]) / denom < 1e-9);
        }
    }
}

TEST_CASE("stale traces are rejected") {
    HiddenConvTask task = make_hidden_conv_task(88, 2, 2, 2, 1, 4, 4, HiddenTarget::ScaledBase, 1.0,
                                                Granularity::PerValue);
    ForwardTrace trace;
    const RealTensor out = learned_forward(task.data[0].input, task.bank, &trace);
    LearnedGradients g = learned_backward(task.bank, trace, out); // fresh: fine
    apply_step(task.bank, g, 0.01);
    CHECK_THROWS_AS(learned_backward(task.bank, trace, out), StateError);
}

TEST_CASE("divergence aborts with a partial trace") {
    HiddenConvTask task = make_hidden_conv_task(91, 2, 2, 3, 2, 6, 6, HiddenTarget::ScaledBase, 3.0,
                                                Granularity::FilterWide);
    TrainConfig cfg;
    cfg.lr = 1e6; // absurd rate blows the quadratic up
    cfg.steps = 200;
    const TrainResult res = train(task.bank, task.data, cfg);
    CHECK(res.diverged);
    CHECK(res.loss_trace.size() < 202);
    CHECK(res.loss_trace.back() > cfg.divergence_limit);
}

TEST_CASE("forward is thread-count invariant") {
    std::mt19937_64 rng(101);
    HiddenConvTask task = make_hidden_conv_task(13, 3, 3, 2, 1, 10, 10, HiddenTarget::SquareLaw,
                                                1.0, Granularity::PerOffset);
    const QTensor in = random_input(rng, 12, 11, 2);
    const RealTensor a = learned_forward(in, task.bank, nullptr, 1);
    const RealTensor b = learned_forward(in, task.bank, nullptr, 8);
    CHECK(a.values == b.values);
}
