#include "pcilt/learned_pcilt.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pcilt/reference_conv.hpp"

namespace pcilt {

const char* granularity_name(Granularity g) {
    switch (g) {
    case Granularity::FilterWide: return "filter_wide";
    case Granularity::PerTable: return "per_table";
    case Granularity::PerOffset: return "per_offset";
    case Granularity::PerValue: return "per_value";
    }
    return "?";
}

Granularity parse_granularity(const std::string& name) {
    if (name == "filter_wide") return Granularity::FilterWide;
    if (name == "per_table") return Granularity::PerTable;
    if (name == "per_offset") return Granularity::PerOffset;
    if (name == "per_value") return Granularity::PerValue;
    throw ConfigError("unknown granularity '" + name +
                      "' (filter_wide | per_table | per_offset | per_value)");
}

std::size_t LearnedBank::param_count() const noexcept {
    switch (gran) {
    case Granularity::FilterWide: return 1;
    case Granularity::PerTable: return table_count();
    case Granularity::PerOffset: return levels();
    case Granularity::PerValue: return table_count() * levels();
    }
    return 0;
}

double LearnedBank::effective(std::size_t t, std::uint32_t o) const {
    switch (gran) {
    case Granularity::FilterWide: return scale * base[t][o];
    case Granularity::PerTable: return table_scales[t] * base[t][o];
    case Granularity::PerOffset: return base[t][o] + offset_deltas[o];
    case Granularity::PerValue: return theta[t][o];
    }
    return 0.0;
}

void LearnedBank::reset_hits() {
    for (auto& row : hits)
        std::fill(row.begin(), row.end(), 0);
}

namespace {

void init_params(LearnedBank& b) {
    b.table_scales.assign(b.table_count(), 1.0);
    b.offset_deltas.assign(b.levels(), 0.0);
    b.theta = b.base; // identity start for the free parameterization
    b.hits.assign(b.table_count(), std::vector<std::uint64_t>(b.levels(), 0));
}

} // namespace

LearnedBank LearnedBank::from_tables(std::size_t kh, std::size_t kw, Cardinality card,
                                     std::vector<std::vector<double>> base, Granularity g) {
    if (base.size() != kh * kw)
        throw ShapeError("need one base table per filter tap");
    for (const auto& t : base)
        if (t.size() != card.levels())
            throw ShapeError("base table length does not match the cardinality");
    LearnedBank b;
    b.kh = kh;
    b.kw = kw;
    b.act_card = card;
    b.gran = g;
    b.base = std::move(base);
    init_params(b);
    return b;
}

LearnedBank LearnedBank::from_filter(const Filter& f, Cardinality card, const ConvFn& fn,
                                     Granularity g) {
    std::vector<std::vector<double>> base(f.taps());
    for (std::size_t t = 0; t < f.taps(); ++t) {
        base[t].resize(card.levels());
        const double w = f.kind == WeightKind::Real64 ? f.rweights[t]
                                                      : static_cast<double>(f.iweights[t]);
        for (std::uint32_t a = 0; a < card.levels(); ++a)
            base[t][a] = fn.eval_real(w, a);
    }
    return from_tables(f.kh, f.kw, card, std::move(base), g);
}

LearnedBank LearnedBank::random(std::size_t kh, std::size_t kw, Cardinality card, Granularity g,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> base(kh * kw, std::vector<double>(card.levels()));
    for (auto& tab : base)
        for (double& v : tab)
            v = (static_cast<double>(rng() >> 11) / 9007199254740992.0) * 2.0 - 1.0; // [-1, 1)
    return from_tables(kh, kw, card, std::move(base), g);
}

RealTensor learned_forward(const QTensor& input, LearnedBank& bank, ForwardTrace* trace,
                           int threads) {
    if (input.card != bank.act_card)
        throw ShapeError("input cardinality does not match the learned bank");
    const ConvGeometry g = ConvGeometry::of(input, bank.kh, bank.kw);
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    const std::size_t T = bank.table_count();
    const std::uint32_t L = bank.levels();
    const std::size_t kh = bank.kh, kw = bank.kw;

    // materialize the effective entries once per pass
    std::vector<double> eff(T * L);
    for (std::size_t t = 0; t < T; ++t)
        for (std::uint32_t o = 0; o < L; ++o)
            eff[t * L + o] = bank.effective(t, o);

    RealTensor out = RealTensor::zeros(out_rows, out_cols);
    const std::uint16_t* src = input.values.data();
    const std::size_t stride = input.cols;

    auto row_work = [&](std::size_t y) {
        double* dst = out.values.data() + y * out_cols;
        for (std::size_t x = 0; x < out_cols; ++x) {
            double acc = 0.0;
            std::size_t t = 0;
            for (std::size_t i = 0; i < kh; ++i) {
                const std::uint16_t* row = src + (y + i) * stride + x;
                for (std::size_t j = 0; j < kw; ++j, ++t)
                    acc += eff[t * L + row[j]];
            }
            dst[x] = acc;
        }
    };

    if (threads <= 1) {
        for (std::size_t y = 0; y < out_rows; ++y)
            row_work(y);
    } else {
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::int64_t y = 0; y < static_cast<std::int64_t>(out_rows); ++y)
            row_work(static_cast<std::size_t>(y));
    }

    // hit accounting stays serial; additions commute but lost updates do not
    for (std::size_t y = 0; y < out_rows; ++y)
        for (std::size_t x = 0; x < out_cols; ++x) {
            std::size_t t = 0;
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j, ++t)
                    ++bank.hits[t][src[(y + i) * stride + (x + j)]];
        }

    if (trace) {
        trace->input = input;
        trace->revision = bank.revision;
        trace->out_rows = out_rows;
        trace->out_cols = out_cols;
    }
    return out;
}

LearnedGradients learned_backward(const LearnedBank& bank, const ForwardTrace& trace,
                                  const RealTensor& upstream) {
    if (trace.revision != bank.revision)
        throw StateError("forward trace is stale: bank parameters changed since the pass");
    if (upstream.rows != trace.out_rows || upstream.cols != trace.out_cols)
        throw ShapeError("upstream gradient shape does not match the traced forward");

    const std::size_t T = bank.table_count();
    const std::uint32_t L = bank.levels();
    const std::size_t kh = bank.kh, kw = bank.kw;
    const QTensor& in = trace.input;

    // G[t][o] = sum of upstream gradient over positions where table t read offset o
    std::vector<std::vector<double>> G(T, std::vector<double>(L, 0.0));
    for (std::size_t y = 0; y < trace.out_rows; ++y)
        for (std::size_t x = 0; x < trace.out_cols; ++x) {
            const double g = upstream.at(y, x);
            std::size_t t = 0;
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j, ++t)
                    G[t][in.at(y + i, x + j)] += g;
        }

    LearnedGradients out;
    out.gran = bank.gran;
    switch (bank.gran) {
    case Granularity::FilterWide: {
        double s = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::uint32_t o = 0; o < L; ++o)
                s += bank.base[t][o] * G[t][o];
        out.scale = s;
        break;
    }
    case Granularity::PerTable: {
        out.table_scales.assign(T, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::uint32_t o = 0; o < L; ++o)
                out.table_scales[t] += bank.base[t][o] * G[t][o];
        break;
    }
    case Granularity::PerOffset: {
        out.offset_deltas.assign(L, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::uint32_t o = 0; o < L; ++o)
                out.offset_deltas[o] += G[t][o];
        break;
    }
    case Granularity::PerValue:
        out.theta = std::move(G);
        break;
    }
    return out;
}

void apply_step(LearnedBank& bank, const LearnedGradients& grads, double lr) {
    if (grads.gran != bank.gran)
        throw StateError("gradient granularity does not match the bank");
    switch (bank.gran) {
    case Granularity::FilterWide:
        bank.scale -= lr * grads.scale;
        break;
    case Granularity::PerTable:
        for (std::size_t t = 0; t < bank.table_scales.size(); ++t)
            bank.table_scales[t] -= lr * grads.table_scales[t];
        break;
    case Granularity::PerOffset:
        for (std::size_t o = 0; o < bank.offset_deltas.size(); ++o)
            bank.offset_deltas[o] -= lr * grads.offset_deltas[o];
        break;
    case Granularity::PerValue:
        for (std::size_t t = 0; t < bank.theta.size(); ++t)
            for (std::size_t o = 0; o < bank.theta[t].size(); ++o)
                bank.theta[t][o] -= lr * grads.theta[t][o];
        break;
    }
    ++bank.revision;
}

namespace {

std::size_t dataset_positions(const LearnedBank& bank, std::span<const Sample> dataset) {
    std::size_t total = 0;
    for (const Sample& s : dataset) {
        const ConvGeometry g = ConvGeometry::of(s.input, bank.kh, bank.kw);
        if (s.target.rows != g.out_rows() || s.target.cols != g.out_cols())
            throw ShapeError("target shape does not match the sample's output geometry");
        total += g.positions();
    }
    if (total == 0)
        throw ConfigError("dataset is empty");
    return total;
}

struct LossAndGrads {
    double loss = 0.0;
    LearnedGradients grads;
};

void add_grads(LearnedGradients& acc, const LearnedGradients& g) {
    acc.scale += g.scale;
    for (std::size_t i = 0; i < g.table_scales.size(); ++i)
        acc.table_scales[i] += g.table_scales[i];
    for (std::size_t i = 0; i < g.offset_deltas.size(); ++i)
        acc.offset_deltas[i] += g.offset_deltas[i];
    for (std::size_t t = 0; t < g.theta.size(); ++t)
        for (std::size_t o = 0; o < g.theta[t].size(); ++o)
            acc.theta[t][o] += g.theta[t][o];
}

LearnedGradients zero_grads(const LearnedBank& bank) {
    LearnedGradients g;
    g.gran = bank.gran;
    g.table_scales.assign(bank.table_count(), 0.0);
    g.offset_deltas.assign(bank.levels(), 0.0);
    g.theta.assign(bank.table_count(), std::vector<double>(bank.levels(), 0.0));
    return g;
}

// loss = sum over positions of (out - target)^2 / (2 * total positions)
LossAndGrads loss_and_grads(LearnedBank& bank, std::span<const Sample> dataset, int threads) {
    const double M = static_cast<double>(dataset_positions(bank, dataset));
    LossAndGrads r;
    r.grads = zero_grads(bank);
    for (const Sample& s : dataset) {
        ForwardTrace trace;
        const RealTensor out = learned_forward(s.input, bank, &trace, threads);
        RealTensor upstream = RealTensor::zeros(out.rows, out.cols);
        double sq = 0.0;
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            const double resid = out.values[i] - s.target.values[i];
            sq += resid * resid;
            upstream.values[i] = resid / M;
        }
        r.loss += sq / (2.0 * M);
        add_grads(r.grads, learned_backward(bank, trace, upstream));
    }
    return r;
}

} // namespace

double dataset_loss(LearnedBank& bank, std::span<const Sample> dataset, int threads) {
    const double M = static_cast<double>(dataset_positions(bank, dataset));
    double loss = 0.0;
    for (const Sample& s : dataset) {
        const RealTensor out = learned_forward(s.input, bank, nullptr, threads);
        double sq = 0.0;
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            const double resid = out.values[i] - s.target.values[i];
            sq += resid * resid;
        }
        loss += sq / (2.0 * M);
    }
    return loss;
}

TrainResult train(LearnedBank& bank, std::span<const Sample> dataset, const TrainConfig& cfg) {
    TrainResult res;
    res.loss_trace.push_back(dataset_loss(bank, dataset, cfg.threads));
    for (unsigned step = 0; step < cfg.steps; ++step) {
        const LossAndGrads lg = loss_and_grads(bank, dataset, cfg.threads);
        apply_step(bank, lg.grads, cfg.lr);
        const double loss = dataset_loss(bank, dataset, cfg.threads);
        res.loss_trace.push_back(loss);
        if (!(loss <= cfg.divergence_limit)) {
            res.diverged = true;
            break;
        }
    }
    return res;
}

namespace {

std::vector<double> flatten(const LearnedGradients& g) {
    switch (g.gran) {
    case Granularity::FilterWide: return {g.scale};
    case Granularity::PerTable: return g.table_scales;
    case Granularity::PerOffset: return g.offset_deltas;
    case Granularity::PerValue: {
        std::vector<double> v;
        for (const auto& row : g.theta)
            v.insert(v.end(), row.begin(), row.end());
        return v;
    }
    }
    return {};
}

void set_params(LearnedBank& bank, const std::vector<double>& p) {
    switch (bank.gran) {
    case Granularity::FilterWide:
        bank.scale = p[0];
        break;
    case Granularity::PerTable:
        std::copy(p.begin(), p.end(), bank.table_scales.begin());
        break;
    case Granularity::PerOffset:
        std::copy(p.begin(), p.end(), bank.offset_deltas.begin());
        break;
    case Granularity::PerValue: {
        std::size_t i = 0;
        for (auto& row : bank.theta)
            for (double& v : row)
                v = p[i++];
        break;
    }
    }
    ++bank.revision;
}

std::vector<double> get_params(const LearnedBank& bank) {
    switch (bank.gran) {
    case Granularity::FilterWide: return {bank.scale};
    case Granularity::PerTable: return bank.table_scales;
    case Granularity::PerOffset: return bank.offset_deltas;
    case Granularity::PerValue: {
        std::vector<double> v;
        for (const auto& row : bank.theta)
            v.insert(v.end(), row.begin(), row.end());
        return v;
    }
    }
    return {};
}

} // namespace

double choose_lr(const LearnedBank& bank, std::span<const Sample> dataset, unsigned power_iters,
                 std::uint64_t seed) {
    LearnedBank probe = bank;
    const std::vector<double> p0 = get_params(probe);
    auto grad_at = [&](const std::vector<double>& p) {
        set_params(probe, p);
        return flatten(loss_and_grads(probe, dataset, 1).grads);
    };
    const std::vector<double> g0 = grad_at(p0);

    std::mt19937_64 rng(seed);
    std::vector<double> v(p0.size());
    for (double& x : v)
        x = (static_cast<double>(rng() >> 11) / 9007199254740992.0) - 0.5;

    double lambda = 0.0;
    for (unsigned it = 0; it < power_iters; ++it) {
        double norm = 0.0;
        for (double x : v)
            norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0)
            break;
        std::vector<double> p = p0;
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] += v[i] / norm;
        // the loss is quadratic, so grad(p0 + u) - grad(p0) = H u exactly
        std::vector<double> hv = grad_at(p);
        for (std::size_t i = 0; i < hv.size(); ++i)
            hv[i] -= g0[i];
        lambda = 0.0;
        for (double x : hv)
            lambda += x * x;
        lambda = std::sqrt(lambda);
        v = std::move(hv);
    }
    if (lambda <= 0.0 || !std::isfinite(lambda))
        return 1.0;
    return 1.0 / (1.1 * lambda);
}

Reconstruction reconstruct_filter(const LearnedBank& bank) {
    const std::size_t T = bank.table_count();
    const std::uint32_t L = bank.levels();
    double denom = 0.0;
    for (std::uint32_t o = 0; o < L; ++o)
        denom += static_cast<double>(o) * o;
    std::vector<double> weights(T, 0.0);
    std::vector<double> residuals(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        double num = 0.0;
        for (std::uint32_t o = 0; o < L; ++o)
            num += static_cast<double>(o) * bank.effective(t, o);
        const double w = denom > 0.0 ? num / denom : 0.0;
        weights[t] = w;
        double worst = 0.0;
        for (std::uint32_t o = 0; o < L; ++o)
            worst = std::max(worst, std::abs(bank.effective(t, o) - w * o));
        residuals[t] = worst;
    }
    Reconstruction rec{Filter::reals(bank.kh, bank.kw, std::move(weights)), std::move(residuals)};
    return rec;
}

HiddenConvTask make_hidden_conv_task(std::uint64_t seed, std::size_t kh, std::size_t kw,
                                     unsigned act_bits, std::size_t samples, std::size_t in_rows,
                                     std::size_t in_cols, HiddenTarget target, double target_scale,
                                     Granularity g) {
    std::mt19937_64 rng(seed);
    const Cardinality card(act_bits);
    const std::size_t taps = kh * kw;

    std::vector<std::int32_t> weights(taps);
    for (auto& w : weights) {
        w = static_cast<std::int32_t>(rng() % 9) - 4;
        if (w == 0)
            w = 1; // keep every tap informative
    }
    const Filter filter = Filter::ints(kh, kw, 8, weights);

    HiddenConvTask task{LearnedBank::from_filter(filter, card, builtin("product"), g), {}};

    std::vector<std::vector<double>> hidden(taps, std::vector<double>(card.levels()));
    for (std::size_t t = 0; t < taps; ++t)
        for (std::uint32_t o = 0; o < card.levels(); ++o) {
            const double w = static_cast<double>(weights[t]);
            hidden[t][o] = target == HiddenTarget::ScaledBase
                               ? target_scale * w * o
                               : w * static_cast<double>(o) * o;
        }

    for (std::size_t s = 0; s < samples; ++s) {
        std::vector<std::uint16_t> vals(in_rows * in_cols);
        for (auto& v : vals)
            v = static_cast<std::uint16_t>(rng() % card.levels());
        QTensor input = QTensor::make(in_rows, in_cols, card, std::move(vals));

        const ConvGeometry geo = ConvGeometry::of(input, kh, kw);
        RealTensor tgt = RealTensor::zeros(geo.out_rows(), geo.out_cols());
        for (std::size_t y = 0; y < geo.out_rows(); ++y)
            for (std::size_t x = 0; x < geo.out_cols(); ++x) {
                double acc = 0.0;
                std::size_t t = 0;
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j, ++t)
                        acc += hidden[t][input.at(y + i, x + j)];
                tgt.values[y * geo.out_cols() + x] = acc;
            }
        task.data.push_back(Sample{std::move(input), std::move(tgt)});
    }
    return task;
}

} // namespace pcilt
