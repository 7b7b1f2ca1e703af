#include "pcilt/reference_conv.hpp"

#include <atomic>
#include <vector>

#include "pcilt/checked.hpp"

namespace pcilt {

ConvGeometry ConvGeometry::make(std::size_t in_rows, std::size_t in_cols, std::size_t kh, std::size_t kw) {
    if (in_rows == 0 || in_cols == 0 || kh == 0 || kw == 0)
        throw ShapeError("convolution dimensions must be positive");
    if (kh > in_rows || kw > in_cols)
        throw ShapeError("filter " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit input " + std::to_string(in_rows) + "x" +
                         std::to_string(in_cols));
    return ConvGeometry{in_rows, in_cols, kh, kw};
}

ConvGeometry ConvGeometry::of(const QTensor& input, std::size_t kh, std::size_t kw) {
    return make(input.rows, input.cols, kh, kw);
}

namespace {

template <bool Count>
AccTensor dm_taps_core(const QTensor& in, const ConvGeometry& g, std::span<const TapWeight> taps,
                       const ConvFn& fn, std::int64_t input_weight, int threads,
                       OpCounters* counters) {
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    AccTensor out = AccTensor::zeros(out_rows, out_cols);
    const std::uint16_t* src = in.values.data();
    const std::size_t stride = in.cols;
    const bool product = fn.fn_kind() == FnKind::Product;
    std::atomic<bool> overflow{false};

    auto row_work = [&](std::size_t y, OpCounters& c) {
        std::int64_t* dst = out.values.data() + y * out_cols;
        for (std::size_t x = 0; x < out_cols; ++x) {
            std::int64_t acc = 0;
            bool first = true;
            for (const TapWeight& t : taps) {
                const std::uint16_t a = src[(y + t.di) * stride + (x + t.dj)];
                const std::int64_t v = product ? t.w * std::int64_t(a) : fn.eval_int(t.w, a);
                if constexpr (Count) {
                    ++c.fn_evals;
                    if (!first)
                        ++c.adds;
                }
                acc = first ? v : acc + v;
                first = false;
            }
            if (input_weight != 1) {
                if (__builtin_mul_overflow(acc, input_weight, &acc))
                    overflow.store(true, std::memory_order_relaxed);
                if constexpr (Count)
                    ++c.mults;
            }
            dst[x] = acc;
        }
    };

    if (threads <= 1) {
        OpCounters local;
        for (std::size_t y = 0; y < out_rows; ++y)
            row_work(y, local);
        if (counters)
            *counters += local;
    } else {
#pragma omp parallel num_threads(threads)
        {
            OpCounters local;
#pragma omp for schedule(static)
            for (std::int64_t y = 0; y < static_cast<std::int64_t>(out_rows); ++y)
                row_work(static_cast<std::size_t>(y), local);
            if (counters) {
#pragma omp critical(pcilt_counters)
                *counters += local;
            }
        }
    }
    if (overflow.load())
        throw RangeError("input weight multiplication overflowed 64-bit accumulation");
    return out;
}

void check_table_fn_domain(const ConvFn& fn, std::span<const TapWeight> taps, Cardinality card) {
    if (fn.fn_kind() != FnKind::Table)
        return;
    const ValueGrid* g = fn.grid();
    if (g->levels < card.levels())
        throw ShapeError("table fn grid covers " + std::to_string(g->levels) +
                         " levels, input needs " + std::to_string(card.levels()));
    for (const TapWeight& t : taps) {
        if (t.w < 0 || static_cast<std::size_t>(t.w) >= g->wdomain)
            throw RangeError("weight " + std::to_string(t.w) + " outside table fn grid domain");
    }
}

std::vector<TapWeight> filter_taps(const Filter& f) {
    std::vector<TapWeight> taps(f.taps());
    for (std::size_t i = 0; i < f.kh; ++i)
        for (std::size_t j = 0; j < f.kw; ++j)
            taps[i * f.kw + j] = TapWeight{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                                           f.iweights[i * f.kw + j]};
    return taps;
}

} // namespace

AccTensor dm_conv2d(const QTensor& input, const Filter& filter, const ConvFn& fn, int threads,
                    OpCounters* counters) {
    if (filter.kind != WeightKind::IntN)
        throw ConfigError("dm_conv2d is the integer path; use dm_conv2d_real for Real64 filters");
    if (!fn.integer_entries(filter.kind))
        throw ConfigError("function '" + fn.id() + "' is not integer-valued for this weight kind");
    const ConvGeometry g = ConvGeometry::of(input, filter.kh, filter.kw);
    const std::vector<TapWeight> taps = filter_taps(filter);
    check_table_fn_domain(fn, taps, input.card);
    if (counters)
        return dm_taps_core<true>(input, g, taps, fn, filter.input_weight, threads, counters);
    return dm_taps_core<false>(input, g, taps, fn, filter.input_weight, threads, nullptr);
}

AccTensor dm_conv2d_taps(const QTensor& input, std::size_t kh, std::size_t kw,
                         std::span<const TapWeight> taps, const ConvFn& fn,
                         std::int64_t input_weight, int threads, OpCounters* counters) {
    const ConvGeometry g = ConvGeometry::of(input, kh, kw);
    for (const TapWeight& t : taps)
        if (t.di >= kh || t.dj >= kw)
            throw ShapeError("tap position outside filter window");
    check_table_fn_domain(fn, taps, input.card);
    if (counters)
        return dm_taps_core<true>(input, g, taps, fn, input_weight, threads, counters);
    return dm_taps_core<false>(input, g, taps, fn, input_weight, threads, nullptr);
}

RealTensor dm_conv2d_real(const QTensor& input, const Filter& filter, const ConvFn& fn, int threads,
                          OpCounters* counters) {
    const ConvGeometry g = ConvGeometry::of(input, filter.kh, filter.kw);
    const std::size_t out_rows = g.out_rows();
    const std::size_t out_cols = g.out_cols();
    const std::size_t taps = filter.taps();
    // weights as doubles regardless of kind; IntN weights are exact in binary64
    std::vector<double> w(taps);
    for (std::size_t t = 0; t < taps; ++t)
        w[t] = filter.kind == WeightKind::Real64 ? filter.rweights[t]
                                                 : static_cast<double>(filter.iweights[t]);
    if (fn.fn_kind() == FnKind::Table) {
        std::vector<TapWeight> itaps(taps);
        for (std::size_t t = 0; t < taps; ++t)
            itaps[t] = TapWeight{0, 0, static_cast<std::int64_t>(w[t])};
        check_table_fn_domain(fn, itaps, input.card);
    }
    const double iw = filter.kind == WeightKind::Real64 ? filter.input_weight_real
                                                        : static_cast<double>(filter.input_weight);
    RealTensor out = RealTensor::zeros(out_rows, out_cols);
    const std::uint16_t* src = input.values.data();
    const std::size_t stride = input.cols;

    auto row_work = [&](std::size_t y, OpCounters& c) {
        double* dst = out.values.data() + y * out_cols;
        for (std::size_t x = 0; x < out_cols; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < filter.kh; ++i)
                for (std::size_t j = 0; j < filter.kw; ++j) {
                    const std::uint16_t a = src[(y + i) * stride + (x + j)];
                    acc += fn.eval_real(w[i * filter.kw + j], a);
                }
            c.fn_evals += taps;
            c.adds += taps - 1;
            if (iw != 1.0) {
                acc *= iw;
                ++c.mults;
            }
            dst[x] = acc;
        }
    };

    if (threads <= 1) {
        OpCounters local;
        for (std::size_t y = 0; y < out_rows; ++y)
            row_work(y, local);
        if (counters)
            *counters += local;
    } else {
#pragma omp parallel num_threads(threads)
        {
            OpCounters local;
#pragma omp for schedule(static)
            for (std::int64_t y = 0; y < static_cast<std::int64_t>(out_rows); ++y)
                row_work(static_cast<std::size_t>(y), local);
            if (counters) {
#pragma omp critical(pcilt_counters)
                *counters += local;
            }
        }
    }
    return out;
}

std::uint64_t dm_mult_count(std::uint64_t samples, const ConvGeometry& geom) {
    const std::uint64_t positions =
        checked_mul_u64(geom.out_rows(), geom.out_cols(), "dm_mult_count positions");
    const std::uint64_t per_sample =
        checked_mul_below_2_63(positions, geom.taps(), "dm_mult_count per-sample");
    return checked_mul_below_2_63(samples, per_sample, "dm_mult_count total");
}

} // namespace pcilt
