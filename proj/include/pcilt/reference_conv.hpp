#pragma once

#include <span>

#include "pcilt/conv_fn.hpp"
#include "pcilt/op_counters.hpp"
#include "pcilt/types.hpp"

namespace pcilt {

/// Valid (no padding) convolution geometry.
struct ConvGeometry {
    std::size_t in_rows = 0;
    std::size_t in_cols = 0;
    std::size_t kh = 0;
    std::size_t kw = 0;

    static ConvGeometry make(std::size_t in_rows, std::size_t in_cols, std::size_t kh, std::size_t kw);
    static ConvGeometry of(const QTensor& input, std::size_t kh, std::size_t kw);

    std::size_t out_rows() const noexcept { return in_rows - kh + 1; }
    std::size_t out_cols() const noexcept { return in_cols - kw + 1; }
    std::size_t positions() const noexcept { return out_rows() * out_cols(); }
    std::size_t taps() const noexcept { return kh * kw; }
};

// Direct per-position evaluation, cross-correlation orientation (no kernel
// flip): out[y][x] = input_weight * sum_{i,j} fn(w[i][j], a[y+i][x+j]).
// The serial path (threads == 1) is the oracle every table kernel is
// checked against; threads > 1 splits output rows and stays bit-identical.
AccTensor dm_conv2d(const QTensor& input, const Filter& filter, const ConvFn& fn,
                    int threads = 1, OpCounters* counters = nullptr);
RealTensor dm_conv2d_real(const QTensor& input, const Filter& filter, const ConvFn& fn,
                          int threads = 1, OpCounters* counters = nullptr);

/// One tap of an explicit tap list: filter-relative position plus weight.
/// Lets the reference evaluate skip/repeat schedules where the same input
/// position contributes more than once.
struct TapWeight {
    std::uint32_t di = 0;
    std::uint32_t dj = 0;
    std::int64_t w = 0;
};

AccTensor dm_conv2d_taps(const QTensor& input, std::size_t kh, std::size_t kw,
                         std::span<const TapWeight> taps, const ConvFn& fn,
                         std::int64_t input_weight = 1, int threads = 1,
                         OpCounters* counters = nullptr);

/// samples * out_positions * kh * kw, with 64-bit overflow reported as RangeError.
std::uint64_t dm_mult_count(std::uint64_t samples, const ConvGeometry& geom);

} // namespace pcilt
