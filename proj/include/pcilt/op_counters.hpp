#pragma once

#include <cstdint>

namespace pcilt {

/// Instrumentation for kernels and table builds. Counts arithmetic of the
/// convolution itself, never address arithmetic:
///   fn_evals - evaluations of the convolutional function (the multiplications
///              of the classic algorithm, and of table builds)
///   mults    - scalar multiplications outside the function (input weight)
///   lookups  - table reads on the inference path
///   adds     - accumulator additions
struct OpCounters {
    std::uint64_t fn_evals = 0;
    std::uint64_t mults = 0;
    std::uint64_t lookups = 0;
    std::uint64_t adds = 0;

    OpCounters& operator+=(const OpCounters& o) {
        fn_evals += o.fn_evals;
        mults += o.mults;
        lookups += o.lookups;
        adds += o.adds;
        return *this;
    }
};

} // namespace pcilt
