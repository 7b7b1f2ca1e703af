#pragma once

#include <cstdint>
#include <string>

#include "pcilt/errors.hpp"

namespace pcilt {

inline std::uint64_t checked_mul_u64(std::uint64_t a, std::uint64_t b, const char* what) {
    std::uint64_t r = 0;
    if (__builtin_mul_overflow(a, b, &r))
        throw RangeError(std::string(what) + ": unsigned 64-bit overflow");
    return r;
}

inline std::int64_t checked_mul_i64(std::int64_t a, std::int64_t b, const char* what) {
    std::int64_t r = 0;
    if (__builtin_mul_overflow(a, b, &r))
        throw RangeError(std::string(what) + ": signed 64-bit overflow");
    return r;
}

inline std::uint64_t checked_add_u64(std::uint64_t a, std::uint64_t b, const char* what) {
    std::uint64_t r = 0;
    if (__builtin_add_overflow(a, b, &r))
        throw RangeError(std::string(what) + ": unsigned 64-bit overflow");
    return r;
}

// 2^63 is the contract limit for accumulator-facing counts
inline std::uint64_t checked_mul_below_2_63(std::uint64_t a, std::uint64_t b, const char* what) {
    std::uint64_t r = checked_mul_u64(a, b, what);
    if (r > (1ull << 63))
        throw RangeError(std::string(what) + ": count exceeds 2^63");
    return r;
}

} // namespace pcilt
