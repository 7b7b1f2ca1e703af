#pragma once

#include <string>

#include "pcilt/conv_fn.hpp"
#include "pcilt/types.hpp"

namespace pcilt {

// QTF on-disk format, little-endian throughout:
//   "QTF1" | dtype u8 (0 activation, 1 signed weight, 2 real64) | bits u8 |
//   ndim u8 (= 2) | dims u32 x 2 | payload row-major
// Payload element: u16 per activation, i32 per integer weight, IEEE binary64
// per real. Round-trips are bit-identical. Input weights are not part of the
// format; callers attach them separately.

void save_qtf(const QTensor& t, const std::string& path);
QTensor load_qtf(const std::string& path);

void save_filter_qtf(const Filter& f, const std::string& path);
Filter load_filter_qtf(const std::string& path);

// Grids reuse the container with dims = (weight domain, levels). Integer
// grids may declare up to 32 bits since entries are precomputed results,
// not weights.
void save_grid_qtf(const ValueGrid& g, const std::string& path);
ValueGrid load_grid_qtf(const std::string& path);

} // namespace pcilt
