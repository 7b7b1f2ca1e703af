#pragma once

#include <string>
#include <variant>

#include "pcilt/learned_pcilt.hpp"
#include "pcilt/offset_packing.hpp"
#include "pcilt/shared_pcilt.hpp"

namespace pcilt {

// PCB bank container, little-endian:
//   "PCB1" | version u8 | kind u8 | kind-specific body
// kinds: 0 basic, 1 segment, 2 shared, 3 learned, 4 split. Bodies carry the
// fn id (with the value grid for table fns), shapes, scalar weights, and raw
// entries at the declared width. Segment bodies embed the plan as text.

enum class BankFileKind : std::uint8_t {
    Basic = 0,
    Segment = 1,
    Shared = 2,
    Learned = 3,
    Split = 4
};

using AnyBank = std::variant<PciltBank, SegmentBank, SharedBank, LearnedBank, SplitBank>;

BankFileKind bank_kind(const AnyBank& bank);
const char* bank_kind_name(BankFileKind k);

void save_bank(const PciltBank& bank, const std::string& path);
void save_bank(const SegmentBank& bank, const std::string& path);
void save_bank(const SharedBank& bank, const std::string& path);
void save_bank(const LearnedBank& bank, const std::string& path);
void save_bank(const SplitBank& bank, const std::string& path);
void save_bank(const AnyBank& bank, const std::string& path);

AnyBank load_bank(const std::string& path);

} // namespace pcilt
