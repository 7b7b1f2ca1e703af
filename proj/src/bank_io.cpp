#include "pcilt/bank_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace pcilt {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'B', '1'};

using Bytes = std::vector<std::uint8_t>;

void put_u8(Bytes& b, std::uint8_t v) { b.push_back(v); }
void put_u16(Bytes& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(Bytes& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(Bytes& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_i64(Bytes& b, std::int64_t v) { put_u64(b, static_cast<std::uint64_t>(v)); }
void put_f64(Bytes& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }
void put_str(Bytes& b, const std::string& s) {
    put_u16(b, static_cast<std::uint16_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
}
void put_text(Bytes& b, const std::string& s) {
    put_u32(b, static_cast<std::uint32_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
}

void put_entry(Bytes& b, EntryKind k, std::int64_t v) {
    switch (k) {
    case EntryKind::I8: put_u8(b, static_cast<std::uint8_t>(static_cast<std::int8_t>(v))); break;
    case EntryKind::I16: put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(v))); break;
    case EntryKind::I32: put_u32(b, static_cast<std::uint32_t>(static_cast<std::int32_t>(v))); break;
    case EntryKind::I64: put_i64(b, v); break;
    case EntryKind::R64: throw Error("integer entry writer got a real kind");
    }
}

class Reader {
public:
    explicit Reader(Bytes data) : data_(std::move(data)) {}
    std::size_t offset() const { return pos_; }
    bool exhausted() const { return pos_ == data_.size(); }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return data_[pos_++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::int64_t i64(const char* what) { return static_cast<std::int64_t>(u64(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(const char* what) {
        const std::uint16_t n = u16(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string text(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::int64_t entry(EntryKind k, const char* what) {
        switch (k) {
        case EntryKind::I8: return static_cast<std::int8_t>(u8(what));
        case EntryKind::I16: return static_cast<std::int16_t>(u16(what));
        case EntryKind::I32: return static_cast<std::int32_t>(u32(what));
        case EntryKind::I64: return i64(what);
        case EntryKind::R64: break;
        }
        throw ParseError("integer entry reader got a real kind", pos_);
    }
    void expect_magic() {
        if (data_.size() < 4 || std::memcmp(data_.data(), kMagic, 4) != 0)
            throw ParseError("bad magic, expected \"PCB1\"", 0);
        pos_ = 4;
    }

private:
    void need(std::size_t n, const char* what) {
        if (pos_ + n > data_.size())
            throw ParseError(std::string("truncated payload while reading ") + what, pos_);
    }
    Bytes data_;
    std::size_t pos_ = 0;
};

void write_file(const std::string& path, const Bytes& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("write to '" + path + "' failed");
}

Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path + "' for reading");
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void put_fn(Bytes& b, const ConvFn& fn) {
    put_str(b, fn.id());
    const ValueGrid* g = fn.grid();
    put_u8(b, g ? 1 : 0);
    if (g) {
        put_u8(b, g->real ? 1 : 0);
        put_u32(b, static_cast<std::uint32_t>(g->wdomain));
        put_u32(b, g->levels);
        if (g->real)
            for (double v : g->rvals)
                put_f64(b, v);
        else
            for (std::int64_t v : g->ivals)
                put_i64(b, v);
    }
}

ConvFn read_fn(Reader& r) {
    const std::string id = r.str("fn id");
    const bool has_grid = r.u8("fn grid flag") != 0;
    std::shared_ptr<ValueGrid> grid;
    if (has_grid) {
        grid = std::make_shared<ValueGrid>();
        grid->real = r.u8("grid kind") != 0;
        grid->wdomain = r.u32("grid weight domain");
        grid->levels = r.u32("grid levels");
        const std::size_t n = grid->wdomain * grid->levels;
        if (grid->real) {
            grid->rvals.resize(n);
            for (auto& v : grid->rvals)
                v = r.f64("grid value");
        } else {
            grid->ivals.resize(n);
            for (auto& v : grid->ivals)
                v = r.i64("grid value");
        }
    }
    try {
        return builtin(id, grid);
    } catch (const ConfigError& e) {
        throw ParseError(std::string("bank fn section: ") + e.what(), r.offset());
    }
}

void put_basic_body(Bytes& b, const PciltBank& bank) {
    put_fn(b, bank.fn);
    put_u32(b, static_cast<std::uint32_t>(bank.kh));
    put_u32(b, static_cast<std::uint32_t>(bank.kw));
    put_u8(b, static_cast<std::uint8_t>(bank.act_card.bits()));
    put_u8(b, static_cast<std::uint8_t>(bank.kind));
    const bool real = bank.real();
    if (real) {
        put_f64(b, bank.folded_real);
        put_f64(b, bank.ifdr_weight_real);
    } else {
        put_i64(b, bank.folded);
        put_i64(b, bank.ifdr_weight);
    }
    put_u64(b, bank.build_fn_evals);
    for (const Pcilt& t : bank.tables) {
        if (real) {
            put_f64(b, t.base_r);
            for (double v : t.rvals)
                put_f64(b, v);
        } else {
            put_i64(b, t.base_i);
            for (std::int64_t v : t.ivals)
                put_entry(b, bank.kind, v);
        }
    }
}

PciltBank read_basic_body(Reader& r) {
    PciltBank bank;
    bank.fn = read_fn(r);
    bank.kh = r.u32("bank kh");
    bank.kw = r.u32("bank kw");
    const std::uint8_t bits = r.u8("bank act bits");
    if (bits < 1 || bits > 16)
        throw ParseError("bank act bits outside [1, 16]", r.offset() - 1);
    bank.act_card = Cardinality(bits);
    const std::uint8_t kind_raw = r.u8("bank entry kind");
    if (kind_raw > 4)
        throw ParseError("unknown entry kind " + std::to_string(kind_raw), r.offset() - 1);
    bank.kind = static_cast<EntryKind>(kind_raw);
    const bool real = bank.kind == EntryKind::R64;
    if (real) {
        bank.folded_real = r.f64("folded weight");
        bank.ifdr_weight_real = r.f64("ifdr weight");
    } else {
        bank.folded = r.i64("folded weight");
        bank.ifdr_weight = r.i64("ifdr weight");
    }
    bank.build_fn_evals = r.u64("build counter");
    if (bank.kh == 0 || bank.kw == 0 || bank.kh * bank.kw > (1u << 20))
        throw ParseError("implausible bank shape", r.offset());
    const std::uint32_t levels = bank.act_card.levels();
    std::int64_t max_abs = 0;
    for (std::size_t t = 0; t < bank.kh * bank.kw; ++t) {
        Pcilt tab;
        tab.act_card = bank.act_card;
        tab.kind = bank.kind;
        if (real) {
            tab.base_kind = WeightKind::Real64;
            tab.base_r = r.f64("table base");
            tab.rvals.resize(levels);
            for (auto& v : tab.rvals)
                v = r.f64("table entry");
        } else {
            tab.base_i = r.i64("table base");
            tab.ivals.resize(levels);
            for (auto& v : tab.ivals) {
                v = r.entry(bank.kind, "table entry");
                max_abs = std::max(max_abs, v < 0 ? -v : v);
            }
        }
        bank.tables.push_back(std::move(tab));
    }
    bank.max_abs_entry = max_abs;
    return bank;
}

void put_segment_body(Bytes& b, const SegmentBank& bank) {
    put_fn(b, bank.fn);
    put_text(b, bank.plan.to_text());
    put_u8(b, static_cast<std::uint8_t>(bank.kind));
    put_i64(b, bank.folded);
    put_u64(b, bank.build_fn_evals);
    for (std::size_t s = 0; s < bank.tables.size(); ++s) {
        put_u16(b, static_cast<std::uint16_t>(bank.bases[s].size()));
        for (std::int64_t w : bank.bases[s])
            put_i64(b, w);
        for (std::int64_t v : bank.tables[s])
            put_entry(b, bank.kind, v);
    }
}

SegmentBank read_segment_body(Reader& r) {
    SegmentBank bank;
    bank.fn = read_fn(r);
    const std::string plan_text = r.text("segment plan");
    try {
        bank.plan = SegmentPlan::from_text(plan_text);
    } catch (const Error& e) {
        throw ParseError(std::string("bank plan: ") + e.what(), r.offset());
    }
    const std::uint8_t kind_raw = r.u8("bank entry kind");
    if (kind_raw > 3)
        throw ParseError("segment banks store integer entries", r.offset() - 1);
    bank.kind = static_cast<EntryKind>(kind_raw);
    bank.folded = r.i64("folded weight");
    bank.build_fn_evals = r.u64("build counter");
    std::int64_t max_abs = 0;
    for (std::size_t s = 0; s < bank.plan.segments.size(); ++s) {
        const std::uint16_t len = r.u16("segment tuple length");
        if (len != bank.plan.segments[s].size())
            throw ParseError("segment tuple length disagrees with the plan", r.offset() - 2);
        std::vector<std::int64_t> base(len);
        for (auto& w : base)
            w = r.i64("segment base weight");
        std::vector<std::int64_t> table(std::size_t(1) << (len * bank.plan.act_bits));
        for (auto& v : table) {
            v = r.entry(bank.kind, "segment entry");
            max_abs = std::max(max_abs, v < 0 ? -v : v);
        }
        bank.bases.push_back(std::move(base));
        bank.tables.push_back(std::move(table));
    }
    bank.max_abs_entry = max_abs;
    return bank;
}

void put_shared_body(Bytes& b, const SharedBank& bank) {
    put_str(b, bank.fn_id);
    put_i64(b, bank.folded);
    put_u32(b, static_cast<std::uint32_t>(bank.tables.size()));
    for (const SharedBank::UniqueTable& t : bank.tables) {
        put_u16(b, static_cast<std::uint16_t>(t.base.size()));
        for (std::int64_t w : t.base)
            put_i64(b, w);
        put_u8(b, static_cast<std::uint8_t>(t.act_bits));
        put_u8(b, static_cast<std::uint8_t>(t.kind));
        put_u32(b, static_cast<std::uint32_t>(t.entries.size()));
        for (std::int64_t v : t.entries)
            put_entry(b, t.kind, v);
    }
    put_u32(b, static_cast<std::uint32_t>(bank.consumers.size()));
    for (const SharedBank::Consumer& c : bank.consumers) {
        put_u8(b, c.segmented ? 1 : 0);
        if (c.segmented) {
            put_text(b, c.plan.to_text());
        } else {
            put_u32(b, static_cast<std::uint32_t>(c.kh));
            put_u32(b, static_cast<std::uint32_t>(c.kw));
            put_u8(b, static_cast<std::uint8_t>(c.act_bits));
        }
        put_i64(b, c.ifdr_weight);
        put_u32(b, static_cast<std::uint32_t>(c.refs.size()));
        for (const SharedBank::TapRef& ref : c.refs) {
            put_u32(b, ref.table);
            put_u32(b, ref.view_levels);
        }
    }
}

SharedBank read_shared_body(Reader& r) {
    SharedBank bank;
    bank.fn_id = r.str("shared fn id");
    bank.folded = r.i64("shared folded weight");
    const std::uint32_t n_tables = r.u32("unique table count");
    for (std::uint32_t i = 0; i < n_tables; ++i) {
        SharedBank::UniqueTable t;
        const std::uint16_t len = r.u16("tuple length");
        t.base.resize(len);
        for (auto& w : t.base)
            w = r.i64("tuple weight");
        t.act_bits = r.u8("table act bits");
        const std::uint8_t kind_raw = r.u8("table entry kind");
        if (kind_raw > 3)
            throw ParseError("shared tables store integer entries", r.offset() - 1);
        t.kind = static_cast<EntryKind>(kind_raw);
        t.entries.resize(r.u32("table entry count"));
        for (auto& v : t.entries)
            v = r.entry(t.kind, "table entry");
        bank.tables.push_back(std::move(t));
    }
    const std::uint32_t n_consumers = r.u32("consumer count");
    for (std::uint32_t i = 0; i < n_consumers; ++i) {
        SharedBank::Consumer c;
        c.segmented = r.u8("consumer kind") != 0;
        if (c.segmented) {
            try {
                c.plan = SegmentPlan::from_text(r.text("consumer plan"));
            } catch (const Error& e) {
                throw ParseError(std::string("consumer plan: ") + e.what(), r.offset());
            }
            c.kh = c.plan.kh;
            c.kw = c.plan.kw;
            c.act_bits = c.plan.act_bits;
        } else {
            c.kh = r.u32("consumer kh");
            c.kw = r.u32("consumer kw");
            c.act_bits = r.u8("consumer act bits");
        }
        c.ifdr_weight = r.i64("consumer ifdr weight");
        const std::uint32_t n_refs = r.u32("reference count");
        for (std::uint32_t j = 0; j < n_refs; ++j) {
            SharedBank::TapRef ref;
            ref.table = r.u32("reference table");
            ref.view_levels = r.u32("reference view levels");
            if (ref.table >= bank.tables.size())
                throw ParseError("reference to missing table " + std::to_string(ref.table),
                                 r.offset() - 8);
            if (ref.view_levels > bank.tables[ref.table].entries.size())
                throw ParseError("reference view exceeds its table", r.offset() - 4);
            c.refs.push_back(ref);
        }
        bank.consumers.push_back(std::move(c));
    }
    bank.stats.unique_tables = bank.tables.size();
    for (const auto& c : bank.consumers)
        bank.stats.referenced += c.refs.size();
    return bank;
}

void put_learned_body(Bytes& b, const LearnedBank& bank) {
    put_u8(b, static_cast<std::uint8_t>(bank.gran));
    put_u32(b, static_cast<std::uint32_t>(bank.kh));
    put_u32(b, static_cast<std::uint32_t>(bank.kw));
    put_u8(b, static_cast<std::uint8_t>(bank.act_card.bits()));
    put_f64(b, bank.scale);
    for (const auto& tab : bank.base)
        for (double v : tab)
            put_f64(b, v);
    for (double v : bank.table_scales)
        put_f64(b, v);
    for (double v : bank.offset_deltas)
        put_f64(b, v);
    for (const auto& tab : bank.theta)
        for (double v : tab)
            put_f64(b, v);
}

LearnedBank read_learned_body(Reader& r) {
    const std::uint8_t gran_raw = r.u8("granularity");
    if (gran_raw > 3)
        throw ParseError("unknown granularity " + std::to_string(gran_raw), r.offset() - 1);
    const std::size_t kh = r.u32("learned kh");
    const std::size_t kw = r.u32("learned kw");
    const std::uint8_t bits = r.u8("learned act bits");
    if (bits < 1 || bits > 16)
        throw ParseError("learned act bits outside [1, 16]", r.offset() - 1);
    const double scale = r.f64("learned scale");
    const Cardinality card(bits);
    const std::size_t T = kh * kw;
    std::vector<std::vector<double>> base(T, std::vector<double>(card.levels()));
    for (auto& tab : base)
        for (auto& v : tab)
            v = r.f64("base entry");
    LearnedBank bank = LearnedBank::from_tables(kh, kw, card, std::move(base),
                                                static_cast<Granularity>(gran_raw));
    bank.scale = scale;
    for (auto& v : bank.table_scales)
        v = r.f64("table scale");
    for (auto& v : bank.offset_deltas)
        v = r.f64("offset delta");
    for (auto& tab : bank.theta)
        for (auto& v : tab)
            v = r.f64("theta entry");
    return bank;
}

Bytes with_header(BankFileKind kind) {
    Bytes b;
    b.insert(b.end(), kMagic, kMagic + 4);
    put_u8(b, 1); // version
    put_u8(b, static_cast<std::uint8_t>(kind));
    return b;
}

} // namespace

BankFileKind bank_kind(const AnyBank& bank) {
    return std::visit(
        [](const auto& b) -> BankFileKind {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, PciltBank>) return BankFileKind::Basic;
            else if constexpr (std::is_same_v<T, SegmentBank>) return BankFileKind::Segment;
            else if constexpr (std::is_same_v<T, SharedBank>) return BankFileKind::Shared;
            else if constexpr (std::is_same_v<T, LearnedBank>) return BankFileKind::Learned;
            else return BankFileKind::Split;
        },
        bank);
}

const char* bank_kind_name(BankFileKind k) {
    switch (k) {
    case BankFileKind::Basic: return "basic";
    case BankFileKind::Segment: return "segment";
    case BankFileKind::Shared: return "shared";
    case BankFileKind::Learned: return "learned";
    case BankFileKind::Split: return "split";
    }
    return "?";
}

void save_bank(const PciltBank& bank, const std::string& path) {
    Bytes b = with_header(BankFileKind::Basic);
    put_basic_body(b, bank);
    write_file(path, b);
}

void save_bank(const SegmentBank& bank, const std::string& path) {
    Bytes b = with_header(BankFileKind::Segment);
    put_segment_body(b, bank);
    write_file(path, b);
}

void save_bank(const SharedBank& bank, const std::string& path) {
    Bytes b = with_header(BankFileKind::Shared);
    put_shared_body(b, bank);
    write_file(path, b);
}

void save_bank(const LearnedBank& bank, const std::string& path) {
    Bytes b = with_header(BankFileKind::Learned);
    put_learned_body(b, bank);
    write_file(path, b);
}

void save_bank(const SplitBank& bank, const std::string& path) {
    Bytes b = with_header(BankFileKind::Split);
    put_u8(b, static_cast<std::uint8_t>(bank.act_bits));
    put_u8(b, static_cast<std::uint8_t>(bank.part_bits));
    put_basic_body(b, bank.lo);
    put_basic_body(b, bank.hi);
    write_file(path, b);
}

void save_bank(const AnyBank& bank, const std::string& path) {
    std::visit([&](const auto& b) { save_bank(b, path); }, bank);
}

AnyBank load_bank(const std::string& path) {
    Reader r(read_file(path));
    r.expect_magic();
    const std::uint8_t version = r.u8("version");
    if (version != 1)
        throw ParseError("unsupported bank version " + std::to_string(version), 4);
    const std::uint8_t kind = r.u8("bank kind");
    switch (kind) {
    case 0: {
        PciltBank b = read_basic_body(r);
        if (!r.exhausted())
            throw ParseError("trailing bytes after bank payload", r.offset());
        return b;
    }
    case 1: {
        SegmentBank b = read_segment_body(r);
        if (!r.exhausted())
            throw ParseError("trailing bytes after bank payload", r.offset());
        return b;
    }
    case 2: {
        SharedBank b = read_shared_body(r);
        if (!r.exhausted())
            throw ParseError("trailing bytes after bank payload", r.offset());
        return b;
    }
    case 3: {
        LearnedBank b = read_learned_body(r);
        if (!r.exhausted())
            throw ParseError("trailing bytes after bank payload", r.offset());
        return b;
    }
    case 4: {
        SplitBank b;
        b.act_bits = r.u8("split act bits");
        b.part_bits = r.u8("split part bits");
        b.lo = read_basic_body(r);
        b.hi = read_basic_body(r);
        if (!r.exhausted())
            throw ParseError("trailing bytes after bank payload", r.offset());
        if (b.part_bits < 1 || b.part_bits >= b.act_bits)
            throw ParseError("split part bits inconsistent with activation bits", 6);
        return b;
    }
    default:
        throw ParseError("unknown bank kind " + std::to_string(kind), 5);
    }
}

} // namespace pcilt
