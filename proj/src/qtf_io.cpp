#include "pcilt/qtf_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace pcilt {

namespace {

void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

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
    std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    void expect_magic(const char magic[4]) {
        if (data_.size() < 4 || std::memcmp(data_.data(), magic, 4) != 0)
            throw ParseError(std::string("bad magic, expected \"") + std::string(magic, 4) + "\"", 0);
        pos_ = 4;
    }

private:
    void need(std::size_t n, const char* what) {
        if (pos_ + n > data_.size())
            throw ParseError(std::string("truncated payload while reading ") + what, pos_);
    }

    std::vector<std::uint8_t> data_;
    std::size_t pos_ = 0;
};

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("write to '" + path + "' failed");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

constexpr char kMagic[4] = {'Q', 'T', 'F', '1'};

void put_header(std::vector<std::uint8_t>& b, std::uint8_t dtype, std::uint8_t bits,
                std::uint32_t rows, std::uint32_t cols) {
    b.insert(b.end(), kMagic, kMagic + 4);
    put_u8(b, dtype);
    put_u8(b, bits);
    put_u8(b, 2); // ndim
    put_u32(b, rows);
    put_u32(b, cols);
}

struct Header {
    std::uint8_t dtype = 0;
    std::uint8_t bits = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
};

Header read_header(Reader& r) {
    r.expect_magic(kMagic);
    Header h;
    h.dtype = r.u8("dtype");
    h.bits = r.u8("bits");
    const std::uint8_t ndim = r.u8("ndim");
    if (ndim != 2)
        throw ParseError("unsupported rank " + std::to_string(ndim) + ", only rank 2 is defined",
                         r.offset() - 1);
    h.rows = r.u32("rows");
    h.cols = r.u32("cols");
    if (h.rows == 0 || h.cols == 0)
        throw ParseError("zero dimension in header", r.offset() - 4);
    return h;
}

} // namespace

void save_qtf(const QTensor& t, const std::string& path) {
    std::vector<std::uint8_t> b;
    b.reserve(15 + t.values.size() * 2);
    put_header(b, 0, static_cast<std::uint8_t>(t.card.bits()),
               static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols));
    for (std::uint16_t v : t.values)
        put_u16(b, v);
    write_file(path, b);
}

QTensor load_qtf(const std::string& path) {
    Reader r(read_file(path));
    const Header h = read_header(r);
    if (h.dtype != 0)
        throw ParseError("expected activation tensor (dtype 0), got dtype " + std::to_string(h.dtype), 4);
    if (h.bits < 1 || h.bits > 16)
        throw ParseError("activation bits " + std::to_string(h.bits) + " outside [1, 16]", 5);
    const Cardinality card(h.bits);
    const std::size_t n = std::size_t(h.rows) * h.cols;
    std::vector<std::uint16_t> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = r.offset();
        vals[i] = r.u16("activation value");
        if (vals[i] >= card.levels())
            throw ParseError("activation value " + std::to_string(vals[i]) + " exceeds declared " +
                             std::to_string(h.bits) + "-bit cardinality", at);
    }
    if (!r.exhausted())
        throw ParseError("trailing bytes after payload", r.offset());
    return QTensor::make(h.rows, h.cols, card, std::move(vals));
}

void save_filter_qtf(const Filter& f, const std::string& path) {
    std::vector<std::uint8_t> b;
    if (f.kind == WeightKind::IntN) {
        put_header(b, 1, static_cast<std::uint8_t>(f.weight_bits),
                   static_cast<std::uint32_t>(f.kh), static_cast<std::uint32_t>(f.kw));
        for (std::int32_t w : f.iweights)
            put_u32(b, static_cast<std::uint32_t>(w));
    } else {
        put_header(b, 2, 64, static_cast<std::uint32_t>(f.kh), static_cast<std::uint32_t>(f.kw));
        for (double w : f.rweights)
            put_f64(b, w);
    }
    write_file(path, b);
}

Filter load_filter_qtf(const std::string& path) {
    Reader r(read_file(path));
    const Header h = read_header(r);
    if (h.dtype == 1) {
        if (h.bits < 1 || h.bits > 16)
            throw ParseError("weight bits " + std::to_string(h.bits) + " outside [1, 16]", 5);
        const std::int32_t lo = -(std::int32_t(1) << (h.bits - 1));
        const std::int32_t hi = (std::int32_t(1) << (h.bits - 1)) - 1;
        const std::size_t n = std::size_t(h.rows) * h.cols;
        std::vector<std::int32_t> ws(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = r.offset();
            ws[i] = r.i32("weight value");
            if (ws[i] < lo || ws[i] > hi)
                throw ParseError("weight " + std::to_string(ws[i]) + " outside signed " +
                                 std::to_string(h.bits) + "-bit range", at);
        }
        if (!r.exhausted())
            throw ParseError("trailing bytes after payload", r.offset());
        return Filter::ints(h.rows, h.cols, h.bits, std::move(ws));
    }
    if (h.dtype == 2) {
        if (h.bits != 64)
            throw ParseError("real64 tensors must declare 64 bits", 5);
        const std::size_t n = std::size_t(h.rows) * h.cols;
        std::vector<double> ws(n);
        for (std::size_t i = 0; i < n; ++i)
            ws[i] = r.f64("weight value");
        if (!r.exhausted())
            throw ParseError("trailing bytes after payload", r.offset());
        return Filter::reals(h.rows, h.cols, std::move(ws));
    }
    throw ParseError("expected weight tensor (dtype 1 or 2), got dtype " + std::to_string(h.dtype), 4);
}

void save_grid_qtf(const ValueGrid& g, const std::string& path) {
    std::vector<std::uint8_t> b;
    if (g.real) {
        put_header(b, 2, 64, static_cast<std::uint32_t>(g.wdomain), g.levels);
        for (double v : g.rvals)
            put_f64(b, v);
    } else {
        put_header(b, 1, 32, static_cast<std::uint32_t>(g.wdomain), g.levels);
        for (std::int64_t v : g.ivals) {
            if (v < INT32_MIN || v > INT32_MAX)
                throw RangeError("grid entry " + std::to_string(v) + " does not fit the 32-bit file format");
            put_u32(b, static_cast<std::uint32_t>(static_cast<std::int32_t>(v)));
        }
    }
    write_file(path, b);
}

ValueGrid load_grid_qtf(const std::string& path) {
    Reader r(read_file(path));
    const Header h = read_header(r);
    ValueGrid g;
    g.wdomain = h.rows;
    g.levels = h.cols;
    const std::size_t n = std::size_t(h.rows) * h.cols;
    if (h.dtype == 1) {
        if (h.bits < 1 || h.bits > 32)
            throw ParseError("grid bits " + std::to_string(h.bits) + " outside [1, 32]", 5);
        g.real = false;
        g.ivals.resize(n);
        const std::int64_t lo = h.bits == 32 ? INT32_MIN : -(std::int64_t(1) << (h.bits - 1));
        const std::int64_t hi = h.bits == 32 ? INT32_MAX : (std::int64_t(1) << (h.bits - 1)) - 1;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = r.offset();
            g.ivals[i] = r.i32("grid value");
            if (g.ivals[i] < lo || g.ivals[i] > hi)
                throw ParseError("grid value outside declared width", at);
        }
    } else if (h.dtype == 2) {
        if (h.bits != 64)
            throw ParseError("real64 grids must declare 64 bits", 5);
        g.real = true;
        g.rvals.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            g.rvals[i] = r.f64("grid value");
    } else {
        throw ParseError("grids use dtype 1 or 2, got " + std::to_string(h.dtype), 4);
    }
    if (!r.exhausted())
        throw ParseError("trailing bytes after payload", r.offset());
    return g;
}

} // namespace pcilt
