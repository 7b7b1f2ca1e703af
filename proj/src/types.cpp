#include "pcilt/types.hpp"

#include <algorithm>
#include <string>

namespace pcilt {

Cardinality::Cardinality(unsigned bits) : bits_(bits) {
    if (bits < 1 || bits > 16)
        throw RangeError("cardinality bits must be in [1, 16], got " + std::to_string(bits));
}

QTensor QTensor::make(std::size_t rows, std::size_t cols, Cardinality card,
                      std::vector<std::uint16_t> values) {
    if (rows == 0 || cols == 0)
        throw ShapeError("tensor dimensions must be positive");
    if (values.size() != rows * cols)
        throw ShapeError("tensor payload has " + std::to_string(values.size()) +
                         " values, shape needs " + std::to_string(rows * cols));
    const std::uint32_t levels = card.levels();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] >= levels)
            throw RangeError("activation " + std::to_string(values[i]) + " at index " +
                             std::to_string(i) + " exceeds " + std::to_string(card.bits()) +
                             "-bit cardinality");
    }
    QTensor t;
    t.rows = rows;
    t.cols = cols;
    t.card = card;
    t.values = std::move(values);
    return t;
}

Filter Filter::ints(std::size_t kh, std::size_t kw, unsigned weight_bits,
                    std::vector<std::int32_t> weights, std::int64_t input_weight) {
    if (kh == 0 || kw == 0)
        throw ShapeError("filter dimensions must be positive");
    if (weight_bits < 1 || weight_bits > 16)
        throw RangeError("integer weight bits must be in [1, 16]");
    if (weights.size() != kh * kw)
        throw ShapeError("filter payload has " + std::to_string(weights.size()) +
                         " weights, shape needs " + std::to_string(kh * kw));
    const std::int32_t lo = -(std::int32_t(1) << (weight_bits - 1));
    const std::int32_t hi = (std::int32_t(1) << (weight_bits - 1)) - 1;
    for (std::int32_t w : weights) {
        if (w < lo || w > hi)
            throw RangeError("weight " + std::to_string(w) + " outside signed " +
                             std::to_string(weight_bits) + "-bit range");
    }
    Filter f;
    f.kh = kh;
    f.kw = kw;
    f.kind = WeightKind::IntN;
    f.weight_bits = weight_bits;
    f.iweights = std::move(weights);
    f.input_weight = input_weight;
    return f;
}

Filter Filter::reals(std::size_t kh, std::size_t kw, std::vector<double> weights,
                     double input_weight) {
    if (kh == 0 || kw == 0)
        throw ShapeError("filter dimensions must be positive");
    if (weights.size() != kh * kw)
        throw ShapeError("filter payload has " + std::to_string(weights.size()) +
                         " weights, shape needs " + std::to_string(kh * kw));
    Filter f;
    f.kh = kh;
    f.kw = kw;
    f.kind = WeightKind::Real64;
    f.rweights = std::move(weights);
    f.input_weight_real = input_weight;
    return f;
}

AccTensor AccTensor::zeros(std::size_t rows, std::size_t cols) {
    AccTensor t;
    t.rows = rows;
    t.cols = cols;
    t.values.assign(rows * cols, 0);
    return t;
}

RealTensor RealTensor::zeros(std::size_t rows, std::size_t cols) {
    RealTensor t;
    t.rows = rows;
    t.cols = cols;
    t.values.assign(rows * cols, 0.0);
    return t;
}

std::uint16_t rescale_value(std::uint16_t v, Cardinality from, Cardinality to) {
    if (from == to)
        return v;
    // round-half-up in exact integer arithmetic; intermediates fit in u64
    const std::uint64_t num = std::uint64_t(v) * (to.levels() - 1);
    const std::uint64_t den = from.levels() - 1;
    return static_cast<std::uint16_t>((2 * num + den) / (2 * den));
}

std::vector<QTensor> rescale_to_common_cardinality(const std::vector<QTensor>& tensors,
                                                   std::optional<Cardinality> target) {
    if (tensors.empty())
        throw ConfigError("rescale needs at least one tensor");
    Cardinality common = target.value_or(Cardinality(1));
    if (!target) {
        unsigned max_bits = 1;
        for (const QTensor& t : tensors)
            max_bits = std::max(max_bits, t.card.bits());
        common = Cardinality(max_bits);
    }
    std::vector<QTensor> out;
    out.reserve(tensors.size());
    for (const QTensor& t : tensors) {
        std::vector<std::uint16_t> vals(t.values.size());
        for (std::size_t i = 0; i < vals.size(); ++i)
            vals[i] = rescale_value(t.values[i], t.card, common);
        out.push_back(QTensor::make(t.rows, t.cols, common, std::move(vals)));
    }
    return out;
}

} // namespace pcilt
