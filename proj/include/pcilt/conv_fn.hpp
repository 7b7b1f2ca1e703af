#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "pcilt/types.hpp"

namespace pcilt {

/// Exhaustive value grid for user-defined convolutional functions,
/// keyed by (weight index, activation level).
struct ValueGrid {
    std::size_t wdomain = 0;  // admissible weight indices [0, wdomain)
    std::uint32_t levels = 0; // activation levels per row
    bool real = false;
    std::vector<std::int64_t> ivals;
    std::vector<double> rvals;

    std::int64_t at_int(std::size_t w, std::uint32_t a) const { return ivals[w * levels + a]; }
    double at_real(std::size_t w, std::uint32_t a) const { return rvals[w * levels + a]; }
};

enum class FnKind : std::uint8_t { Product = 0, LogProduct = 1, Table = 2 };

/// A convolutional function f(weight, activation level) used to fill tables.
/// Evaluation is pure and total over the declared weight domain x [0, levels).
class ConvFn {
public:
    ConvFn() = default;

    FnKind fn_kind() const noexcept { return kind_; }
    const std::string& id() const noexcept { return id_; }
    const ValueGrid* grid() const noexcept { return grid_.get(); }

    /// True when entries built from this fn and weight kind are stored as integers.
    bool integer_entries(WeightKind wk) const noexcept;

    std::int64_t eval_int(std::int64_t w, std::uint32_t a) const;
    double eval_real(double w, std::uint32_t a) const;

    // log_product(w, a) = round(w * ln(1 + a) * kLogScale); ln(1+a) keeps the
    // entry defined at a = 0 and the fixed scale keeps entries integral.
    static constexpr double kLogScale = 16.0;

    friend ConvFn builtin(const std::string& id, std::shared_ptr<const ValueGrid> grid);

private:
    FnKind kind_ = FnKind::Product;
    std::string id_ = "product";
    std::shared_ptr<const ValueGrid> grid_;
};

/// Registry lookup. Valid ids: "product", "log_product", "table".
/// "table" requires a grid; unknown ids raise ConfigError.
ConvFn builtin(const std::string& id, std::shared_ptr<const ValueGrid> grid = nullptr);

} // namespace pcilt
