#include "pcilt/conv_fn.hpp"

#include <cmath>

namespace pcilt {

bool ConvFn::integer_entries(WeightKind wk) const noexcept {
    switch (kind_) {
    case FnKind::Product:
        return wk == WeightKind::IntN;
    case FnKind::LogProduct:
        // rounded to an integer either way; storage follows the weight kind
        return wk == WeightKind::IntN;
    case FnKind::Table:
        return !grid_->real;
    }
    return true;
}

std::int64_t ConvFn::eval_int(std::int64_t w, std::uint32_t a) const {
    switch (kind_) {
    case FnKind::Product:
        return w * static_cast<std::int64_t>(a);
    case FnKind::LogProduct:
        return std::llround(static_cast<double>(w) * std::log1p(static_cast<double>(a)) * kLogScale);
    case FnKind::Table: {
        if (w < 0 || static_cast<std::size_t>(w) >= grid_->wdomain)
            throw RangeError("table fn weight index " + std::to_string(w) + " outside grid domain [0, " +
                             std::to_string(grid_->wdomain) + ")");
        if (a >= grid_->levels)
            throw RangeError("table fn activation " + std::to_string(a) + " outside grid levels");
        if (grid_->real)
            throw ConfigError("table fn grid is real-valued; integer evaluation is undefined");
        return grid_->at_int(static_cast<std::size_t>(w), a);
    }
    }
    return 0;
}

double ConvFn::eval_real(double w, std::uint32_t a) const {
    switch (kind_) {
    case FnKind::Product:
        return w * static_cast<double>(a);
    case FnKind::LogProduct:
        return static_cast<double>(std::llround(w * std::log1p(static_cast<double>(a)) * kLogScale));
    case FnKind::Table: {
        const auto wi = static_cast<std::int64_t>(w);
        if (static_cast<double>(wi) != w || wi < 0 || static_cast<std::size_t>(wi) >= grid_->wdomain)
            throw RangeError("table fn weights must be integer indices into the grid domain");
        if (a >= grid_->levels)
            throw RangeError("table fn activation " + std::to_string(a) + " outside grid levels");
        return grid_->real ? grid_->at_real(static_cast<std::size_t>(wi), a)
                           : static_cast<double>(grid_->at_int(static_cast<std::size_t>(wi), a));
    }
    }
    return 0.0;
}

ConvFn builtin(const std::string& id, std::shared_ptr<const ValueGrid> grid) {
    ConvFn fn;
    if (id == "product") {
        fn.kind_ = FnKind::Product;
    } else if (id == "log_product") {
        fn.kind_ = FnKind::LogProduct;
    } else if (id == "table") {
        if (!grid)
            throw ConfigError("table function requires a value grid");
        if (grid->wdomain == 0 || grid->levels == 0)
            throw ConfigError("table function grid must be non-empty");
        if (grid->real ? grid->rvals.size() != grid->wdomain * grid->levels
                       : grid->ivals.size() != grid->wdomain * grid->levels)
            throw ConfigError("table function grid payload does not match its shape");
        fn.kind_ = FnKind::Table;
        fn.grid_ = std::move(grid);
    } else {
        throw ConfigError("unknown function '" + id + "'");
    }
    fn.id_ = id;
    return fn;
}

} // namespace pcilt
