#include "patchfill/data/revin.hpp"

#include <cmath>

#include "patchfill/error.hpp"

namespace patchfill::data {

RevinStats revin_stats(std::span<const double> values, std::span<const std::uint8_t> mask, double eps) {
    if (values.size() != mask.size()) throw DimensionError("values and mask lengths differ");
    RevinStats stats;
    stats.eps = eps;
    std::size_t n = 0;
    double sum = 0.0;
    bool constant = true;
    double first = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!mask[i]) continue;
        if (n == 0) first = values[i];
        constant = constant && values[i] == first;
        sum += values[i];
        ++n;
    }
    if (n == 0) {
        stats.degenerate = true;
        return stats;
    }
    if (constant) {
        stats.mean = first;
        stats.std = 0.0;
        return stats;
    }
    stats.mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i]) sq += (values[i] - stats.mean) * (values[i] - stats.mean);
    }
    stats.std = std::sqrt(sq / static_cast<double>(n));
    return stats;
}

std::vector<double> revin_apply(std::span<const double> values, std::span<const std::uint8_t> mask,
                                const RevinStats& stats) {
    std::vector<double> out(values.size(), 0.0);
    const double scale = stats.scale();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i]) out[i] = (values[i] - stats.mean) / scale;
    }
    return out;
}

std::pair<SeriesWindow, RevinStats> revin_normalize(const SeriesWindow& window, double eps) {
    RevinStats stats = revin_stats(window.values, window.mask, eps);
    SeriesWindow out = window;
    out.values = revin_apply(window.values, window.mask, stats);
    return {std::move(out), stats};
}

std::vector<double> revin_denormalize(std::span<const double> values, const RevinStats& stats) {
    std::vector<double> out(values.size());
    const double scale = stats.scale();
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * scale + stats.mean;
    return out;
}

} // namespace patchfill::data
