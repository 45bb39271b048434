#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "patchfill/data/series.hpp"

namespace patchfill::bench {

/// Missing positions take the median of the observed values (mean of the two
/// central values for an even count); a fully missing window becomes zeros.
std::vector<double> impute_median(const data::SeriesWindow& window);

/// Forward fill from the latest observation; positions before the first
/// observation take its value; a fully missing window becomes zeros.
std::vector<double> impute_last(const data::SeriesWindow& window);

struct Metrics {
    double mse = 0;
    double mae = 0;
    std::size_t count = 0;
};

/// Means over positions with eval_mask == 1. Throws UndefinedMetric when the
/// mask selects nothing, DimensionError on length mismatch.
Metrics metric_mse_mae(std::span<const double> imputed, std::span<const double> truth,
                       std::span<const std::uint8_t> eval_mask);

} // namespace patchfill::bench
