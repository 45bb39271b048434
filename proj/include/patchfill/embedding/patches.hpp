#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "patchfill/data/series.hpp"

namespace patchfill::embedding {

/// (min, median, max, trend) of the observed points.
using Stats = std::array<double, 4>;

/// N non-overlapping patches of length P, stored patch-major.
struct PatchSet {
    std::size_t count = 0;
    std::size_t length = 0;
    std::vector<double> values;
    data::Mask mask;
    // Fraction of each patch that is missing.
    std::vector<double> ratios;

    std::span<const double> patch(std::size_t j) const { return {values.data() + j * length, length}; }
    std::span<const std::uint8_t> patch_mask(std::size_t j) const { return {mask.data() + j * length, length}; }
};

/// Throws ConfigError unless the window length is a multiple of P.
PatchSet patchify(const data::SeriesWindow& window, std::size_t patch_length);

/// Observed points only. The trend is the least-squares slope against raw
/// integer indices; a single observed point has trend 0 and an empty input
/// gives the zero vector.
Stats patch_stats(std::span<const double> values, std::span<const std::uint8_t> mask);
Stats series_stats(std::span<const double> values, std::span<const std::uint8_t> mask);

} // namespace patchfill::embedding
