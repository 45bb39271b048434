#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "patchfill/data/series.hpp"

namespace patchfill::data {

inline constexpr double kRevinEps = 1e-10;

struct RevinStats {
    double mean = 0.0;
    double std = 1.0;
    double eps = kRevinEps;
    // No observed point: neutral statistics were substituted.
    bool degenerate = false;

    // A constant window keeps unit scale so hidden points never blow up.
    double scale() const { return std > 0.0 ? std::sqrt(std * std + eps) : 1.0; }
};

/// Standardizes observed positions with statistics over observed positions only
/// (population variance); missing positions become 0.
std::pair<SeriesWindow, RevinStats> revin_normalize(const SeriesWindow& window, double eps = kRevinEps);

RevinStats revin_stats(std::span<const double> values, std::span<const std::uint8_t> mask, double eps = kRevinEps);
std::vector<double> revin_apply(std::span<const double> values, std::span<const std::uint8_t> mask,
                                const RevinStats& stats);

std::vector<double> revin_denormalize(std::span<const double> values, const RevinStats& stats);

} // namespace patchfill::data
