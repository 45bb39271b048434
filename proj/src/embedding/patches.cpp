#include "patchfill/embedding/patches.hpp"

#include <algorithm>

#include "patchfill/error.hpp"

namespace patchfill::embedding {

PatchSet patchify(const data::SeriesWindow& window, std::size_t patch_length) {
    const std::size_t L = window.length();
    if (patch_length == 0 || L % patch_length != 0) {
        throw ConfigError("window length " + std::to_string(L) + " is not a multiple of patch length " +
                          std::to_string(patch_length));
    }
    PatchSet ps;
    ps.count = L / patch_length;
    ps.length = patch_length;
    ps.values = window.values;
    ps.mask = window.mask;
    ps.ratios.resize(ps.count);
    for (std::size_t j = 0; j < ps.count; ++j) {
        const auto m = ps.patch_mask(j);
        const auto observed = static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
        ps.ratios[j] = 1.0 - static_cast<double>(observed) / static_cast<double>(patch_length);
    }
    return ps;
}

Stats patch_stats(std::span<const double> values, std::span<const std::uint8_t> mask) {
    if (values.size() != mask.size()) throw DimensionError("values and mask lengths differ");
    std::vector<double> seen;
    // Index sums are exact integers, so the slope has a single rounding in
    // the final division whenever the value sums are exact.
    long long si = 0, sii = 0;
    double sy = 0, siy = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!mask[i]) continue;
        seen.push_back(values[i]);
        const auto ii = static_cast<long long>(i);
        si += ii;
        sii += ii * ii;
        sy += values[i];
        siy += static_cast<double>(i) * values[i];
    }
    if (seen.empty()) return {0, 0, 0, 0};
    const auto n = static_cast<long long>(seen.size());
    const long long denom = n * sii - si * si;
    const double trend =
        denom > 0 ? (static_cast<double>(n) * siy - static_cast<double>(si) * sy) / static_cast<double>(denom) : 0.0;
    std::sort(seen.begin(), seen.end());
    const std::size_t k = seen.size();
    const double median = k % 2 ? seen[k / 2] : (seen[k / 2 - 1] + seen[k / 2]) / 2.0;
    return {seen.front(), median, seen.back(), trend};
}

Stats series_stats(std::span<const double> values, std::span<const std::uint8_t> mask) {
    return patch_stats(values, mask);
}

} // namespace patchfill::embedding
