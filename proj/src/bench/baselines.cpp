#include "patchfill/bench/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "patchfill/error.hpp"

namespace patchfill::bench {

std::vector<double> impute_median(const data::SeriesWindow& window) {
    std::vector<double> seen;
    for (std::size_t i = 0; i < window.length(); ++i)
        if (window.mask[i]) seen.push_back(window.values[i]);
    double fill = 0.0;
    if (!seen.empty()) {
        std::sort(seen.begin(), seen.end());
        const std::size_t n = seen.size();
        fill = n % 2 ? seen[n / 2] : (seen[n / 2 - 1] + seen[n / 2]) / 2.0;
    }
    std::vector<double> out(window.length());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = window.mask[i] ? window.values[i] : fill;
    return out;
}

std::vector<double> impute_last(const data::SeriesWindow& window) {
    const std::size_t n = window.length();
    std::vector<double> out(n, 0.0);
    std::size_t first = n;
    for (std::size_t i = 0; i < n; ++i) {
        if (window.mask[i]) {
            first = i;
            break;
        }
    }
    if (first == n) return out;
    double last = window.values[first];
    for (std::size_t i = 0; i < n; ++i) {
        if (window.mask[i]) last = window.values[i];
        out[i] = last;
    }
    return out;
}

Metrics metric_mse_mae(std::span<const double> imputed, std::span<const double> truth,
                       std::span<const std::uint8_t> eval_mask) {
    if (imputed.size() != truth.size() || truth.size() != eval_mask.size()) {
        throw DimensionError("metric inputs have lengths " + std::to_string(imputed.size()) + ", " +
                             std::to_string(truth.size()) + " and " + std::to_string(eval_mask.size()));
    }
    Metrics m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!eval_mask[i]) continue;
        const double d = imputed[i] - truth[i];
        m.mse += d * d;
        m.mae += std::abs(d);
        ++m.count;
    }
    if (m.count == 0) throw UndefinedMetric("evaluation mask selects no positions");
    m.mse /= static_cast<double>(m.count);
    m.mae /= static_cast<double>(m.count);
    return m;
}

} // namespace patchfill::bench
