#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "patchfill/data/series.hpp"

namespace patchfill::data {

/// Each variable is amplitude * sin(2 pi t / period + phase) + offset + noise,
/// with period, phase, amplitude and offset drawn per variable.
struct SinusoidSpec {
    std::size_t variables = 20;
    std::size_t steps = 492;
    double min_period = 12.0;
    double max_period = 48.0;
    double min_amplitude = 0.5;
    double max_amplitude = 2.0;
    double max_offset = 1.0;
    double noise = 0.01;
    std::uint64_t seed = 1;
    std::string domain = "sinusoid";
};

MultivariateSeries sinusoid_series(const SinusoidSpec& spec);

} // namespace patchfill::data
