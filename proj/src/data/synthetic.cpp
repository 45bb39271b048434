#include "patchfill/data/synthetic.hpp"

#include <cmath>

#include "patchfill/random.hpp"
#include "patchfill/error.hpp"

namespace patchfill::data {

MultivariateSeries sinusoid_series(const SinusoidSpec& spec) {
    if (spec.variables == 0 || spec.steps == 0) throw ConfigError("synthetic corpus needs variables and steps");
    if (!(spec.min_period > 0.0) || spec.max_period < spec.min_period) throw ConfigError("bad period range");
    MultivariateSeries s;
    s.domain = spec.domain;
    s.steps = spec.steps;
    const std::size_t V = spec.variables;
    s.values.assign(spec.steps * V, 0.0);
    s.mask.assign(spec.steps * V, 1);
    Rng rng(spec.seed);
    for (std::size_t v = 0; v < V; ++v) {
        s.names.push_back("s" + std::to_string(v));
        const double period = uniform_real(rng, spec.min_period, spec.max_period);
        const double phase = uniform_real(rng, 0.0, 6.283185307179586);
        const double amplitude = uniform_real(rng, spec.min_amplitude, spec.max_amplitude);
        const double offset = uniform_real(rng, -spec.max_offset, spec.max_offset);
        for (std::size_t t = 0; t < spec.steps; ++t) {
            const double clean = amplitude * std::sin(6.283185307179586 * static_cast<double>(t) / period + phase);
            s.values[t * V + v] = clean + offset + spec.noise * standard_normal(rng);
        }
    }
    return s;
}

} // namespace patchfill::data
