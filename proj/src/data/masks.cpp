#include "patchfill/data/masks.hpp"

#include <cmath>
#include <numeric>

#include "patchfill/random.hpp"
#include "patchfill/error.hpp"

namespace patchfill::data {

namespace {

void check_rate(double rate) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("missing rate must lie in [0, 1]");
}

} // namespace

std::string to_string(MaskPattern p) {
    return p == MaskPattern::random ? "random" : "continuous";
}

MaskPattern parse_pattern(const std::string& name) {
    if (name == "random") return MaskPattern::random;
    if (name == "continuous") return MaskPattern::continuous;
    throw ConfigError("unknown mask pattern '" + name + "' (expected random or continuous)");
}

std::size_t missing_count(std::size_t length, double rate) {
    check_rate(rate);
    // Absorb representation error such as 100 * 0.29 = 28.999999999999996.
    const double n = std::floor(static_cast<double>(length) * rate + 1e-9);
    return std::min(length, static_cast<std::size_t>(n));
}

Mask mask_random(std::size_t length, double rate, std::uint64_t seed) {
    const std::size_t drop = missing_count(length, rate);
    std::vector<std::size_t> idx(length);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    Mask mask(length, 1);
    // Partial Fisher-Yates: the first `drop` slots are a uniform sample.
    for (std::size_t i = 0; i < drop; ++i) {
        std::swap(idx[i], idx[i + uniform_index(rng, length - i)]);
        mask[idx[i]] = 0;
    }
    return mask;
}

Mask mask_continuous(std::size_t length, double rate, std::uint64_t seed) {
    const std::size_t run = missing_count(length, rate);
    Mask mask(length, 1);
    if (run == 0) return mask;
    Rng rng(seed);
    const std::size_t start = uniform_index(rng, length - run + 1);
    for (std::size_t i = start; i < start + run; ++i) mask[i] = 0;
    return mask;
}

Mask make_mask(MaskPattern pattern, std::size_t length, double rate, std::uint64_t seed) {
    return pattern == MaskPattern::random ? mask_random(length, rate, seed) : mask_continuous(length, rate, seed);
}

Mask compose(const Mask& a, const Mask& b) {
    if (a.size() != b.size()) throw DimensionError("cannot compose masks of different lengths");
    Mask out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
    return out;
}

} // namespace patchfill::data
