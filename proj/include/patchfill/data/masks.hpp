#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "patchfill/data/series.hpp"

namespace patchfill::data {

enum class MaskPattern { random, continuous };

std::string to_string(MaskPattern p);
MaskPattern parse_pattern(const std::string& name);

/// Number of artificially missing points, floor(L * rate).
std::size_t missing_count(std::size_t length, double rate);

/// Exactly floor(L * rate) zeros at uniformly chosen positions.
Mask mask_random(std::size_t length, double rate, std::uint64_t seed);

/// One contiguous run of floor(L * rate) zeros starting uniformly in [0, L - run].
Mask mask_continuous(std::size_t length, double rate, std::uint64_t seed);

Mask make_mask(MaskPattern pattern, std::size_t length, double rate, std::uint64_t seed);

/// Elementwise AND of two masks.
Mask compose(const Mask& a, const Mask& b);

} // namespace patchfill::data
