#pragma once

#include "patchfill/data/revin.hpp"
#include "patchfill/data/series.hpp"

namespace patchfill::data {

/// A raw window with extra positions hidden, normalized with statistics of
/// what remains visible.
struct MaskedView {
    SeriesWindow input;          // normalized, 0 where hidden or natively missing
    RevinStats stats;
    std::vector<double> target;  // every native observation under `stats`, 0 elsewhere
    Mask native;                 // the raw window's own mask
    Mask hidden;                 // 1 where an observed point was hidden by the view
};

/// `keep` is 1 where the view may see the point; it is composed with the
/// window's native mask.
MaskedView make_view(const SeriesWindow& raw, const Mask& keep);

} // namespace patchfill::data
