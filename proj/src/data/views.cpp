#include "patchfill/data/views.hpp"

#include "patchfill/data/masks.hpp"
#include "patchfill/error.hpp"

namespace patchfill::data {

MaskedView make_view(const SeriesWindow& raw, const Mask& keep) {
    if (keep.size() != raw.length()) throw DimensionError("view mask length differs from window length");
    MaskedView v;
    SeriesWindow visible = raw;
    visible.mask = compose(raw.mask, keep);
    auto [normalized, stats] = revin_normalize(visible);
    v.input = std::move(normalized);
    v.stats = stats;
    v.native = raw.mask;
    v.hidden.assign(raw.length(), 0);
    v.target = revin_apply(raw.values, raw.mask, stats);
    for (std::size_t i = 0; i < raw.length(); ++i) v.hidden[i] = (raw.mask[i] && !keep[i]) ? 1 : 0;
    return v;
}

} // namespace patchfill::data
