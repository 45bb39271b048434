#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchfill/data/series.hpp"

namespace patchfill::bench {

/// One dataset of a corpus. Its variables get global ids offset + local index,
/// so ids stay unique across datasets.
struct Dataset {
    data::MultivariateSeries series;
    std::size_t offset = 0;
    data::VariableSplit split;
};

struct Corpus {
    std::vector<Dataset> datasets;

    /// Dataset domain labels in order.
    std::vector<std::string> domains() const;
};

enum class Part { train, val, test };

/// Each dataset is split by variable with seed mix(seed, dataset index).
Corpus make_corpus(std::vector<data::MultivariateSeries> series, const std::vector<double>& ratios,
                   std::uint64_t seed);

/// Domains are the file stems.
Corpus load_corpus(const std::vector<std::filesystem::path>& paths, const std::vector<double>& ratios,
                   std::uint64_t seed);

/// Windows of the requested part; SeriesWindow::variable holds the global id.
std::vector<data::SeriesWindow> corpus_windows(const Corpus& corpus, Part part, std::size_t length,
                                               std::size_t stride);

/// Global ids of the requested part.
std::vector<std::size_t> corpus_variables(const Corpus& corpus, Part part);

} // namespace patchfill::bench
