#include "patchfill/bench/corpus.hpp"

#include "patchfill/error.hpp"
#include "patchfill/random.hpp"

namespace patchfill::bench {

namespace {

const std::vector<std::size_t>& part_of(const Dataset& d, Part part) {
    switch (part) {
    case Part::train: return d.split.train;
    case Part::val: return d.split.val;
    case Part::test: return d.split.test;
    }
    throw InvariantViolation("unknown corpus part");
}

} // namespace

std::vector<std::string> Corpus::domains() const {
    std::vector<std::string> out;
    for (const auto& d : datasets) out.push_back(d.series.domain);
    return out;
}

Corpus make_corpus(std::vector<data::MultivariateSeries> series, const std::vector<double>& ratios,
                   std::uint64_t seed) {
    if (series.empty()) throw ConfigError("corpus has no datasets");
    for (std::size_t i = 0; i < series.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (series[j].domain == series[i].domain) {
                throw ConfigError("two datasets share the domain label '" + series[i].domain + "'");
            }
        }
    }
    Corpus c;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        Dataset d;
        d.split = data::split_by_variable(series[i].variables(), ratios, mix_seed({seed, i}));
        d.offset = offset;
        offset += series[i].variables();
        d.series = std::move(series[i]);
        c.datasets.push_back(std::move(d));
    }
    return c;
}

Corpus load_corpus(const std::vector<std::filesystem::path>& paths, const std::vector<double>& ratios,
                   std::uint64_t seed) {
    std::vector<data::MultivariateSeries> series;
    for (const auto& p : paths) series.push_back(data::load_csv(p));
    return make_corpus(std::move(series), ratios, seed);
}

std::vector<data::SeriesWindow> corpus_windows(const Corpus& corpus, Part part, std::size_t length,
                                               std::size_t stride) {
    std::vector<data::SeriesWindow> out;
    for (const auto& d : corpus.datasets) {
        for (auto& w : data::slice_windows(d.series, length, stride, part_of(d, part))) {
            w.variable += d.offset;
            out.push_back(std::move(w));
        }
    }
    return out;
}

std::vector<std::size_t> corpus_variables(const Corpus& corpus, Part part) {
    std::vector<std::size_t> out;
    for (const auto& d : corpus.datasets)
        for (std::size_t v : part_of(d, part)) out.push_back(d.offset + v);
    return out;
}

} // namespace patchfill::bench
