#include "patchfill/data/series.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "patchfill/random.hpp"
#include "patchfill/error.hpp"

namespace patchfill::data {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(trim(std::string_view(line).substr(start)));
            break;
        }
        cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
        start = comma + 1;
    }
    return cells;
}

std::vector<std::string> read_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        lines.push_back(line);
    }
    return lines;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool is_timestamp_header(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    return lower == "timestamp";
}

} // namespace

std::vector<double> MultivariateSeries::column(std::size_t v) const {
    std::vector<double> out(steps);
    for (std::size_t t = 0; t < steps; ++t) out[t] = value(t, v);
    return out;
}

Mask MultivariateSeries::column_mask(std::size_t v) const {
    Mask out(steps);
    for (std::size_t t = 0; t < steps; ++t) out[t] = mask[t * variables() + v];
    return out;
}

std::size_t SeriesWindow::observed_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

MultivariateSeries parse_csv(const std::string& text, const std::string& domain) {
    const auto lines = read_lines(text);
    if (lines.empty()) throw FormatError("CSV has no header row");
    auto header = split_line(lines.front());
    const bool has_time = !header.empty() && is_timestamp_header(header.front());
    MultivariateSeries s;
    s.domain = domain;
    s.names.assign(header.begin() + (has_time ? 1 : 0), header.end());
    const std::size_t V = s.names.size();
    if (V == 0) throw FormatError("CSV header has no variable columns");
    s.steps = lines.size() - 1;
    s.values.assign(s.steps * V, 0.0);
    s.mask.assign(s.steps * V, 0);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = split_line(lines[r]);
        if (cells.size() != header.size()) {
            throw FormatError("ragged CSV: row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(header.size()));
        }
        if (has_time) s.timestamps.push_back(cells.front());
        for (std::size_t v = 0; v < V; ++v) {
            const std::string& cell = cells[v + (has_time ? 1 : 0)];
            const std::size_t idx = (r - 1) * V + v;
            if (cell.empty()) continue;
            double x = 0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
            if (ec != std::errc() || ptr != cell.data() + cell.size()) {
                throw ParseError("non-numeric cell '" + cell + "'", r + 1, v + (has_time ? 2 : 1));
            }
            if (std::isnan(x)) continue;
            if (!std::isfinite(x)) throw ParseError("infinite cell '" + cell + "'", r + 1, v + (has_time ? 2 : 1));
            s.values[idx] = x;
            s.mask[idx] = 1;
        }
    }
    return s;
}

MultivariateSeries load_csv(const std::filesystem::path& path) {
    return parse_csv(read_file(path), path.stem().string());
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string format_csv(const MultivariateSeries& series) {
    std::string out;
    const bool has_time = !series.timestamps.empty();
    if (has_time) out += "timestamp,";
    for (std::size_t v = 0; v < series.variables(); ++v) {
        if (v) out += ',';
        out += series.names[v];
    }
    out += '\n';
    for (std::size_t t = 0; t < series.steps; ++t) {
        if (has_time) out += series.timestamps[t] + ",";
        for (std::size_t v = 0; v < series.variables(); ++v) {
            if (v) out += ',';
            if (series.observed(t, v)) out += format_double(series.value(t, v));
        }
        out += '\n';
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const MultivariateSeries& series) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_csv(series);
    if (!out) throw IoError("write failed for " + path.string());
}

void apply_mask_csv(MultivariateSeries& series, const std::filesystem::path& mask_path) {
    const MultivariateSeries m = load_csv(mask_path);
    if (m.steps != series.steps || m.variables() != series.variables()) {
        throw FormatError("mask file shape " + std::to_string(m.steps) + "x" + std::to_string(m.variables()) +
                          " does not match data " + std::to_string(series.steps) + "x" +
                          std::to_string(series.variables()));
    }
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        const double x = m.values[i];
        if (!m.mask[i] || (x != 0.0 && x != 1.0)) {
            throw ParseError("mask cells must be 0 or 1", i / m.variables() + 2, i % m.variables() + 1);
        }
        if (x == 0.0) series.mask[i] = 0;
    }
}

std::vector<SeriesWindow> slice_windows(const MultivariateSeries& series, std::size_t length, std::size_t stride,
                                        const std::vector<std::size_t>& variables) {
    if (length == 0 || stride == 0) throw ConfigError("window length and stride must be at least 1");
    std::vector<SeriesWindow> out;
    if (series.steps < length) return out;
    const std::size_t per_variable = (series.steps - length) / stride + 1;
    out.reserve(per_variable * variables.size());
    for (std::size_t v : variables) {
        if (v >= series.variables()) throw ConfigError("variable id out of range: " + std::to_string(v));
        for (std::size_t w = 0; w < per_variable; ++w) {
            SeriesWindow win;
            win.variable = v;
            win.start = w * stride;
            win.domain = series.domain;
            win.values.resize(length);
            win.mask.resize(length);
            for (std::size_t i = 0; i < length; ++i) {
                win.values[i] = series.value(win.start + i, v);
                win.mask[i] = series.mask[(win.start + i) * series.variables() + v];
            }
            out.push_back(std::move(win));
        }
    }
    return out;
}

std::vector<SeriesWindow> slice_windows(const MultivariateSeries& series, std::size_t length, std::size_t stride) {
    std::vector<std::size_t> all(series.variables());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return slice_windows(series, length, stride, all);
}

VariableSplit split_by_variable(std::size_t variable_count, const std::vector<double>& ratios, std::uint64_t seed) {
    if (ratios.size() != 3) throw ConfigError("split needs exactly three ratios (train, val, test)");
    for (double r : ratios) {
        if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("split ratios must be positive");
    }
    if (variable_count < ratios.size()) {
        throw ConfigError("cannot split " + std::to_string(variable_count) + " variables into " +
                          std::to_string(ratios.size()) + " parts");
    }
    std::vector<std::size_t> order(variable_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = variable_count; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    const double total = ratios[0] + ratios[1] + ratios[2];
    std::size_t sizes[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < 3; ++p) {
        const double quota = static_cast<double>(variable_count) * ratios[p] / total;
        sizes[p] = static_cast<std::size_t>(std::floor(quota));
        remainders[p] = quota - static_cast<double>(sizes[p]);
        assigned += sizes[p];
    }
    while (assigned < variable_count) {
        std::size_t best = 0;
        for (std::size_t p = 1; p < 3; ++p)
            if (remainders[p] > remainders[best]) best = p;
        ++sizes[best];
        remainders[best] = -1.0;
        ++assigned;
    }
    // Every part gets at least one variable.
    for (std::size_t p = 0; p < 3; ++p) {
        if (sizes[p] == 0) {
            std::size_t donor = 0;
            for (std::size_t q = 1; q < 3; ++q)
                if (sizes[q] > sizes[donor]) donor = q;
            --sizes[donor];
            ++sizes[p];
        }
    }
    VariableSplit split;
    std::vector<std::size_t>* parts[3] = {&split.train, &split.val, &split.test};
    std::size_t at = 0;
    for (std::size_t p = 0; p < 3; ++p) {
        parts[p]->assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(at + sizes[p]));
        std::sort(parts[p]->begin(), parts[p]->end());
        at += sizes[p];
    }
    return split;
}

} // namespace patchfill::data
