#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace patchfill::data {

using Mask = std::vector<std::uint8_t>;

/// T time steps x V variables, stored time-major. mask is 1 where observed.
struct MultivariateSeries {
    std::vector<std::string> names;
    std::size_t steps = 0;
    std::vector<double> values;
    Mask mask;
    std::string domain;
    // Kept verbatim when the source had a timestamp column.
    std::vector<std::string> timestamps;

    std::size_t variables() const { return names.size(); }
    double value(std::size_t t, std::size_t v) const { return values[t * variables() + v]; }
    bool observed(std::size_t t, std::size_t v) const { return mask[t * variables() + v] != 0; }
    std::vector<double> column(std::size_t v) const;
    Mask column_mask(std::size_t v) const;
};

/// One univariate segment of fixed length.
struct SeriesWindow {
    std::vector<double> values;
    Mask mask;
    std::size_t variable = 0;
    std::size_t start = 0;
    std::string domain;

    std::size_t length() const { return values.size(); }
    std::size_t observed_count() const;
};

/// Header row required. A first column named "timestamp" is skipped; empty or
/// NaN cells are missing. Throws ParseError / FormatError / IoError.
MultivariateSeries load_csv(const std::filesystem::path& path);
MultivariateSeries parse_csv(const std::string& text, const std::string& domain = "default");

/// Writes the header, optional timestamps and values (missing cells empty).
void write_csv(const std::filesystem::path& path, const MultivariateSeries& series);
std::string format_csv(const MultivariateSeries& series);

/// 0/1 CSV of the same shape; positions with 0 become missing.
void apply_mask_csv(MultivariateSeries& series, const std::filesystem::path& mask_path);

/// floor((T - L) / stride) + 1 windows per variable when T >= L, variable-major.
std::vector<SeriesWindow> slice_windows(const MultivariateSeries& series, std::size_t length, std::size_t stride);
std::vector<SeriesWindow> slice_windows(const MultivariateSeries& series, std::size_t length, std::size_t stride,
                                        const std::vector<std::size_t>& variables);

struct VariableSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of variable ids cut by largest-remainder quotas; each part
/// is returned sorted. Throws ConfigError when V is smaller than the part count.
VariableSplit split_by_variable(std::size_t variable_count, const std::vector<double>& ratios, std::uint64_t seed);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

} // namespace patchfill::data
