#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchfill/adaptation/prefix.hpp"
#include "patchfill/backbone/model.hpp"
#include "patchfill/bench/config.hpp"
#include "patchfill/bench/corpus.hpp"
#include "patchfill/data/masks.hpp"

namespace patchfill::bench {

/// Model names accepted by the protocol.
inline constexpr const char* kModelBase = "patchfill";
inline constexpr const char* kModelPrefix = "patchfill+prefix";
inline constexpr const char* kModelMedian = "median";
inline constexpr const char* kModelLast = "last";

struct ProtocolConfig {
    std::vector<std::filesystem::path> data;
    std::size_t window_length = 96;
    std::size_t patch_length = 16;
    // 0 means non-overlapping windows.
    std::size_t stride = 0;
    std::vector<double> split = {1, 1, 1};
    std::uint64_t split_seed = 0;
    std::vector<double> rates = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<data::MaskPattern> patterns = {data::MaskPattern::random, data::MaskPattern::continuous};
    std::vector<std::string> models = {kModelMedian, kModelLast};
    std::filesystem::path checkpoint;
    std::filesystem::path prefix;
    // Score in the window's original units instead of the normalized space.
    bool raw_metrics = false;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;

    std::size_t effective_stride() const { return stride ? stride : window_length; }
    bool needs_model() const;
    void validate() const;

    /// Keys: data, window_length, patch_length, stride, split, split_seed,
    /// rates, patterns, models, checkpoint, prefix, raw_metrics, seed, batch_size.
    static ProtocolConfig from(const KeyValueConfig& kv);
};

struct Cell {
    std::string model;
    std::string pattern;
    double rate = 0;
    double mse = 0;
    double mae = 0;
    std::size_t count = 0;

    bool operator==(const Cell&) const = default;
};

struct Average {
    std::string model;
    double mse = 0;
    double mae = 0;
    std::size_t count = 0;
};

/// Cells in (model, pattern, rate) config order. A cell whose masks select no
/// position is absent.
struct BenchReport {
    std::string space = "normalized";
    std::uint64_t seed = 0;
    std::vector<std::size_t> test_variables;
    std::vector<Cell> cells;

    /// Per model in order of first appearance: mean of its cells' MSE and MAE,
    /// total count.
    std::vector<Average> averages() const;
};

/// Deterministic evaluation mask seed for one window of one cell.
std::uint64_t eval_mask_seed(std::uint64_t seed, std::size_t variable, std::size_t window_index, double rate,
                             data::MaskPattern pattern);

/// Loads datasets and checkpoints named by the config.
BenchReport run_protocol(const ProtocolConfig& config);

/// Evaluates on an in-memory corpus. `model` is required for the patchfill
/// entries and `prefix` for patchfill+prefix. The model's training variables
/// must not overlap the test part (ConfigError).
BenchReport run_protocol(const ProtocolConfig& config, const Corpus& corpus, backbone::Model<float>* model,
                         const std::vector<std::size_t>& model_train_variables,
                         adaptation::PrefixBundle<float>* prefix = nullptr);

/// model,pattern,rate,mse,mae,count with one row per cell followed by one
/// "average" row per model; numbers in shortest round-trip form.
std::string render_csv(const BenchReport& report);
/// Header record, one record per cell, one per model average.
std::string render_jsonl(const BenchReport& report);
/// Writes report.csv and report.jsonl into `dir` (created if absent).
void render_report(const BenchReport& report, const std::filesystem::path& dir);

/// Inverse of render_csv for the cells; average rows are checked against the
/// recomputed averages. Throws FormatError.
BenchReport parse_report_csv(const std::string& text);

} // namespace patchfill::bench
