#include "patchfill/bench/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "patchfill/bench/baselines.hpp"
#include "patchfill/data/views.hpp"
#include "patchfill/error.hpp"
#include "patchfill/random.hpp"
#include "patchfill/training/trainer.hpp"

namespace patchfill::bench {

using json = nlohmann::json;

namespace {

std::string number(double v) { return data::format_double(v); }

double parse_real(const std::string& s, std::size_t line) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError("report line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

std::size_t parse_count(const std::string& s, std::size_t line) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError("report line " + std::to_string(line) + ": bad count '" + s + "'");
    }
    return v;
}

struct Accumulator {
    double sq = 0;
    double abs = 0;
    std::size_t count = 0;

    void add(std::span<const double> imputed, std::span<const double> truth, const data::Mask& eval) {
        for (std::size_t i = 0; i < eval.size(); ++i) {
            if (!eval[i]) continue;
            const double d = imputed[i] - truth[i];
            sq += d * d;
            abs += std::abs(d);
            ++count;
        }
    }
};

const char* kHeader = "model,pattern,rate,mse,mae,count";

} // namespace

bool ProtocolConfig::needs_model() const {
    return std::any_of(models.begin(), models.end(),
                       [](const std::string& m) { return m == kModelBase || m == kModelPrefix; });
}

void ProtocolConfig::validate() const {
    if (window_length == 0 || patch_length == 0 || window_length % patch_length != 0) {
        throw ConfigError("window_length must be a positive multiple of patch_length");
    }
    if (rates.empty()) throw ConfigError("at least one missing rate is required");
    for (double r : rates) {
        if (!(r > 0.0 && r <= 1.0)) throw ConfigError("missing rate " + number(r) + " is outside (0, 1]");
    }
    if (patterns.empty()) throw ConfigError("at least one missing pattern is required");
    if (models.empty()) throw ConfigError("at least one model is required");
    for (const auto& m : models) {
        if (m != kModelBase && m != kModelPrefix && m != kModelMedian && m != kModelLast) {
            throw ConfigError("unknown model '" + m + "'");
        }
    }
    if (std::set<std::string>(models.begin(), models.end()).size() != models.size()) {
        throw ConfigError("models are listed twice");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

ProtocolConfig ProtocolConfig::from(const KeyValueConfig& kv) {
    kv.check_known({"data", "window_length", "patch_length", "stride", "split", "split_seed", "rates", "patterns",
                    "models", "checkpoint", "prefix", "raw_metrics", "seed", "batch_size"});
    ProtocolConfig c;
    for (const auto& p : kv.list("data", {})) c.data.emplace_back(p);
    c.window_length = kv.count("window_length", c.window_length);
    c.patch_length = kv.count("patch_length", c.patch_length);
    c.stride = kv.count("stride", c.stride);
    c.split = kv.reals("split", c.split);
    c.split_seed = kv.seed("split_seed", c.split_seed);
    c.rates = kv.reals("rates", c.rates);
    if (kv.has("patterns")) {
        c.patterns.clear();
        for (const auto& p : kv.list("patterns", {})) c.patterns.push_back(data::parse_pattern(p));
    }
    c.models = kv.list("models", c.models);
    c.checkpoint = kv.text("checkpoint", "");
    c.prefix = kv.text("prefix", "");
    c.raw_metrics = kv.flag("raw_metrics", c.raw_metrics);
    c.seed = kv.seed("seed", c.seed);
    c.batch_size = kv.count("batch_size", c.batch_size);
    if (c.data.empty()) throw ConfigError("config key 'data' is required");
    c.validate();
    return c;
}

std::vector<Average> BenchReport::averages() const {
    std::vector<Average> out;
    std::vector<std::size_t> cells_per;
    for (const auto& c : cells) {
        auto it = std::find_if(out.begin(), out.end(), [&](const Average& a) { return a.model == c.model; });
        if (it == out.end()) {
            out.push_back({c.model, 0, 0, 0});
            cells_per.push_back(0);
            it = out.end() - 1;
        }
        const std::size_t k = static_cast<std::size_t>(it - out.begin());
        it->mse += c.mse;
        it->mae += c.mae;
        it->count += c.count;
        ++cells_per[k];
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].mse /= static_cast<double>(cells_per[k]);
        out[k].mae /= static_cast<double>(cells_per[k]);
    }
    return out;
}

std::uint64_t eval_mask_seed(std::uint64_t seed, std::size_t variable, std::size_t window_index, double rate,
                             data::MaskPattern pattern) {
    return mix_seed({seed, variable, window_index, static_cast<std::uint64_t>(std::llround(rate * 1000.0)),
                     static_cast<std::uint64_t>(pattern)});
}

BenchReport run_protocol(const ProtocolConfig& config, const Corpus& corpus, backbone::Model<float>* model,
                         const std::vector<std::size_t>& model_train_variables,
                         adaptation::PrefixBundle<float>* prefix) {
    config.validate();
    const std::size_t L = config.window_length;
    BenchReport report;
    report.space = config.raw_metrics ? "raw" : "normalized";
    report.seed = config.seed;
    report.test_variables = corpus_variables(corpus, Part::test);

    const bool wants_prefix =
        std::find(config.models.begin(), config.models.end(), kModelPrefix) != config.models.end();
    if (config.needs_model()) {
        if (model == nullptr) throw ConfigError("patchfill models need a checkpoint");
        if (model->config.window_length != L) {
            throw ConfigError("checkpoint window_length " + std::to_string(model->config.window_length) +
                              " does not match protocol window_length " + std::to_string(L));
        }
        if (model->config.patch_length != config.patch_length) {
            throw ConfigError("checkpoint patch_length " + std::to_string(model->config.patch_length) +
                              " does not match protocol patch_length " + std::to_string(config.patch_length));
        }
        // Leakage guard: no scored variable may have been seen in training.
        const std::set<std::size_t> seen(model_train_variables.begin(), model_train_variables.end());
        for (std::size_t v : report.test_variables) {
            if (seen.count(v)) {
                throw ConfigError("test variable " + std::to_string(v) +
                                  " was used to train the checkpoint; check split and split_seed");
            }
        }
    }
    if (wants_prefix && prefix == nullptr) throw ConfigError("patchfill+prefix needs a prefix file");
    if (wants_prefix) backbone::check_compatible(model->config, prefix->base);

    const auto windows = corpus_windows(corpus, Part::test, L, config.effective_stride());
    // Index of each window among its variable's windows.
    std::vector<std::size_t> window_index(windows.size());
    {
        std::map<std::size_t, std::size_t> next;
        for (std::size_t i = 0; i < windows.size(); ++i) window_index[i] = next[windows[i].variable]++;
    }

    for (const auto& model_name : config.models) {
        for (const auto pattern : config.patterns) {
            for (const double rate : config.rates) {
                std::vector<data::MaskedView> views;
                std::vector<data::SeriesWindow> visible;
                for (std::size_t i = 0; i < windows.size(); ++i) {
                    const auto& w = windows[i];
                    const auto keep = data::make_mask(
                        pattern, L, rate, eval_mask_seed(config.seed, w.variable, window_index[i], rate, pattern));
                    auto view = data::make_view(w, keep);
                    if (std::none_of(view.hidden.begin(), view.hidden.end(), [](auto h) { return h != 0; })) continue;
                    data::SeriesWindow vis = w;
                    vis.mask = data::compose(w.mask, keep);
                    views.push_back(std::move(view));
                    visible.push_back(std::move(vis));
                }
                if (views.empty()) continue;

                std::vector<std::vector<double>> normalized_out;
                if (model_name == kModelBase || model_name == kModelPrefix) {
                    std::vector<data::SeriesWindow> inputs;
                    for (const auto& v : views) inputs.push_back(v.input);
                    backbone::PrefixFn<float> fn;
                    numerics::ParameterStore<float>* overlay = nullptr;
                    if (model_name == kModelPrefix) {
                        fn = adaptation::domain_prefix_fn<float>(model->config, prefix->config.beta);
                        overlay = &prefix->params;
                    }
                    normalized_out = backbone::predict(*model, std::span<const data::SeriesWindow>(inputs),
                                                       config.batch_size, fn, overlay);
                }

                Accumulator acc;
                for (std::size_t i = 0; i < views.size(); ++i) {
                    const auto& v = views[i];
                    const data::SeriesWindow& raw = visible[i];
                    std::vector<double> raw_imputed;
                    if (model_name == kModelMedian) raw_imputed = impute_median(raw);
                    else if (model_name == kModelLast) raw_imputed = impute_last(raw);
                    if (config.raw_metrics) {
                        std::vector<double> truth(L);
                        for (std::size_t t = 0; t < L; ++t) truth[t] = v.native[t] ? raw.values[t] : 0.0;
                        if (raw_imputed.empty()) raw_imputed = data::revin_denormalize(normalized_out[i], v.stats);
                        acc.add(raw_imputed, truth, v.hidden);
                    } else {
                        std::vector<double> out = raw_imputed.empty()
                                                      ? normalized_out[i]
                                                      : data::revin_apply(raw_imputed, data::Mask(L, 1), v.stats);
                        acc.add(out, v.target, v.hidden);
                    }
                }
                if (acc.count == 0) continue;
                report.cells.push_back({model_name, data::to_string(pattern), rate,
                                        acc.sq / static_cast<double>(acc.count),
                                        acc.abs / static_cast<double>(acc.count), acc.count});
            }
        }
    }
    return report;
}

BenchReport run_protocol(const ProtocolConfig& config) {
    config.validate();
    const Corpus corpus = load_corpus(config.data, config.split, config.split_seed);
    std::optional<backbone::Model<float>> model;
    std::optional<adaptation::PrefixBundle<float>> prefix;
    std::vector<std::size_t> train_vars;
    if (config.needs_model()) {
        if (config.checkpoint.empty()) throw ConfigError("config key 'checkpoint' is required for patchfill models");
        const auto ckpt = numerics::Checkpoint::load(config.checkpoint);
        model = backbone::from_checkpoint<float>(ckpt);
        if (!ckpt.contains("meta.train_vars")) {
            throw ConfigError("checkpoint does not record its training variables; cannot rule out leakage");
        }
        const auto ids = training::read_train_variables(ckpt);
        train_vars.assign(ids.begin(), ids.end());
        if (std::find(config.models.begin(), config.models.end(), kModelPrefix) != config.models.end()) {
            if (config.prefix.empty()) throw ConfigError("config key 'prefix' is required for patchfill+prefix");
            prefix = adaptation::prefix_from_checkpoint<float>(numerics::Checkpoint::load(config.prefix),
                                                               model->config);
        }
    }
    return run_protocol(config, corpus, model ? &*model : nullptr, train_vars, prefix ? &*prefix : nullptr);
}

std::string render_csv(const BenchReport& report) {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& c : report.cells) {
        out += c.model + "," + c.pattern + "," + number(c.rate) + "," + number(c.mse) + "," + number(c.mae) + "," +
               std::to_string(c.count) + "\n";
    }
    for (const auto& a : report.averages()) {
        out += a.model + ",average,," + number(a.mse) + "," + number(a.mae) + "," + std::to_string(a.count) + "\n";
    }
    return out;
}

std::string render_jsonl(const BenchReport& report) {
    std::string out;
    json header = {{"event", "header"},
                   {"space", report.space},
                   {"seed", report.seed},
                   {"test_variables", report.test_variables},
                   {"cells", report.cells.size()}};
    out += header.dump() + "\n";
    for (const auto& c : report.cells) {
        json rec = {{"model", c.model}, {"pattern", c.pattern}, {"rate", c.rate},
                    {"mse", c.mse},     {"mae", c.mae},         {"count", c.count}};
        out += rec.dump() + "\n";
    }
    for (const auto& a : report.averages()) {
        json rec = {{"model", a.model}, {"pattern", "average"}, {"mse", a.mse}, {"mae", a.mae}, {"count", a.count}};
        out += rec.dump() + "\n";
    }
    return out;
}

void render_report(const BenchReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    for (const auto& [name, text] : {std::pair{"report.csv", render_csv(report)},
                                     std::pair{"report.jsonl", render_jsonl(report)}}) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << text;
        out.flush();
        if (!out) throw IoError("cannot write " + path.string());
    }
}

BenchReport parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader) throw FormatError("report CSV must start with '" + std::string(kHeader) + "'");
    BenchReport report;
    std::vector<Average> listed;
    std::size_t number_line = 1;
    while (std::getline(in, line)) {
        ++number_line;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream row(line);
        std::string item;
        while (std::getline(row, item, ',')) f.push_back(item);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 6) throw FormatError("report line " + std::to_string(number_line) + ": expected 6 fields");
        if (f[1] == "average") {
            listed.push_back({f[0], parse_real(f[3], number_line), parse_real(f[4], number_line),
                              parse_count(f[5], number_line)});
            continue;
        }
        if (!listed.empty()) throw FormatError("report line " + std::to_string(number_line) + ": cell after averages");
        report.cells.push_back({f[0], f[1], parse_real(f[2], number_line), parse_real(f[3], number_line),
                                parse_real(f[4], number_line), parse_count(f[5], number_line)});
    }
    const auto expected = report.averages();
    if (expected.size() != listed.size()) throw FormatError("report average rows do not match its cells");
    for (std::size_t i = 0; i < listed.size(); ++i) {
        const auto& a = listed[i];
        const auto& e = expected[i];
        if (a.model != e.model || a.count != e.count || std::abs(a.mse - e.mse) > 1e-12 ||
            std::abs(a.mae - e.mae) > 1e-12) {
            throw FormatError("average row for " + a.model + " does not match its cells");
        }
    }
    return report;
}

} // namespace patchfill::bench
