#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "json.hpp"
#include "patchfill/adaptation/forecast.hpp"
#include "patchfill/adaptation/intervar.hpp"
#include "patchfill/adaptation/prefix.hpp"
#include "patchfill/bench/config.hpp"
#include "patchfill/bench/corpus.hpp"
#include "patchfill/bench/protocol.hpp"
#include "patchfill/data/masks.hpp"
#include "patchfill/data/synthetic.hpp"
#include "patchfill/data/views.hpp"
#include "patchfill/error.hpp"
#include "patchfill/training/trainer.hpp"

namespace patchfill::cli {

using bench::KeyValueConfig;
using json = nlohmann::json;

namespace {

const std::set<std::string> kTrainKeys = {"alpha",     "lr",        "batch_size", "epochs",   "patience",
                                          "steps_per_epoch", "max_steps", "min_rate", "max_rate", "seed",
                                          "val_rates", "log_every"};

training::TrainConfig train_config(const KeyValueConfig& kv, training::TrainConfig c = {}) {
    c.alpha = kv.real("alpha", c.alpha);
    c.adam.lr = kv.real("lr", c.adam.lr);
    c.batch_size = kv.count("batch_size", c.batch_size);
    c.epochs = kv.count("epochs", c.epochs);
    c.patience = kv.count("patience", c.patience);
    c.steps_per_epoch = kv.count("steps_per_epoch", c.steps_per_epoch);
    c.max_steps = kv.count("max_steps", c.max_steps);
    c.min_rate = kv.real("min_rate", c.min_rate);
    c.max_rate = kv.real("max_rate", c.max_rate);
    c.seed = kv.seed("seed", c.seed);
    c.val_rates = kv.reals("val_rates", c.val_rates);
    c.log_every = kv.count("log_every", c.log_every);
    c.validate();
    return c;
}

backbone::BackboneConfig backbone_config(const KeyValueConfig& kv) {
    backbone::BackboneConfig c;
    c.layers = kv.count("layers", c.layers);
    c.heads = kv.count("heads", c.heads);
    c.width = kv.count("width", c.width);
    c.patch_length = kv.count("patch_length", c.patch_length);
    c.window_length = kv.count("window_length", c.window_length);
    c.ff_width = kv.count("ff_width", c.ff_width);
    c.max_tokens = kv.count("max_tokens", c.max_tokens);
    c.dropout = kv.real("dropout", c.dropout);
    return c;
}

KeyValueConfig optional_config(const std::filesystem::path& path) {
    return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

std::unique_ptr<std::ofstream> open_log(const std::filesystem::path& path) {
    if (path.empty()) return nullptr;
    auto out = std::make_unique<std::ofstream>(path, std::ios::trunc);
    if (!*out) throw IoError("cannot open log file " + path.string());
    return out;
}

std::vector<std::size_t> all_variables(const data::MultivariateSeries& s) {
    std::vector<std::size_t> v(s.variables());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
}

data::MultivariateSeries load_series(const std::filesystem::path& path, const std::string& domain) {
    auto s = data::load_csv(path);
    if (!domain.empty()) s.domain = domain;
    return s;
}

template <std::floating_point T>
int train_with(const TrainArgs& a, const KeyValueConfig& kv) {
    const auto bc0 = backbone_config(kv);
    const bench::Corpus corpus = bench::load_corpus(
        [&] {
            std::vector<std::filesystem::path> p;
            for (const auto& s : kv.list("data", {})) p.emplace_back(s);
            if (p.empty()) throw ConfigError("config key 'data' is required");
            return p;
        }(),
        kv.reals("split", {1, 1, 1}), kv.seed("split_seed", 0));
    auto bc = bc0;
    if (kv.flag("per_domain", false)) bc.domains = corpus.domains();
    const std::size_t stride = kv.count("stride", bc.window_length);
    auto train = bench::corpus_windows(corpus, bench::Part::train, bc.window_length, stride);
    auto val = bench::corpus_windows(corpus, bench::Part::val, bc.window_length, bc.window_length);
    if (train.empty() || val.empty()) throw DataError("series are shorter than window_length");
    const auto tc = train_config(kv);

    auto model = backbone::make_model<T>(bc, tc.seed);
    auto log = open_log(a.log);
    training::Trainer<T> trainer(model, std::move(train), std::move(val), tc, log.get());
    if (!a.state.empty() && std::filesystem::exists(a.state)) trainer.load_state(a.state);
    while (!trainer.finished()) {
        const double v = trainer.run_epoch();
        std::cerr << "epoch " << trainer.result().epochs << " val_mse " << v << "\n";
        if (!a.state.empty()) trainer.save_state(a.state);
    }
    trainer.best_checkpoint().save(a.out);
    const auto& r = trainer.result();
    std::cout << json{{"best_val_mse", r.best_val}, {"epochs", r.epochs}, {"steps", r.steps},
                      {"early_stopped", r.early_stopped}}
                     .dump()
              << "\n";
    return 0;
}

// Per-variable windows become the held-out part of each dataset's time axis.
template <typename W>
std::pair<std::vector<W>, std::vector<W>> split_tail(std::vector<W> items, std::size_t group, double fraction) {
    const std::size_t groups = items.size() / group;
    if (groups < 2) return {items, items};
    const std::size_t hold = std::max<std::size_t>(1, static_cast<std::size_t>(groups * fraction));
    std::vector<W> val(items.end() - static_cast<std::ptrdiff_t>(hold * group), items.end());
    items.resize(items.size() - hold * group);
    return {std::move(items), std::move(val)};
}

} // namespace

int run_train(const TrainArgs& a) {
    const auto kv = KeyValueConfig::load(a.config);
    std::set<std::string> known = kTrainKeys;
    for (const char* k : {"data", "stride", "split", "split_seed", "precision", "per_domain", "layers", "heads",
                          "width", "patch_length", "window_length", "ff_width", "max_tokens", "dropout"}) {
        known.insert(k);
    }
    kv.check_known(known);
    const std::size_t precision = kv.count("precision", 32);
    if (precision == 32) return train_with<float>(a, kv);
    if (precision == 64) return train_with<double>(a, kv);
    throw ConfigError("precision must be 32 or 64");
}

int run_finetune(const FinetuneArgs& a) {
    const auto kv = optional_config(a.config);
    std::set<std::string> known = kTrainKeys;
    for (const char* k : {"stride", "split", "split_seed", "beta", "train_domain", "light_width", "intervar_heads"}) {
        known.insert(k);
    }
    kv.check_known(known);
    training::TrainConfig defaults;
    defaults.adam.lr = 1e-3;
    const auto tc = train_config(kv, defaults);
    auto base = backbone::from_checkpoint<float>(numerics::Checkpoint::load(a.base));
    const auto series = load_series(a.data, a.domain);
    const std::size_t L = base.config.window_length;
    const std::size_t stride = kv.count("stride", L);
    auto log = open_log(a.log);

    if (a.mode == "domain") {
        const auto corpus = bench::make_corpus({series}, kv.reals("split", {1, 1, 1}), kv.seed("split_seed", 0));
        auto train = bench::corpus_windows(corpus, bench::Part::train, L, stride);
        auto val = bench::corpus_windows(corpus, bench::Part::val, L, L);
        if (train.empty() || val.empty()) throw DataError("series are shorter than the model's window length");
        adaptation::PrefixConfig pc;
        pc.beta = kv.real("beta", pc.beta);
        pc.train_domain = kv.flag("train_domain", pc.train_domain);
        auto bundle = adaptation::make_prefix_bundle(base, pc, tc.seed);
        const auto r = adaptation::finetune_prefix(base, bundle, std::move(train), std::move(val), tc, log.get());
        adaptation::to_checkpoint(bundle).save(a.out);
        std::cout << json{{"best_val_mse", r.best_val}, {"epochs", r.epochs}, {"steps", r.steps}}.dump() << "\n";
        return 0;
    }
    if (a.mode == "intervar") {
        const std::size_t V = series.variables();
        auto [train, val] = split_tail(adaptation::block_windows(series, L, stride, all_variables(series)), V, 0.2);
        if (train.empty()) throw DataError("series are shorter than the model's window length");
        adaptation::InterVarConfig ic;
        ic.light_width = kv.count("light_width", ic.light_width);
        ic.heads = kv.count("intervar_heads", ic.heads);
        auto net = adaptation::make_intervar<float>(base.config, ic, tc.seed);
        auto ttc = tc;
        ttc.batch_size = std::max<std::size_t>(1, tc.batch_size / V);
        const auto r = adaptation::finetune_intervar(base, net, V, std::move(train), std::move(val), ttc, log.get());
        adaptation::to_checkpoint(net).save(a.out);
        std::cout << json{{"best_val_mse", r.best_val}, {"epochs", r.epochs}, {"steps", r.steps}}.dump() << "\n";
        return 0;
    }
    throw ConfigError("unknown fine-tuning mode '" + a.mode + "' (expected domain or intervar)");
}

int run_impute(const ImputeArgs& a) {
    auto model = backbone::from_checkpoint<float>(numerics::Checkpoint::load(a.ckpt));
    auto series = load_series(a.data, a.domain);
    if (!a.mask.empty()) data::apply_mask_csv(series, a.mask);
    const std::size_t L = model.config.window_length, T = series.steps, V = series.variables();
    if (T < L) {
        throw DataError("series has " + std::to_string(T) + " steps, the model needs windows of " + std::to_string(L));
    }

    backbone::PrefixFn<float> fn;
    numerics::ParameterStore<float>* overlay = nullptr;
    std::optional<adaptation::PrefixBundle<float>> bundle;
    std::optional<adaptation::InterVarNet<float>> net;
    if (!a.prefix.empty()) {
        const auto ckpt = numerics::Checkpoint::load(a.prefix);
        const std::string kind = ckpt.contains("meta.adapter") ? ckpt.text("meta.adapter") : "";
        if (kind == "domain_prefix") {
            bundle = adaptation::prefix_from_checkpoint<float>(ckpt, model.config);
            fn = adaptation::domain_prefix_fn<float>(model.config, bundle->config.beta);
            overlay = &bundle->params;
        } else if (kind == "intervar_prefix") {
            net = adaptation::intervar_from_checkpoint<float>(ckpt, model.config);
            fn = adaptation::intervar_prefix_fn<float>(model.config, net->config, V);
            overlay = &net->params;
        } else {
            throw FormatError(a.prefix.string() + " is not a prefix file");
        }
    }

    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + L <= T; s += L) starts.push_back(s);
    if (starts.back() + L < T) starts.push_back(T - L);

    data::MultivariateSeries out = series;
    for (std::size_t s : starts) {
        std::vector<data::SeriesWindow> raw;
        std::vector<data::SeriesWindow> inputs;
        std::vector<data::RevinStats> stats;
        for (std::size_t v = 0; v < V; ++v) {
            data::SeriesWindow w;
            w.variable = v;
            w.start = s;
            w.domain = series.domain;
            for (std::size_t t = s; t < s + L; ++t) {
                w.values.push_back(series.value(t, v));
                w.mask.push_back(series.observed(t, v) ? 1 : 0);
            }
            auto view = data::make_view(w, data::Mask(L, 1));
            inputs.push_back(std::move(view.input));
            stats.push_back(view.stats);
            raw.push_back(std::move(w));
        }
        const auto pred = backbone::predict(model, std::span<const data::SeriesWindow>(inputs), V, fn, overlay);
        for (std::size_t v = 0; v < V; ++v) {
            const auto filled = backbone::compose_imputation(raw[v], stats[v], pred[v]);
            for (std::size_t t = 0; t < L; ++t) {
                out.values[(s + t) * V + v] = filled[t];
                out.mask[(s + t) * V + v] = 1;
            }
        }
    }
    data::write_csv(a.out, out);
    return 0;
}

int run_forecast(const ForecastArgs& a) {
    auto base = backbone::from_checkpoint<float>(numerics::Checkpoint::load(a.ckpt));
    const auto series = load_series(a.data, a.domain);
    const std::size_t L = base.config.window_length, P = base.config.patch_length, V = series.variables();
    if (series.steps < L) throw DataError("series is shorter than the model's window length");

    std::optional<adaptation::Forecaster<float>> fc;
    if (!a.adapter.empty()) {
        fc = adaptation::forecaster_from_checkpoint<float>(numerics::Checkpoint::load(a.adapter), base);
        if (fc->config.horizon_patches != a.horizon) {
            throw ConfigError("adapter forecasts " + std::to_string(fc->config.horizon_patches) +
                              " patches, --horizon asks for " + std::to_string(a.horizon));
        }
    } else {
        const auto kv = optional_config(a.config);
        std::set<std::string> known = kTrainKeys;
        for (const char* k : {"stride", "beta", "use_prefix"}) known.insert(k);
        kv.check_known(known);
        training::TrainConfig defaults;
        defaults.adam.lr = 1e-3;
        const auto tc = train_config(kv, defaults);
        adaptation::ForecastConfig cfg;
        cfg.horizon_patches = a.horizon;
        cfg.beta = kv.real("beta", cfg.beta);
        cfg.use_prefix = kv.flag("use_prefix", cfg.use_prefix);
        fc = adaptation::make_forecaster(base, cfg, tc.seed);
        std::vector<adaptation::ForecastSample> train, val;
        for (std::size_t v = 0; v < V; ++v) {
            auto samples = adaptation::forecast_samples(series, L, fc->horizon(), kv.count("stride", P), {v});
            auto [t, h] = split_tail(std::move(samples), 1, 0.2);
            train.insert(train.end(), t.begin(), t.end());
            val.insert(val.end(), h.begin(), h.end());
        }
        if (train.empty()) throw DataError("series is too short to fit a forecaster of this horizon");
        const auto r = adaptation::finetune_forecaster(base, *fc, train, val, tc);
        std::cerr << "forecaster val_mse " << r.best_val << " after " << r.epochs << " epochs\n";
        if (!a.save_adapter.empty()) adaptation::to_checkpoint(*fc).save(a.save_adapter);
    }

    std::vector<data::SeriesWindow> hist;
    for (std::size_t v = 0; v < V; ++v) {
        data::SeriesWindow w;
        w.variable = v;
        w.start = series.steps - L;
        w.domain = series.domain;
        for (std::size_t t = series.steps - L; t < series.steps; ++t) {
            w.values.push_back(series.value(t, v));
            w.mask.push_back(series.observed(t, v) ? 1 : 0);
        }
        hist.push_back(std::move(w));
    }
    const auto pred = adaptation::forecast(base, *fc, std::span<const data::SeriesWindow>(hist));
    data::MultivariateSeries out;
    out.names = series.names;
    out.steps = fc->horizon();
    for (std::size_t t = 0; t < out.steps; ++t) {
        for (std::size_t v = 0; v < V; ++v) {
            out.values.push_back(pred[v][t]);
            out.mask.push_back(1);
        }
    }
    data::write_csv(a.out, out);
    return 0;
}

int run_bench(const BenchArgs& a) {
    const auto config = bench::ProtocolConfig::from(KeyValueConfig::load(a.config));
    const auto report = bench::run_protocol(config);
    bench::render_report(report, a.out);
    for (const auto& avg : report.averages()) {
        std::cout << avg.model << " average mse " << avg.mse << " mae " << avg.mae << "\n";
    }
    return 0;
}

int run_maskgen(const MaskgenArgs& a) {
    if (a.length == 0) throw ConfigError("--len must be positive");
    if (!(a.rate >= 0.0 && a.rate <= 1.0)) throw ConfigError("--rate must lie in [0, 1]");
    const auto mask = data::make_mask(data::parse_pattern(a.pattern), a.length, a.rate, a.seed);
    std::string line;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (i) line += ',';
        line += mask[i] ? '1' : '0';
    }
    std::cout << line << "\n";
    return 0;
}

int run_synth(const SynthArgs& a) {
    data::SinusoidSpec spec;
    spec.variables = a.variables;
    spec.steps = a.steps;
    spec.seed = a.seed;
    spec.noise = a.noise;
    spec.domain = a.domain;
    const auto series = data::sinusoid_series(spec);
    if (a.out.empty()) std::cout << data::format_csv(series);
    else data::write_csv(a.out, series);
    return 0;
}

} // namespace patchfill::cli
