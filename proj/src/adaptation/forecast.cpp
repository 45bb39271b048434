#include "patchfill/adaptation/forecast.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "json.hpp"
#include "patchfill/data/views.hpp"
#include "patchfill/error.hpp"
#include "patchfill/numerics/init.hpp"
#include "patchfill/numerics/ops.hpp"
#include "patchfill/training/losses.hpp"

namespace patchfill::adaptation {

using namespace numerics;
using json = nlohmann::json;

namespace {

std::vector<std::string> shadowed_names(const BackboneConfig& base) {
    std::vector<std::string> names{"pos"};
    for (std::size_t l = 0; l < base.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* s : {"ln1.g", "ln1.b", "ln2.g", "ln2.b"}) names.push_back(p + s);
    }
    names.push_back("ln_f.g");
    names.push_back("ln_f.b");
    return names;
}

struct Prepared {
    data::SeriesWindow input;
    std::vector<double> target;
    std::vector<double> weight;
};

Prepared prepare(const ForecastSample& s) {
    const data::MaskedView v = data::make_view(s.history, data::Mask(s.history.length(), 1));
    Prepared p;
    p.input = v.input;
    p.target = data::revin_apply(s.future, s.future_mask, v.stats);
    p.weight.assign(s.future_mask.begin(), s.future_mask.end());
    return p;
}

template <std::floating_point T>
Tensor<T> stack(const std::vector<const std::vector<double>*>& rows) {
    Tensor<T> t({rows.size(), rows[0]->size()});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r]->size(); ++c) t.at(r, c) = static_cast<T>((*rows[r])[c]);
    return t;
}

template <std::floating_point T>
Tensor<T> run_batch(Model<T>& base, Forecaster<T>& fc, std::span<const data::SeriesWindow> inputs) {
    Tape<T> tape;
    Binder<T> bind(tape, base.params, &fc.params);
    const auto batch = embedding::make_batch<T>(inputs, base.config.embedding());
    PrefixKV<T> kv;
    if (fc.config.use_prefix) kv = domain_prefix_fn<T>(base.config, fc.config.beta)(bind, inputs);
    return forecast_forward(bind, fc, batch, fc.config.use_prefix ? &kv : nullptr).value();
}

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

} // namespace

template <std::floating_point T>
Forecaster<T> make_forecaster(const Model<T>& base, const ForecastConfig& config, std::uint64_t seed) {
    const BackboneConfig& b = base.config;
    const std::size_t M = config.horizon_patches, D = b.width, P = b.patch_length;
    if (M == 0) throw ConfigError("forecast horizon must cover at least one patch");
    if (b.seq_length() + M > b.max_tokens) {
        throw ConfigError("forecasting " + std::to_string(M) + " patches needs " + std::to_string(b.seq_length() + M) +
                          " positions, the model has " + std::to_string(b.max_tokens));
    }
    Forecaster<T> fc;
    fc.base = b;
    fc.config = config;
    for (const auto& name : shadowed_names(b)) fc.params.add(name, base.params.get(name).value);
    Rng rng(seed);
    fc.params.add("forecast.pad", normal_tensor<T>({1, D}, 0.02, rng));
    fc.params.add("forecast.head.w", xavier_uniform<T>(M * D, M * P, rng));
    fc.params.add("forecast.head.b", Tensor<T>({M * P}));
    if (config.use_prefix) add_prefix_parameters(fc.params, b, rng);
    return fc;
}

std::vector<ForecastSample> forecast_samples(const data::MultivariateSeries& series, std::size_t length,
                                             std::size_t horizon, std::size_t stride,
                                             const std::vector<std::size_t>& variables) {
    if (length == 0 || horizon == 0 || stride == 0) throw ConfigError("length, horizon and stride must be positive");
    std::vector<ForecastSample> out;
    for (std::size_t v : variables) {
        if (v >= series.variables()) throw ConfigError("variable index " + std::to_string(v) + " out of range");
        for (std::size_t start = 0; start + length + horizon <= series.steps; start += stride) {
            ForecastSample s;
            s.history.variable = v;
            s.history.start = start;
            s.history.domain = series.domain;
            for (std::size_t t = start; t < start + length; ++t) {
                s.history.values.push_back(series.value(t, v));
                s.history.mask.push_back(series.observed(t, v) ? 1 : 0);
            }
            for (std::size_t t = start + length; t < start + length + horizon; ++t) {
                s.future.push_back(series.value(t, v));
                s.future_mask.push_back(series.observed(t, v) ? 1 : 0);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

template <std::floating_point T>
Var<T> forecast_forward(Binder<T>& bind, const Forecaster<T>& fc, const embedding::EmbeddingBatch<T>& batch,
                        const PrefixKV<T>* prefix, Rng* dropout_rng) {
    const BackboneConfig& b = fc.base;
    const std::size_t B = batch.batch, S0 = b.seq_length(), M = fc.config.horizon_patches, S = S0 + M;
    Var<T> tokens = embedding::embed_input(bind, batch);
    const std::vector<std::size_t> zeros(B * M, 0);
    Var<T> pads = gather_rows(bind("forecast.pad"), std::span<const std::size_t>(zeros));
    const Var<T> parts[] = {tokens, pads};
    Var<T> stacked = concat(std::span<const Var<T>>(parts), 0);
    std::vector<std::size_t> order, pad_rows;
    for (std::size_t s = 0; s < B; ++s) {
        for (std::size_t j = 0; j < S0; ++j) order.push_back(s * S0 + j);
        for (std::size_t m = 0; m < M; ++m) {
            order.push_back(B * S0 + s * M + m);
            pad_rows.push_back(s * S + S0 + m);
        }
    }
    Var<T> x = gather_rows(stacked, std::span<const std::size_t>(order));
    backbone::HiddenStates<T> h = backbone::forward(bind, b, x, B, S, prefix, dropout_rng);
    Var<T> flat =
        reshape(gather_rows(h.final, std::span<const std::size_t>(pad_rows)), Shape{B, M * b.width});
    return linear(flat, bind("forecast.head.w"), bind("forecast.head.b"));
}

template <std::floating_point T>
std::vector<std::vector<double>> forecast(Model<T>& base, Forecaster<T>& fc,
                                          std::span<const data::SeriesWindow> histories, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::vector<double>> out;
    for (std::size_t begin = 0; begin < histories.size(); begin += batch_size) {
        const std::size_t n = std::min(batch_size, histories.size() - begin);
        std::vector<data::SeriesWindow> inputs;
        std::vector<data::RevinStats> stats;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& h = histories[begin + i];
            data::MaskedView v = data::make_view(h, data::Mask(h.length(), 1));
            inputs.push_back(std::move(v.input));
            stats.push_back(v.stats);
        }
        const Tensor<T> y = run_batch(base, fc, std::span<const data::SeriesWindow>(inputs));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> row(y.data() + i * y.cols(), y.data() + (i + 1) * y.cols());
            out.push_back(data::revin_denormalize(row, stats[i]));
        }
    }
    return out;
}

std::vector<double> carry_forward(const data::SeriesWindow& history, std::size_t horizon) {
    double last = 0.0;
    for (std::size_t i = history.length(); i-- > 0;) {
        if (history.mask[i]) {
            last = history.values[i];
            break;
        }
    }
    return std::vector<double>(horizon, last);
}

template <std::floating_point T>
double forecast_mse(Model<T>& base, Forecaster<T>& fc, std::span<const ForecastSample> samples,
                    std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
        const std::size_t n = std::min(batch_size, samples.size() - begin);
        std::vector<Prepared> prep;
        std::vector<data::SeriesWindow> inputs;
        for (std::size_t i = 0; i < n; ++i) {
            prep.push_back(prepare(samples[begin + i]));
            inputs.push_back(prep.back().input);
        }
        const Tensor<T> y = run_batch(base, fc, std::span<const data::SeriesWindow>(inputs));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < prep[i].target.size(); ++t) {
                if (prep[i].weight[t] == 0.0) continue;
                const double d = static_cast<double>(y.at(i, t)) - prep[i].target[t];
                sum += d * d;
                ++count;
            }
        }
    }
    if (count == 0) throw ConfigError("no observed future values to score");
    return sum / static_cast<double>(count);
}

double carry_forward_mse(std::span<const ForecastSample> samples) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : samples) {
        const Prepared p = prepare(s);
        const auto last = carry_forward(p.input, p.target.size());
        for (std::size_t t = 0; t < p.target.size(); ++t) {
            if (p.weight[t] == 0.0) continue;
            const double d = last[t] - p.target[t];
            sum += d * d;
            ++count;
        }
    }
    if (count == 0) throw ConfigError("no observed future values to score");
    return sum / static_cast<double>(count);
}

template <std::floating_point T>
training::TrainResult finetune_forecaster(Model<T>& base, Forecaster<T>& fc, const std::vector<ForecastSample>& train,
                                          const std::vector<ForecastSample>& val,
                                          const training::TrainConfig& config, std::ostream* log) {
    config.validate();
    backbone::check_compatible(base.config, fc.base);
    if (train.empty() || val.empty()) throw ConfigError("forecast fine-tuning needs training and validation samples");
    base.params.set_frozen(true);
    FrozenGuard<T> guard(base.params);
    training::Adam<T> opt(fc.params.trainable(), config.adam);
    training::EarlyStopping stopping(config.patience);
    training::TrainResult result;
    std::vector<Tensor<T>> best;

    std::vector<Prepared> prep;
    for (const auto& s : train) prep.push_back(prepare(s));
    const std::size_t n = prep.size(), B = config.batch_size;
    const double started = now_ms();

    while (result.epochs < config.epochs && !stopping.should_stop() &&
           !(config.max_steps != 0 && result.steps >= config.max_steps)) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(mix_seed({config.seed, 1, result.epochs}));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
        const std::size_t steps = config.steps_per_epoch ? config.steps_per_epoch : (n + B - 1) / B;
        for (std::size_t s = 0; s < steps; ++s) {
            if (config.max_steps != 0 && result.steps >= config.max_steps) break;
            std::vector<data::SeriesWindow> inputs;
            std::vector<const std::vector<double>*> targets, weights;
            double observed = 0.0;
            for (std::size_t i = 0; i < std::min(B, n); ++i) {
                const Prepared& p = prep[order[(s * B + i) % n]];
                inputs.push_back(p.input);
                targets.push_back(&p.target);
                weights.push_back(&p.weight);
                observed += std::accumulate(p.weight.begin(), p.weight.end(), 0.0);
            }
            ++result.steps;
            if (observed == 0.0) continue;
            Tape<T> tape;
            Binder<T> bind(tape, base.params, &fc.params);
            const auto batch = embedding::make_batch<T>(std::span<const data::SeriesWindow>(inputs),
                                                        base.config.embedding());
            Rng dropout_rng(mix_seed({config.seed, 3, result.steps}));
            PrefixKV<T> kv;
            if (fc.config.use_prefix) {
                kv = domain_prefix_fn<T>(base.config, fc.config.beta)(bind, std::span<const data::SeriesWindow>(inputs));
            }
            Var<T> out = forecast_forward(bind, fc, batch, fc.config.use_prefix ? &kv : nullptr, &dropout_rng);
            Var<T> loss = training::mse_loss(out, stack<T>(targets), stack<T>(weights));
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        ++result.epochs;
        const double v = forecast_mse(base, fc, std::span<const ForecastSample>(val));
        result.val_history.push_back(v);
        if (stopping.update(v)) {
            best.clear();
            for (const auto* p : fc.params.all()) best.push_back(p->value);
        }
        result.best_val = stopping.best();
        if (log != nullptr) {
            json rec = {{"epoch", result.epochs}, {"step", result.steps}, {"val_mse", v},
                        {"best_val_mse", result.best_val}, {"wall_ms", std::llround(now_ms() - started)}};
            *log << rec.dump() << '\n';
        }
    }
    result.early_stopped = stopping.should_stop();
    if (!best.empty()) {
        auto params = fc.params.all();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    }
    guard.verify();
    return result;
}

template <std::floating_point T>
Checkpoint to_checkpoint(const Forecaster<T>& fc) {
    Checkpoint ckpt;
    backbone::write_config(ckpt, fc.base);
    ckpt.put_text("meta.adapter", "forecaster");
    ckpt.put_scalar("meta.forecast.horizon_patches", static_cast<double>(fc.config.horizon_patches));
    ckpt.put_scalar("meta.forecast.use_prefix", fc.config.use_prefix ? 1.0 : 0.0);
    ckpt.put_scalar("meta.forecast.beta", fc.config.beta);
    ckpt.put_parameters(fc.params);
    return ckpt;
}

template <std::floating_point T>
Forecaster<T> forecaster_from_checkpoint(const Checkpoint& ckpt, const Model<T>& base) {
    if (!ckpt.contains("meta.adapter") || ckpt.text("meta.adapter") != "forecaster") {
        throw FormatError("checkpoint is not a forecaster");
    }
    backbone::check_compatible(base.config, backbone::read_config(ckpt));
    ForecastConfig config;
    config.horizon_patches = static_cast<std::size_t>(ckpt.scalar("meta.forecast.horizon_patches"));
    config.use_prefix = ckpt.scalar("meta.forecast.use_prefix") != 0.0;
    config.beta = ckpt.scalar("meta.forecast.beta");
    Forecaster<T> fc = make_forecaster(base, config, 0);
    ckpt.load_into(fc.params);
    return fc;
}

#define PATCHFILL_INSTANTIATE_FORECAST(T)                                                                        \
    template Forecaster<T> make_forecaster<T>(const Model<T>&, const ForecastConfig&, std::uint64_t);         \
    template Var<T> forecast_forward<T>(Binder<T>&, const Forecaster<T>&, const embedding::EmbeddingBatch<T>&, \
                                        const PrefixKV<T>*, Rng*);                                             \
    template std::vector<std::vector<double>> forecast<T>(Model<T>&, Forecaster<T>&,                           \
                                                          std::span<const data::SeriesWindow>, std::size_t);   \
    template double forecast_mse<T>(Model<T>&, Forecaster<T>&, std::span<const ForecastSample>, std::size_t);  \
    template training::TrainResult finetune_forecaster<T>(Model<T>&, Forecaster<T>&,                          \
                                                          const std::vector<ForecastSample>&,                  \
                                                          const std::vector<ForecastSample>&,                  \
                                                          const training::TrainConfig&, std::ostream*);        \
    template Checkpoint to_checkpoint<T>(const Forecaster<T>&);                                                \
    template Forecaster<T> forecaster_from_checkpoint<T>(const Checkpoint&, const Model<T>&);

PATCHFILL_INSTANTIATE_FORECAST(float)
PATCHFILL_INSTANTIATE_FORECAST(double)

} // namespace patchfill::adaptation
