#include "patchfill/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "patchfill/data/masks.hpp"
#include "patchfill/error.hpp"
#include "patchfill/numerics/ops.hpp"
#include "patchfill/training/losses.hpp"

namespace patchfill::training {

using namespace numerics;
using json = nlohmann::json;

namespace {

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

std::vector<data::SeriesWindow> view_inputs(const DualMaskBatch& batch) {
    std::vector<data::SeriesWindow> inputs;
    inputs.reserve(2 * batch.size());
    for (const auto& v : batch.view1) inputs.push_back(v.input);
    for (const auto& v : batch.view2) inputs.push_back(v.input);
    return inputs;
}

template <std::floating_point T>
void fill_targets(const std::vector<data::MaskedView>& views, Tensor<T>& target, Tensor<T>& weight) {
    const std::size_t L = target.cols();
    for (std::size_t b = 0; b < views.size(); ++b) {
        for (std::size_t i = 0; i < L; ++i) {
            target.at(b, i) = static_cast<T>(views[b].target[i]);
            weight.at(b, i) = views[b].native[i] ? T{1} : T{0};
        }
    }
}

} // namespace

bool EarlyStopping::update(double val) {
    seen_ = true;
    if (val < best_) {
        best_ = val;
        bad_ = 0;
        return true;
    }
    ++bad_;
    return false;
}

void TrainConfig::validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a non-negative number");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(min_rate >= 0.0 && min_rate <= max_rate && max_rate <= 1.0)) {
        throw ConfigError("mask rate range must satisfy 0 <= min_rate <= max_rate <= 1");
    }
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (patience == 0) throw ConfigError("patience must be at least 1");
    if (val_rates.empty()) throw ConfigError("at least one validation rate is required");
    for (double r : val_rates)
        if (!(r > 0.0 && r <= 1.0)) throw ConfigError("validation rates must lie in (0, 1]");
    if (log_every == 0) throw ConfigError("log_every must be positive");
}

DualMaskBatch dual_mask_batch(std::span<const data::SeriesWindow> windows, double min_rate, double max_rate,
                              std::uint64_t seed) {
    Rng rng(seed);
    DualMaskBatch out;
    for (const auto& w : windows) {
        const double r1 = uniform_real(rng, min_rate, max_rate);
        const double r2 = uniform_real(rng, min_rate, max_rate);
        const data::Mask m1 = data::mask_random(w.length(), r1, rng());
        const data::Mask m2 = data::mask_random(w.length(), r2, rng());
        out.view1.push_back(data::make_view(w, m1));
        out.view2.push_back(data::make_view(w, m2));
        out.rate1.push_back(r1);
        out.rate2.push_back(r2);
    }
    return out;
}

template <std::floating_point T>
LossBreakdown LossGraph<T>::breakdown() const {
    LossBreakdown b;
    b.mse1 = mse1.value()[0];
    b.mse2 = mse2.value()[0];
    b.contrastive = contrastive ? static_cast<double>(contrastive->value()[0]) : 0.0;
    b.total = total.value()[0];
    return b;
}

template <std::floating_point T>
LossGraph<T> build_loss(Binder<T>& bind, const backbone::BackboneConfig& config, const DualMaskBatch& batch,
                        double alpha, Rng* dropout_rng, const PrefixFn<T>& prefix) {
    const std::size_t B = batch.size(), L = config.window_length, N = config.patch_count(),
                      S = config.seq_length();
    if (B == 0) throw ConfigError("training batch is empty");
    const auto inputs = view_inputs(batch);
    const auto emb = embedding::make_batch<T>(inputs, config.embedding());
    PrefixKV<T> kv;
    if (prefix) kv = prefix(bind, inputs);
    Var<T> tokens = embedding::embed_input(bind, emb);
    auto hidden = backbone::forward(bind, config, tokens, 2 * B, S, prefix ? &kv : nullptr, dropout_rng);
    Var<T> out = backbone::output_head(bind, config, hidden.final, 2 * B, S);

    Tensor<T> t1({B, L}), w1({B, L}), t2({B, L}), w2({B, L});
    fill_targets(batch.view1, t1, w1);
    fill_targets(batch.view2, t2, w2);
    LossGraph<T> g;
    g.mse1 = mse_loss(slice(out, 0, 0, B), t1, w1);
    g.mse2 = mse_loss(slice(out, 0, B, 2 * B), t2, w2);
    g.total = add(g.mse1, g.mse2);
    if (B * N >= 2) {
        const auto rows = backbone::patch_rows(2 * B, S, N);
        const std::span<const std::size_t> all(rows);
        Var<T> h1 = gather_rows(hidden.final, all.subspan(0, B * N));
        Var<T> h2 = gather_rows(hidden.final, all.subspan(B * N));
        g.contrastive = infonce_loss(h1, h2, bind("contrast.w"));
        if (alpha > 0.0) g.total = add(g.total, scale(*g.contrastive, static_cast<T>(alpha)));
    } else if (alpha > 0.0) {
        throw ContractError("contrastive training needs at least two patches per batch");
    }
    return g;
}

template <std::floating_point T>
LossBreakdown train_step(Model<T>& model, const DualMaskBatch& batch, double alpha, Adam<T>& optimizer,
                         Rng* dropout_rng, const PrefixFn<T>& prefix, ParameterStore<T>* overlay) {
    Tape<T> tape;
    Binder<T> bind(tape, model.params, overlay);
    LossGraph<T> g = build_loss(bind, model.config, batch, alpha, dropout_rng, prefix);
    if (!g.total.value().all_finite()) {
        std::string ids;
        for (const auto& v : batch.view1) {
            ids += (ids.empty() ? "" : ", ") + std::to_string(v.input.variable) + "@" + std::to_string(v.input.start);
        }
        throw NumericError("non-finite training loss; batch windows (variable@start): " + ids);
    }
    optimizer.zero_grad();
    tape.backward(g.total);
    optimizer.step();
    return g.breakdown();
}

std::vector<data::MaskedView> fixed_views(std::span<const data::SeriesWindow> windows,
                                          std::span<const double> rates, std::uint64_t seed) {
    std::vector<data::MaskedView> out;
    out.reserve(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        const double rate = rates[i % rates.size()];
        const std::uint64_t s = mix_seed({seed, w.variable, w.start, static_cast<std::uint64_t>(rate * 1000.0 + 0.5)});
        out.push_back(data::make_view(w, data::mask_random(w.length(), rate, s)));
    }
    return out;
}

template <std::floating_point T>
double hidden_mse(Model<T>& model, std::span<const data::MaskedView> views, std::size_t batch_size,
                  const PrefixFn<T>& prefix, ParameterStore<T>* overlay) {
    std::vector<data::SeriesWindow> inputs;
    inputs.reserve(views.size());
    for (const auto& v : views) inputs.push_back(v.input);
    const auto outputs = backbone::predict(model, std::span<const data::SeriesWindow>(inputs), batch_size, prefix,
                                           overlay);
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < views.size(); ++b) {
        for (std::size_t i = 0; i < views[b].hidden.size(); ++i) {
            if (!views[b].hidden[i]) continue;
            const double d = outputs[b][i] - views[b].target[i];
            sum += d * d;
            ++count;
        }
    }
    if (count == 0) throw ContractError("no hidden positions to score");
    return sum / static_cast<double>(count);
}

namespace {

template <std::floating_point T>
std::vector<Parameter<T>*> optimized_params(Model<T>& model, const TrainerHooks<T>& hooks) {
    if (hooks.overlay == nullptr) return model.params.trainable();
    model.params.set_frozen(true);
    return hooks.overlay->trainable();
}

} // namespace

template <std::floating_point T>
Trainer<T>::Trainer(Model<T>& model, std::vector<data::SeriesWindow> train, std::vector<data::SeriesWindow> val,
                    TrainConfig config, std::ostream* log, TrainerHooks<T> hooks)
    : model_(model),
      hooks_(std::move(hooks)),
      train_(std::move(train)),
      config_(std::move(config)),
      log_(log),
      optimizer_(optimized_params(model, hooks_), config_.adam),
      stopping_(config_.patience) {
    config_.validate();
    if (train_.empty()) throw ConfigError("training set has no windows");
    if (val.empty()) throw ConfigError("validation set has no windows");
    const std::size_t G = hooks_.group;
    if (G == 0 || train_.size() % G != 0 || val.size() % G != 0) {
        throw ConfigError("window counts must be multiples of the group size " + std::to_string(G));
    }
    val_views_ = fixed_views(val, config_.val_rates, mix_seed({config_.seed, 0x7a11}));
    for (const auto& w : train_) train_vars_.insert(w.variable);
    result_.best_val = std::numeric_limits<double>::infinity();
    started_ms_ = now_ms();
    json header = {{"event", "config"},
                   {"alpha", config_.alpha},
                   {"lr", config_.adam.lr},
                   {"batch_size", config_.batch_size},
                   {"seed", config_.seed},
                   {"train_windows", train_.size()},
                   {"val_windows", val_views_.size()}};
    log_record(header.dump());
}

template <std::floating_point T>
void Trainer<T>::log_record(const std::string& line) {
    if (log_ != nullptr) *log_ << line << '\n' << std::flush;
}

template <std::floating_point T>
bool Trainer<T>::finished() const {
    return result_.early_stopped || result_.epochs >= config_.epochs ||
           (config_.max_steps != 0 && result_.steps >= config_.max_steps);
}

template <std::floating_point T>
double Trainer<T>::validate() {
    return hidden_mse(model_, std::span<const data::MaskedView>(val_views_), config_.batch_size * hooks_.group * 2,
                      hooks_.prefix, hooks_.overlay);
}

template <std::floating_point T>
double Trainer<T>::run_epoch() {
    const std::size_t G = hooks_.group, n = train_.size() / G, B = config_.batch_size;
    const std::size_t epoch = result_.epochs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed({config_.seed, 1, epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    const std::size_t steps = config_.steps_per_epoch ? config_.steps_per_epoch : (n + B - 1) / B;
    std::vector<data::SeriesWindow> chunk;
    for (std::size_t s = 0; s < steps; ++s) {
        if (config_.max_steps != 0 && result_.steps >= config_.max_steps) break;
        chunk.clear();
        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t g = order[(s * B + i) % n];
            for (std::size_t k = 0; k < G; ++k) chunk.push_back(train_[g * G + k]);
        }
        const std::size_t step = result_.steps;
        const auto batch = dual_mask_batch(std::span<const data::SeriesWindow>(chunk), config_.min_rate,
                                           config_.max_rate, mix_seed({config_.seed, 2, step}));
        Rng dropout_rng(mix_seed({config_.seed, 3, step}));
        const LossBreakdown lb =
            train_step(model_, batch, config_.alpha, optimizer_, &dropout_rng, hooks_.prefix, hooks_.overlay);
        ++result_.steps;
        if (result_.steps % config_.log_every == 0) {
            json rec = {{"step", result_.steps}, {"mse1", lb.mse1}, {"mse2", lb.mse2},
                        {"contrastive", lb.contrastive}, {"total", lb.total}, {"val_mse", nullptr},
                        {"wall_ms", std::llround(now_ms() - started_ms_)}};
            log_record(rec.dump());
        }
    }
    const double val = validate();
    ++result_.epochs;
    result_.val_history.push_back(val);
    if (stopping_.update(val)) {
        best_.clear();
        for (auto* p : optimized().all()) best_.push_back(p->value);
    }
    result_.best_val = stopping_.best();
    result_.early_stopped = stopping_.should_stop();
    json rec = {{"epoch", result_.epochs}, {"step", result_.steps}, {"val_mse", val},
                {"best_val_mse", result_.best_val}, {"wall_ms", std::llround(now_ms() - started_ms_)}};
    log_record(rec.dump());
    return val;
}

template <std::floating_point T>
void Trainer<T>::restore_best() {
    if (best_.empty()) return;
    auto params = optimized().all();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_[i];
}

template <std::floating_point T>
TrainResult Trainer<T>::run() {
    while (!finished()) run_epoch();
    restore_best();
    return result_;
}

template <std::floating_point T>
void Trainer<T>::save_state(const std::filesystem::path& path) const {
    Checkpoint ckpt;
    backbone::write_config(ckpt, model_.config);
    ckpt.put_parameters(optimized());
    optimizer_.save_state(ckpt);
    ckpt.put_scalar("state.epochs", static_cast<double>(result_.epochs));
    ckpt.put_scalar("state.steps", static_cast<double>(result_.steps));
    ckpt.put_scalar("state.best_val", result_.best_val);
    ckpt.put_scalar("state.bad_epochs", static_cast<double>(stopping_.bad_epochs()));
    ckpt.put_scalar("state.early_stopped", result_.early_stopped ? 1.0 : 0.0);
    if (!result_.val_history.empty()) ckpt.put("state.val_history", Tensor<double>::vector(result_.val_history));
    auto params = optimized().all();
    for (std::size_t i = 0; i < best_.size(); ++i) ckpt.put("best." + params[i]->name, best_[i]);
    ckpt.save(path);
}

template <std::floating_point T>
void Trainer<T>::load_state(const std::filesystem::path& path) {
    const Checkpoint ckpt = Checkpoint::load(path);
    backbone::check_compatible(model_.config, backbone::read_config(ckpt));
    ckpt.load_into(optimized());
    optimizer_.load_state(ckpt);
    result_.epochs = static_cast<std::size_t>(ckpt.scalar("state.epochs"));
    result_.steps = static_cast<std::size_t>(ckpt.scalar("state.steps"));
    result_.best_val = ckpt.scalar("state.best_val");
    result_.early_stopped = ckpt.scalar("state.early_stopped") != 0.0;
    result_.val_history.clear();
    if (ckpt.contains("state.val_history")) {
        const auto h = ckpt.get<double>("state.val_history");
        result_.val_history.assign(h.values().begin(), h.values().end());
    }
    stopping_.restore(result_.best_val, static_cast<std::size_t>(ckpt.scalar("state.bad_epochs")),
                      !result_.val_history.empty());
    best_.clear();
    for (auto* p : optimized().all()) {
        if (ckpt.contains("best." + p->name)) best_.push_back(ckpt.get<T>("best." + p->name));
    }
}

template <std::floating_point T>
Checkpoint Trainer<T>::best_checkpoint() const {
    Checkpoint ckpt;
    backbone::write_config(ckpt, model_.config);
    auto params = model_.params.all();
    for (std::size_t i = 0; i < params.size(); ++i) ckpt.put(params[i]->name, best_.empty() ? params[i]->value : best_[i]);
    write_train_variables(ckpt, train_vars_);
    ckpt.put_scalar("meta.alpha", config_.alpha);
    ckpt.put_scalar("meta.best_val_mse", result_.best_val);
    return ckpt;
}

void write_train_variables(Checkpoint& ckpt, const std::set<std::size_t>& ids) {
    std::vector<double> v(ids.begin(), ids.end());
    if (v.empty()) return;
    ckpt.put("meta.train_vars", Tensor<double>::vector(std::move(v)));
}

std::set<std::size_t> read_train_variables(const Checkpoint& ckpt) {
    std::set<std::size_t> ids;
    if (!ckpt.contains("meta.train_vars")) return ids;
    const auto stored = ckpt.get<double>("meta.train_vars");
    for (double v : stored.values()) ids.insert(static_cast<std::size_t>(v));
    return ids;
}

#define PATCHFILL_INSTANTIATE_TRAINER(T)                                                                       \
    template struct LossGraph<T>;                                                                              \
    template LossGraph<T> build_loss<T>(Binder<T>&, const backbone::BackboneConfig&, const DualMaskBatch&,     \
                                        double, Rng*, const PrefixFn<T>&);                                     \
    template LossBreakdown train_step<T>(Model<T>&, const DualMaskBatch&, double, Adam<T>&, Rng*,              \
                                         const PrefixFn<T>&, ParameterStore<T>*);                              \
    template double hidden_mse<T>(Model<T>&, std::span<const data::MaskedView>, std::size_t,                   \
                                  const PrefixFn<T>&, ParameterStore<T>*);                                     \
    template class Trainer<T>;                                                                                 \
    template struct TrainerHooks<T>;

PATCHFILL_INSTANTIATE_TRAINER(float)
PATCHFILL_INSTANTIATE_TRAINER(double)

} // namespace patchfill::training
