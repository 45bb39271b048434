#pragma once

#include <concepts>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "patchfill/adaptation/prefix.hpp"
#include "patchfill/data/series.hpp"

namespace patchfill::adaptation {

struct ForecastConfig {
    // M: padding tokens appended after the patch tokens; the horizon is M * P.
    std::size_t horizon_patches = 1;
    bool use_prefix = true;
    double beta = 0.01;
};

/// Forecasting adapter over a frozen imputation backbone. Its store holds
/// trainable copies of the position table and every layer norm, the padding
/// token, the forecast head (M*D -> M*P) and, optionally, a domain prefix
/// bundle. The copies shadow the base parameters of the same name.
template <std::floating_point T>
struct Forecaster {
    BackboneConfig base;
    ForecastConfig config;
    ParameterStore<T> params;

    std::size_t horizon() const { return config.horizon_patches * base.patch_length; }
};

/// Throws ConfigError when N + 2 + M exceeds the position table.
template <std::floating_point T>
Forecaster<T> make_forecaster(const Model<T>& base, const ForecastConfig& config, std::uint64_t seed);

/// History window followed by the values to forecast.
struct ForecastSample {
    data::SeriesWindow history;
    std::vector<double> future;
    data::Mask future_mask;
};

/// Windows of length L + horizon at `stride`, variable-major.
std::vector<ForecastSample> forecast_samples(const data::MultivariateSeries& series, std::size_t length,
                                             std::size_t horizon, std::size_t stride,
                                             const std::vector<std::size_t>& variables);

/// Normalized histories (B windows) to B x horizon normalized forecasts.
template <std::floating_point T>
Var<T> forecast_forward(Binder<T>& bind, const Forecaster<T>& fc, const embedding::EmbeddingBatch<T>& batch,
                        const PrefixKV<T>* prefix = nullptr, Rng* dropout_rng = nullptr);

/// Raw-scale forecasts: each history is normalized with its own observed
/// statistics and the output is mapped back with them.
template <std::floating_point T>
std::vector<std::vector<double>> forecast(Model<T>& base, Forecaster<T>& fc,
                                          std::span<const data::SeriesWindow> histories, std::size_t batch_size = 64);

/// Repeats the last observed value (0 when the history is empty).
std::vector<double> carry_forward(const data::SeriesWindow& history, std::size_t horizon);

/// MSE over observed future points in the history's normalized units.
template <std::floating_point T>
double forecast_mse(Model<T>& base, Forecaster<T>& fc, std::span<const ForecastSample> samples,
                    std::size_t batch_size = 64);
double carry_forward_mse(std::span<const ForecastSample> samples);

/// Adam on the forecaster's parameters with the base frozen; patience-based
/// early stopping on validation MSE; the best parameters are kept.
template <std::floating_point T>
training::TrainResult finetune_forecaster(Model<T>& base, Forecaster<T>& fc, const std::vector<ForecastSample>& train,
                                          const std::vector<ForecastSample>& val,
                                          const training::TrainConfig& config, std::ostream* log = nullptr);

template <std::floating_point T>
numerics::Checkpoint to_checkpoint(const Forecaster<T>& fc);

template <std::floating_point T>
Forecaster<T> forecaster_from_checkpoint(const numerics::Checkpoint& ckpt, const Model<T>& base);

} // namespace patchfill::adaptation
