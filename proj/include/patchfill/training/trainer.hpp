#pragma once

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <vector>

#include "patchfill/backbone/model.hpp"
#include "patchfill/data/views.hpp"
#include "patchfill/training/adam.hpp"

namespace patchfill::training {

using backbone::Model;
using backbone::PrefixFn;
using backbone::PrefixKV;
using numerics::Binder;
using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

struct TrainConfig {
    // Weight of the contrastive term.
    double alpha = 0.1;
    AdamConfig adam;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t patience = 3;
    // 0 means one pass over the training windows.
    std::size_t steps_per_epoch = 0;
    // 0 means no cap.
    std::size_t max_steps = 0;
    double min_rate = 0.1;
    double max_rate = 0.9;
    std::uint64_t seed = 0;
    // Validation window i is scored at val_rates[i % size].
    std::vector<double> val_rates = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    // Step records are written every log_every steps; epoch records always.
    std::size_t log_every = 1;

    void validate() const;
};

/// Two independently masked views of each window.
struct DualMaskBatch {
    std::vector<data::MaskedView> view1;
    std::vector<data::MaskedView> view2;
    std::vector<double> rate1;
    std::vector<double> rate2;

    std::size_t size() const { return view1.size(); }
};

/// Rates are drawn uniformly from [min_rate, max_rate] per view; each view is
/// normalized with the statistics of the points it leaves visible.
DualMaskBatch dual_mask_batch(std::span<const data::SeriesWindow> windows, double min_rate, double max_rate,
                              std::uint64_t seed);

struct LossBreakdown {
    double mse1 = 0;
    double mse2 = 0;
    double contrastive = 0;
    double total = 0;
};

template <std::floating_point T>
struct LossGraph {
    Var<T> mse1;
    Var<T> mse2;
    // Absent when the batch has fewer than two patches.
    std::optional<Var<T>> contrastive;
    Var<T> total;

    LossBreakdown breakdown() const;
};

/// Both views run as one batch of 2B sequences. total = mse1 + mse2 +
/// alpha * infonce; with alpha = 0 the contrastive term is left out of the
/// graph entirely.
template <std::floating_point T>
LossGraph<T> build_loss(Binder<T>& bind, const backbone::BackboneConfig& config, const DualMaskBatch& batch,
                        double alpha, Rng* dropout_rng = nullptr, const PrefixFn<T>& prefix = {});

/// One forward/backward/update. Throws NumericError naming the windows whose
/// output went non-finite.
template <std::floating_point T>
LossBreakdown train_step(Model<T>& model, const DualMaskBatch& batch, double alpha, Adam<T>& optimizer,
                         Rng* dropout_rng = nullptr, const PrefixFn<T>& prefix = {},
                         ParameterStore<T>* overlay = nullptr);

/// Fixed evaluation views: window i uses rate rates[i % rates.size()] and a
/// mask seeded from (seed, variable, start).
std::vector<data::MaskedView> fixed_views(std::span<const data::SeriesWindow> windows,
                                          std::span<const double> rates, std::uint64_t seed);

/// Mean squared error over hidden positions, in normalized units.
template <std::floating_point T>
double hidden_mse(Model<T>& model, std::span<const data::MaskedView> views, std::size_t batch_size,
                  const PrefixFn<T>& prefix = {}, ParameterStore<T>* overlay = nullptr);

/// Patience rule: stop once `patience` consecutive epochs fail to improve on
/// the best validation score.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Records a score; returns true when it is a new best.
    bool update(double val);
    bool should_stop() const { return bad_ >= patience_ && seen_; }
    double best() const { return best_; }
    std::size_t bad_epochs() const { return bad_; }
    void restore(double best, std::size_t bad, bool seen) {
        best_ = best;
        bad_ = bad;
        seen_ = seen;
    }

private:
    std::size_t patience_;
    std::size_t bad_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
    bool seen_ = false;
};

struct TrainResult {
    double best_val = 0;
    std::size_t epochs = 0;
    std::size_t steps = 0;
    bool early_stopped = false;
    std::vector<double> val_history;
};

/// Optional adapter wiring for the trainer.
template <std::floating_point T>
struct TrainerHooks {
    // When set, only these parameters are optimized; they shadow base
    // parameters of the same name and the base model is frozen.
    ParameterStore<T>* overlay = nullptr;
    PrefixFn<T> prefix;
    // Windows arrive as consecutive groups of this size and stay together
    // in batches; batch_size then counts groups.
    std::size_t group = 1;
};

/// Epoch loop with validation on fixed masks, patience-based early stopping
/// and best-parameter retention. Batches, masks and dropout are derived from
/// (seed, epoch, step), so a run resumed from saved state continues exactly.
template <std::floating_point T>
class Trainer {
public:
    Trainer(Model<T>& model, std::vector<data::SeriesWindow> train, std::vector<data::SeriesWindow> val,
            TrainConfig config, std::ostream* log = nullptr, TrainerHooks<T> hooks = {});

    /// Runs until the epoch budget, the step cap or the patience runs out.
    /// On return the model holds the best validation parameters.
    TrainResult run();

    /// One epoch of updates followed by validation; returns the validation MSE.
    double run_epoch();
    double validate();

    bool finished() const;
    const TrainResult& result() const { return result_; }
    const std::set<std::size_t>& train_variables() const { return train_vars_; }

    /// Optimized parameters, optimizer moments, counters and the best snapshot.
    void save_state(const std::filesystem::path& path) const;
    void load_state(const std::filesystem::path& path);

    /// Best parameters with config and run metadata (base training only).
    numerics::Checkpoint best_checkpoint() const;

private:
    void log_record(const std::string& json_line);
    void restore_best();
    ParameterStore<T>& optimized() { return hooks_.overlay ? *hooks_.overlay : model_.params; }
    const ParameterStore<T>& optimized() const { return hooks_.overlay ? *hooks_.overlay : model_.params; }

    Model<T>& model_;
    TrainerHooks<T> hooks_;
    std::vector<data::SeriesWindow> train_;
    std::vector<data::MaskedView> val_views_;
    TrainConfig config_;
    std::ostream* log_;
    Adam<T> optimizer_;
    TrainResult result_;
    EarlyStopping stopping_;
    std::vector<numerics::Tensor<T>> best_;
    std::set<std::size_t> train_vars_;
    double started_ms_ = 0;
};

/// Stores the variable ids a model was trained on under meta.train_vars.
void write_train_variables(numerics::Checkpoint& ckpt, const std::set<std::size_t>& ids);
std::set<std::size_t> read_train_variables(const numerics::Checkpoint& ckpt);

} // namespace patchfill::training
