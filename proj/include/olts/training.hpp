#pragma once

#include "olts/buffer.hpp"
#include "olts/config.hpp"
#include "olts/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace olts::training {

/// Everything derived from a run config that every training path shares:
/// model shape, pair construction, normalization and the held-out set.
struct TrainingSetup {
    trainer::ModelSpec spec;
    trainer::Normalizer input_norm;
    trainer::Normalizer target_norm;
    trainer::PairSet validation;
    std::vector<int> dims;
    nn::Activation activation = nn::Activation::ReLU;
    std::vector<std::uint32_t> field_shape;
    /// One name per network input, used as batch-statistics column names.
    std::vector<std::string> feature_names;
};

/// Full trajectories for `count` held-out parameter vectors drawn by Monte
/// Carlo from the validation seed.
std::vector<Sample> validation_trajectories(const config::RunConfig& cfg, std::uint32_t count);

/// Parameters take their scaling from the parameter space (MinMax over a
/// support, Standardize for normal entries); field inputs and targets are
/// standardized on the validation set.
TrainingSetup make_training_setup(const config::RunConfig& cfg);

std::uint64_t model_seed(const config::RunConfig& cfg, std::uint32_t shard);
std::uint64_t batch_seed(const config::RunConfig& cfg, std::uint32_t shard);
std::uint64_t buffer_seed(const config::RunConfig& cfg, std::uint32_t shard);

std::string metrics_file(std::uint32_t shard);
std::string checkpoint_file(std::uint32_t shard);
std::string batch_stats_file(std::uint32_t shard);
std::string loss_trace_file(std::uint32_t shard);

/// One shard's model and its output files. Not thread-safe; owned by a
/// single training context.
///
/// Metrics rows (step, lr, train_loss, val_rmse, epoch, epoch_end) are
/// written every validate_every steps, at marked epoch ends and at finish;
/// train_loss is the mean batch loss since the previous row.
class ShardTrainer {
public:
    ShardTrainer(const TrainingSetup& setup, const config::RunConfig& cfg, std::uint32_t shard,
                 const std::filesystem::path& out_dir);

    bool budget_left() const noexcept { return step_ < cfg_.trainer.sgd.max_batches; }
    std::uint64_t step() const noexcept { return step_; }
    const trainer::Mlp& model() const noexcept { return model_; }
    buffer::Rng& batch_rng() noexcept { return rng_; }
    const std::vector<double>& losses() const noexcept { return losses_; }

    /// One SGD step. Throws trainer::TrainingDiverged after checkpointing the
    /// last finite model.
    trainer::StepResult train(const buffer::Batch& batch);
    trainer::StepResult train(const trainer::PairSet& pairs);

    /// Flags the metrics row written when the step counter reaches `step` as
    /// the end of `epoch`, forcing a row there.
    void schedule_epoch_end(std::uint64_t step, std::uint32_t epoch);
    /// Final metrics row (unless one was just written) and checkpoint.
    void finish();
    bool finished() const noexcept { return finished_; }

private:
    trainer::StepResult record(trainer::StepResult r);
    void write_row(bool epoch_end);
    void checkpoint();
    template <typename F>
    trainer::StepResult guarded(F&& step_fn);

    const TrainingSetup& setup_;
    const config::RunConfig& cfg_;
    std::uint32_t shard_;
    std::filesystem::path dir_;
    trainer::Mlp model_;
    buffer::Rng rng_;
    std::uint64_t step_ = 0;
    std::uint64_t last_row_step_ = 0;
    bool wrote_any_row_ = false;
    std::uint32_t epoch_ = 0;
    std::map<std::uint64_t, std::uint32_t> epoch_ends_;
    double window_sum_ = 0.0;
    std::uint64_t window_count_ = 0;
    std::vector<double> losses_;
    bool finished_ = false;

    std::ofstream metrics_;
    std::ofstream stats_;
    std::ofstream trace_;
};

}  // namespace olts::training
