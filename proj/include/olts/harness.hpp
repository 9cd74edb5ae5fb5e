#pragma once

#include "olts/client.hpp"
#include "olts/config.hpp"
#include "olts/dataset.hpp"
#include "olts/server.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace olts::harness {

// ---------------------------------------------------------------- client process

struct ClientRun {
    std::uint64_t sim_id = 0;
    ParamVector params;
    net::Endpoint server;
    client::ConnectOptions connect;
    double step_delay_ms = 0.0;
};

/// Integrates one simulation and streams every timestep through a
/// ClientSession, then finalizes. Returns the number of timesteps sent.
std::uint32_t run_client(const config::RunConfig& cfg, const ClientRun& run);

/// Parses "name=value,..." against the solver's parameter names. Missing
/// Lorenz initial coordinates are drawn from the configured distribution
/// with `seed`. Throws config::ConfigError for unknown or missing names.
ParamVector parse_params(const config::RunConfig& cfg, const std::string& text, std::uint64_t seed);

// ---------------------------------------------------------------- offline

/// Runs the solvers locally and writes cfg.offline.trajectories records.
/// Parameters come from the configured strategy with the master seed, so the
/// output is a pure function of the config.
dataset::Manifest offline_generate(const config::RunConfig& cfg, const std::filesystem::path& dir);

struct OfflineReport {
    std::uint64_t pairs = 0;
    std::uint64_t batches = 0;
    std::uint64_t batches_per_epoch = 0;
    std::vector<std::uint64_t> epoch_ends;
    double final_val_rmse = 0.0;
};

/// Epoch loop over a stored dataset with a fresh shuffle per epoch. Training
/// stops after max_batches; epoch boundaries are flagged in the metrics CSV.
OfflineReport offline_train(const config::RunConfig& cfg, const std::filesystem::path& dataset_dir,
                            const std::filesystem::path& out_dir);

/// Writes a copy of a dataset keeping every_k-th solver timestep.
void subsample_dataset(const std::filesystem::path& in, const std::filesystem::path& out, std::uint32_t every_k);

// ---------------------------------------------------------------- serialized online

/// Online training without processes or sockets: up to `concurrency` solvers
/// advance in lockstep, round robin, and their timesteps pass through the
/// same ServerCore, buffers and trainers as the threaded server. A batch is
/// trained after every insertions_per_batch insertions into a shard (unless
/// fill_buffer is set), and before any insertion into a full read-once
/// buffer. Single-threaded and
/// fully determined by the config.
server::ServeReport run_serialized(const config::RunConfig& cfg, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------- analysis

struct FeatureSummary {
    std::string feature;
    double mean_of_means = 0.0;
    /// Standard deviation over training of the per-batch mean.
    double std_of_means = 0.0;
    double mean_of_stds = 0.0;
};

/// Reads a batch_stats CSV and summarizes each feature across batches.
std::vector<FeatureSummary> summarize_batch_stats(const std::filesystem::path& csv);

struct RunMetrics {
    std::string label;
    std::uint64_t final_step = 0;
    double final_val_rmse = 0.0;
    double final_train_loss = 0.0;
};

/// Last row of a metrics CSV. Throws std::runtime_error when a required
/// column is missing.
RunMetrics read_final_metrics(const std::filesystem::path& csv, const std::string& label);

/// Relative improvement of `rmse` over `baseline_rmse`, in percent.
double gain_percent(double rmse, double baseline_rmse);

/// Markdown table and CSV comparing runs against the first one.
void write_comparison(const std::vector<RunMetrics>& runs, std::ostream& markdown, std::ostream& csv);

}  // namespace olts::harness
