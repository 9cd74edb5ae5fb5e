#pragma once

#include "olts/buffer.hpp"
#include "olts/mlp.hpp"
#include "olts/sampler.hpp"
#include "olts/solvers.hpp"
#include "olts/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace olts::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Preset { E1Heat, E2Lorenz, Advection, Custom };
enum class RunMode { Online, OfflineGenerate, OfflineTrain };
enum class SampleUnit { SingleStep, FullTrajectory };

/// When training stops. First: max_batches or ensemble complete with the
/// buffers drained, whichever happens first. Batches: max_batches only.
/// Ensemble: ensemble complete and drained only.
enum class StopCondition { First, Batches, Ensemble };

Preset parse_preset(const std::string& s);
const char* to_string(Preset p);
SampleUnit parse_sample_unit(const std::string& s);
const char* to_string(SampleUnit u);
StopCondition parse_stop(const std::string& s);
const char* to_string(StopCondition s);

struct BufferConfig {
    buffer::Policy policy = buffer::ReadOnceRandom{};
    std::uint32_t capacity = buffer::kDefaultCapacity;
};

struct ModelConfig {
    std::vector<int> hidden{64, 64, 64};
    nn::Activation activation = nn::Activation::ReLU;
    trainer::Mode mode = trainer::Mode::Direct;
    /// Parameters fed to the network; empty selects every parameter.
    std::vector<std::string> input_params;
};

struct TrainerConfig {
    ModelConfig model;
    trainer::SgdConfig sgd;
    std::uint32_t validate_every = 100;
    std::uint32_t checkpoint_every = 1000;
    std::uint32_t validation_trajectories = 10;
    bool log_batch_stats = false;
    bool loss_trace = false;
};

struct ServerConfig {
    StopCondition stop = StopCondition::First;
    std::string host = "127.0.0.1";
    std::uint16_t data_port = 0;
    std::uint16_t ctrl_port = 0;
    /// After the launcher disconnects without a drain request, reception
    /// ends once no client has been connected for this long.
    std::uint32_t orphan_grace_ms = 2000;
    /// Standalone servers stop receiving after this long with no connection
    /// at all; 0 waits forever.
    std::uint32_t idle_exit_ms = 0;
};

struct FaultConfig {
    std::uint32_t kill_count = 0;
    std::uint32_t first_kill_ms = 500;
    std::uint32_t interval_ms = 500;
    /// Only clients that have run this long are eligible.
    std::uint32_t min_runtime_ms = 200;
};

struct LauncherConfig {
    std::uint32_t max_retries = 3;
    std::uint32_t heartbeat_timeout_ms = 10000;
    std::uint32_t tick_ms = 1000;
    std::uint32_t heartbeat_interval_ms = 1000;
    double client_step_delay_ms = 0.0;
    std::uint32_t readiness_timeout_ms = 10000;
    std::uint32_t drain_timeout_ms = 120000;
    /// How long a client that exited 0 may wait for the server to report its
    /// Bye before it is treated as failed.
    std::uint32_t confirm_timeout_ms = 5000;
    FaultConfig faults;
};

struct OfflineConfig {
    std::uint32_t trajectories = 50;
};

struct SerializedConfig {
    /// Buffer insertions per training batch; 0 means the batch size.
    std::uint32_t insertions_per_batch = 0;
    /// Read-once buffers only: train just when the buffer is full, as when
    /// clients outpace the trainer. insertions_per_batch is then unused.
    bool fill_buffer = false;
};

struct Seeds {
    std::uint64_t master = 0;
    std::uint64_t validation = 1000003;
};

struct RunConfig {
    Preset preset = Preset::Custom;
    RunMode mode = RunMode::Online;
    solvers::Kind kind = solvers::Kind::Lorenz;
    solvers::SolverSettings solver;
    sampler::ParamSpace space;
    sampler::Strategy strategy = sampler::MonteCarlo{};
    std::uint64_t ensemble_size = 1;
    std::uint32_t concurrency = 1;
    std::uint32_t shards = 1;
    SampleUnit unit = SampleUnit::SingleStep;
    BufferConfig buffer;
    TrainerConfig trainer;
    Seeds seeds;
    ServerConfig server;
    LauncherConfig launcher;
    OfflineConfig offline;
    SerializedConfig serialized;

    /// Throws ConfigError naming the first violated rule.
    void validate() const;
    /// Input parameters after resolving the "all parameters" default.
    std::vector<std::string> input_params() const;
    std::uint32_t batch_size() const { return trainer.sgd.batch_size; }
};

/// Defaults for a preset. full_scale swaps the desk sizes for the large ones.
RunConfig preset(Preset p, bool full_scale = false);

/// Reads a run file. A top-level `preset` key selects the starting values and
/// every other key overrides them; unknown keys are errors.
RunConfig parse_config(std::string_view text, bool full_scale = false);
RunConfig load_config(const std::filesystem::path& path, bool full_scale = false);

}  // namespace olts::config
