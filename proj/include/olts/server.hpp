#pragma once

#include "olts/config.hpp"
#include "olts/sample.hpp"
#include "olts/wire.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace olts::server {

struct Counters {
    /// Timestep messages accepted, duplicates included.
    std::uint64_t samples_received = 0;
    std::uint64_t duplicates_dropped = 0;
    /// Distinct (sim_id, t_index) pairs seen.
    std::uint64_t unique_timesteps = 0;
    std::uint64_t buffer_insertions = 0;
    /// Samples dropped because their shard had stopped training.
    std::uint64_t samples_discarded = 0;
    /// Reservoir puts the policy chose not to keep.
    std::uint64_t reservoir_not_retained = 0;
    std::uint64_t trajectory_gaps = 0;
    /// Connections that closed after Hello without a Bye.
    std::uint64_t incomplete_trajectories = 0;
    std::uint64_t empty_trajectories = 0;
    std::uint64_t protocol_errors = 0;
    std::uint64_t sims_completed = 0;
    std::uint64_t params_assigned = 0;
};

/// Per-connection reception state; owned by the context reading that
/// connection.
struct ConnState {
    bool hello = false;
    bool bye = false;
    std::uint64_t sim_id = 0;
    std::uint32_t shard = 0;
    ParamVector params;
    std::uint32_t field_dim = 0;
    std::vector<double> prev_field;
    std::optional<std::uint32_t> prev_t;
    /// Trajectory-unit mode: fields in arrival order and whether they were
    /// contiguous from t = 0.
    std::vector<std::vector<double>> fields;
    bool out_of_order = false;
};

struct DataEffect {
    /// Sample for the buffer of ConnState::shard.
    std::optional<Sample> sample;
    /// The server closes the connection after this message.
    bool close = false;
    /// Non-empty for a protocol violation.
    std::string error;
};

/// Socket-free message handling shared by the threaded server and the
/// serialized execution mode. All methods are thread-safe.
///
/// Shards are assigned per connection at Hello, round robin over the number
/// of Hellos seen so far: the i-th connection (from 0) goes to shard i mod S.
/// Dedup is global over (sim_id, t_index) for the lifetime of the core.
class ServerCore {
public:
    ServerCore(const config::RunConfig& cfg, std::uint32_t shards);

    DataEffect on_data(ConnState& conn, const wire::Message& msg, std::uint64_t now_ms);
    void on_disconnect(ConnState& conn);

    /// Replies for one control-channel message. ParamRequest{n} gets up to n
    /// ParamAssign and an Ack; Heartbeat is a status poll answered with one
    /// Heartbeat{sim_id, last_seen_ms} per connected sim, one Bye{sim_id,
    /// last_t} per completed sim, then an Ack; Bye{kDrainSimId} requests
    /// drain and is acknowledged. Anything else yields no reply and sets
    /// `violation`.
    std::vector<wire::Message> on_control(const wire::Message& msg, bool& violation);

    void note_inserted();
    void note_not_retained();
    void note_discarded();
    void note_protocol_error();
    /// A sim whose reader is blocked on a full buffer is reported as live by
    /// the status poll; backpressure is not silence.
    void set_blocked(std::uint64_t sim_id, bool blocked);

    Counters counters() const;
    std::vector<std::uint32_t> clients_per_shard() const;
    std::map<std::uint64_t, std::uint32_t> completed() const;
    std::uint64_t completed_count() const;
    bool drain_requested() const;
    /// Every sim of the ensemble has completed, or the ensemble is empty.
    bool ensemble_complete() const;
    std::uint32_t shard_count() const noexcept { return shards_; }
    const std::vector<std::string>& param_names() const noexcept { return names_; }

private:
    DataEffect hello(ConnState& conn, const wire::Hello& h, std::uint64_t now_ms);
    DataEffect timestep(ConnState& conn, const wire::Timestep& ts, std::uint64_t now_ms);
    DataEffect bye(ConnState& conn, const wire::Bye& b);

    struct SimRecord {
        std::uint32_t open_connections = 0;
        std::uint64_t last_seen_ms = 0;
        std::uint32_t blocked = 0;
        std::uint64_t unique = 0;
        std::uint32_t max_t = 0;
        bool trajectory_inserted = false;
    };

    const config::RunConfig& cfg_;
    const std::uint32_t shards_;
    std::vector<std::string> names_;
    std::uint32_t field_dim_ = 0;

    mutable std::mutex mu_;
    Counters counters_;
    std::uint64_t hello_count_ = 0;
    std::vector<std::uint32_t> per_shard_;
    std::set<std::pair<std::uint64_t, std::uint32_t>> seen_;
    std::map<std::uint64_t, SimRecord> sims_;
    std::map<std::uint64_t, std::uint32_t> completed_;
    std::uint64_t next_index_ = 0;
    bool drain_ = false;
};

struct ServeReport {
    Counters counters;
    std::vector<std::uint64_t> batches_per_shard;
    std::vector<std::uint32_t> clients_per_shard;
    std::map<std::uint64_t, std::uint32_t> completed;
    bool diverged = false;
    std::string stop_reason;
    double wall_time_s = 0.0;

    std::uint64_t batches_trained() const;
};

struct ServeOptions {
    std::filesystem::path out_dir = ".";
    /// Raised externally (signal handler) to stop without draining.
    const std::atomic<bool>* stop = nullptr;
    /// Called once both listeners are bound, with their ports.
    std::function<void(std::uint16_t data_port, std::uint16_t ctrl_port)> on_ready;
};

/// Binds the data and control ports from cfg.server (0 picks a free port),
/// receives and trains until the stop condition, then writes the final
/// checkpoint, metrics and server_report.json. Throws net::NetError when a
/// port cannot be bound.
ServeReport serve(const config::RunConfig& cfg, const ServeOptions& opts);

void write_report(const ServeReport& report, const std::filesystem::path& path);

}  // namespace olts::server
