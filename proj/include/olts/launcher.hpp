#pragma once

#include "olts/config.hpp"
#include "olts/net.hpp"
#include "olts/wire.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace olts::launcher {

enum class ClientState { Pending, Running, Done, Failed, Abandoned };
const char* to_string(ClientState s);

struct ClientStatus {
    std::uint64_t sim_id = 0;
    std::vector<double> params;
    int pid = -1;
    ClientState state = ClientState::Pending;
    /// Wall-clock ms of the last sign of life seen by the server.
    std::uint64_t last_heartbeat_ms = 0;
    std::uint32_t retries_used = 0;
    std::uint64_t started_ms = 0;
    /// Set when the process exited 0 and is waiting for the server to
    /// confirm its Bye.
    std::optional<std::uint64_t> exited_ok_ms;
    std::optional<int> exit_code;
};

struct MonitorPolicy {
    std::uint32_t heartbeat_timeout_ms = 10000;
    std::uint32_t max_retries = 3;
};

struct Action {
    enum class Kind { Restart, Abandon };
    Kind kind;
    std::uint64_t sim_id;
    bool operator==(const Action&) const = default;
};

/// Decides what to do with silent or failed clients. A Running client is
/// silent when neither its last heartbeat nor its start time is within
/// the timeout. Pure; the caller applies the actions.
std::vector<Action> monitor_tick(std::uint64_t now_ms, const std::vector<ClientStatus>& statuses,
                                 const MonitorPolicy& policy);

enum class Role { Server, Client };

struct JobSpec {
    Role role = Role::Client;
    std::vector<std::string> argv;
    /// Added to the launcher's own environment.
    std::vector<std::pair<std::string, std::string>> env;
    std::uint64_t sim_id = 0;
    std::uint32_t max_retries = 3;
};

class SpawnError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ProcessHandle {
public:
    virtual ~ProcessHandle() = default;
    virtual int pid() const = 0;
    /// Exit code once the process has ended: the status for a normal exit,
    /// 128 + signal for a killed one.
    virtual std::optional<int> poll() = 0;
    virtual std::optional<int> wait_for(std::chrono::milliseconds timeout) = 0;
    virtual void kill() = 0;
};

/// Where a batch-scheduler backend would plug in.
class SchedulerBackend {
public:
    virtual ~SchedulerBackend() = default;
    /// Throws SpawnError when the job cannot be started.
    virtual std::unique_ptr<ProcessHandle> spawn(const JobSpec& spec) = 0;
};

/// Local OS processes, each in its own session so they outlive the launcher.
class LocalProcessBackend : public SchedulerBackend {
public:
    std::unique_ptr<ProcessHandle> spawn(const JobSpec& spec) override;
};

struct ServerStatus {
    /// Connected sims and the server's last-seen wall-clock ms for each.
    std::map<std::uint64_t, std::uint64_t> live;
    /// Sims whose Bye sealed a gap-free trajectory, with their last_t.
    std::map<std::uint64_t, std::uint32_t> completed;
};

/// Launcher side of the control channel.
class ControlClient {
public:
    static ControlClient connect(const net::Endpoint& ep, std::chrono::milliseconds timeout);

    std::vector<wire::ParamAssign> request_params(std::uint32_t count);
    ServerStatus poll();
    void drain();

private:
    explicit ControlClient(net::Socket sock);
    wire::Message read_until_ack(std::uint16_t type, std::vector<wire::Message>& out);

    // Heap-held so the reader and writer references survive a move.
    std::unique_ptr<net::Socket> sock_;
    std::unique_ptr<net::FrameReader> reader_;
    std::unique_ptr<net::FrameWriter> writer_;
};

struct LaunchOptions {
    /// The olts executable used for the server and client processes.
    std::filesystem::path olts_binary;
    std::filesystem::path config_path;
    bool full_scale = false;
    std::filesystem::path out_dir = ".";
    std::uint64_t fault_seed = 0;
};

struct RunReport {
    std::uint64_t launched = 0;
    std::uint64_t restarted = 0;
    std::uint64_t abandoned = 0;
    std::uint64_t done = 0;
    std::uint64_t killed = 0;
    std::uint32_t max_running = 0;
    double wall_time_s = 0.0;
    std::optional<int> server_exit_code;
    std::vector<ClientStatus> statuses;
};

/// Starts the server, runs the ensemble through at most `concurrency`
/// client processes, restarts failures, then drains the server and writes
/// run_report.json. Throws std::runtime_error when the server does not
/// become ready.
RunReport launch(const config::RunConfig& cfg, const LaunchOptions& opts, SchedulerBackend& backend);

void write_run_report(const RunReport& report, const std::filesystem::path& path);

/// Client argv for one sim, shared by the launcher and its tests.
std::vector<std::string> client_argv(const config::RunConfig& cfg, const LaunchOptions& opts, std::uint64_t sim_id,
                                     const std::vector<double>& params, const net::Endpoint& server);

/// Formats params as name=value pairs with round-trip precision.
std::string format_params(const std::vector<std::string>& names, const std::vector<double>& values);

}  // namespace olts::launcher
