#include "olts/launcher.hpp"

#include "olts/solvers.hpp"

#include <json.hpp>

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <thread>

extern char** environ;

namespace olts::launcher {

using namespace std::chrono_literals;

const char* to_string(ClientState s) {
    switch (s) {
        case ClientState::Pending: return "pending";
        case ClientState::Running: return "running";
        case ClientState::Done: return "done";
        case ClientState::Failed: return "failed";
        case ClientState::Abandoned: return "abandoned";
    }
    return "?";
}

std::vector<Action> monitor_tick(std::uint64_t now_ms, const std::vector<ClientStatus>& statuses,
                                 const MonitorPolicy& policy) {
    std::vector<Action> out;
    for (const auto& st : statuses) {
        bool failing = st.state == ClientState::Failed;
        if (st.state == ClientState::Running && !st.exited_ok_ms) {
            const auto seen = std::max(st.last_heartbeat_ms, st.started_ms);
            failing = now_ms > seen && now_ms - seen > policy.heartbeat_timeout_ms;
        }
        if (!failing) continue;
        out.push_back({st.retries_used < policy.max_retries ? Action::Kind::Restart : Action::Kind::Abandon, st.sim_id});
    }
    return out;
}

// ---------------------------------------------------------------- processes

namespace {

class LocalProcess : public ProcessHandle {
public:
    explicit LocalProcess(pid_t pid) : pid_(pid) {}
    ~LocalProcess() override {
        // Children are left running on purpose; only reap if already gone.
        if (!code_) poll();
    }

    int pid() const override { return pid_; }

    std::optional<int> poll() override {
        if (code_) return code_;
        int status = 0;
        const pid_t r = ::waitpid(pid_, &status, WNOHANG);
        if (r == pid_) code_ = decode(status);
        return code_;
    }

    std::optional<int> wait_for(std::chrono::milliseconds timeout) override {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        while (!poll()) {
            if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
            std::this_thread::sleep_for(10ms);
        }
        return code_;
    }

    void kill() override {
        if (!poll()) ::kill(pid_, SIGKILL);
    }

private:
    static int decode(int status) {
        if (WIFEXITED(status)) return WEXITSTATUS(status);
        if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
        return 255;
    }

    pid_t pid_;
    std::optional<int> code_;
};

}  // namespace

std::unique_ptr<ProcessHandle> LocalProcessBackend::spawn(const JobSpec& spec) {
    if (spec.argv.empty()) throw SpawnError("empty argv");
    std::vector<char*> argv;
    for (const auto& a : spec.argv) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);

    std::vector<std::string> env_store;
    for (char** e = environ; *e != nullptr; ++e) {
        const std::string_view kv(*e);
        const auto name = kv.substr(0, kv.find('='));
        const bool overridden = std::any_of(spec.env.begin(), spec.env.end(),
                                            [&](const auto& p) { return p.first == name; });
        if (!overridden) env_store.emplace_back(kv);
    }
    for (const auto& [k, v] : spec.env) env_store.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_store) envp.push_back(s.data());
    envp.push_back(nullptr);

    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETSID);
    pid_t pid = 0;
    const int rc = ::posix_spawn(&pid, argv[0], nullptr, &attr, argv.data(), envp.data());
    posix_spawnattr_destroy(&attr);
    if (rc != 0) throw SpawnError("cannot start " + spec.argv[0] + ": " + std::strerror(rc));
    return std::make_unique<LocalProcess>(pid);
}

// ---------------------------------------------------------------- control channel

ControlClient::ControlClient(net::Socket sock)
    : sock_(std::make_unique<net::Socket>(std::move(sock))),
      reader_(std::make_unique<net::FrameReader>(*sock_)),
      writer_(std::make_unique<net::FrameWriter>(*sock_)) {}

ControlClient ControlClient::connect(const net::Endpoint& ep, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        try {
            return ControlClient(net::Socket::connect(ep));
        } catch (const net::NetError&) {
            if (std::chrono::steady_clock::now() >= deadline) throw;
        }
        std::this_thread::sleep_for(50ms);
    }
}

wire::Message ControlClient::read_until_ack(std::uint16_t type, std::vector<wire::Message>& out) {
    for (;;) {
        auto msg = reader_->read();
        if (!msg) throw net::Closed();
        if (const auto* ack = std::get_if<wire::Ack>(&*msg)) {
            if (ack->ref_msg_type != type) throw net::NetError("control reply acknowledges the wrong request");
            return *msg;
        }
        out.push_back(std::move(*msg));
    }
}

std::vector<wire::ParamAssign> ControlClient::request_params(std::uint32_t count) {
    writer_->write(wire::ParamRequest{count});
    std::vector<wire::Message> replies;
    read_until_ack(static_cast<std::uint16_t>(wire::MsgType::ParamRequest), replies);
    std::vector<wire::ParamAssign> out;
    for (auto& m : replies)
        if (auto* a = std::get_if<wire::ParamAssign>(&m)) out.push_back(std::move(*a));
    return out;
}

ServerStatus ControlClient::poll() {
    writer_->write(wire::Heartbeat{0, net::wallclock_ms()});
    std::vector<wire::Message> replies;
    read_until_ack(static_cast<std::uint16_t>(wire::MsgType::Heartbeat), replies);
    ServerStatus st;
    for (const auto& m : replies) {
        if (const auto* h = std::get_if<wire::Heartbeat>(&m)) st.live[h->sender_id] = h->wallclock_ms;
        if (const auto* b = std::get_if<wire::Bye>(&m)) st.completed[b->sim_id] = b->last_t;
    }
    return st;
}

void ControlClient::drain() {
    writer_->write(wire::Bye{wire::kDrainSimId, 0});
    std::vector<wire::Message> ignored;
    read_until_ack(static_cast<std::uint16_t>(wire::MsgType::Bye), ignored);
}

// ---------------------------------------------------------------- launch

std::string format_params(const std::vector<std::string>& names, const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        char buf[32];
        const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, values[i]);
        if (i > 0) out += ',';
        out += names.at(i) + "=" + std::string(buf, p);
    }
    return out;
}

std::vector<std::string> client_argv(const config::RunConfig& cfg, const LaunchOptions& opts, std::uint64_t sim_id,
                                     const std::vector<double>& params, const net::Endpoint& server) {
    std::vector<std::string> argv{opts.olts_binary.string(),
                                  "client",
                                  "--kind",
                                  solvers::to_string(cfg.kind),
                                  "--sim-id",
                                  std::to_string(sim_id),
                                  "--client-id",
                                  std::to_string(sim_id),
                                  "--params",
                                  format_params(solvers::param_names(cfg.kind), params),
                                  "--server",
                                  server.str()};
    if (!opts.config_path.empty()) {
        argv.push_back("--config");
        argv.push_back(opts.config_path.string());
        if (opts.full_scale) argv.push_back("--full-scale");
    }
    if (cfg.launcher.client_step_delay_ms > 0) {
        char buf[32];
        const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, cfg.launcher.client_step_delay_ms);
        argv.push_back("--step-delay-ms");
        argv.emplace_back(buf, p);
    }
    return argv;
}

namespace {

class Launch {
public:
    Launch(const config::RunConfig& cfg, const LaunchOptions& opts, SchedulerBackend& backend)
        : cfg_(cfg), opts_(opts), backend_(backend), rng_(opts.fault_seed ^ cfg.seeds.master) {}

    RunReport run() {
        const auto t0 = std::chrono::steady_clock::now();
        std::filesystem::create_directories(opts_.out_dir);
        start_server();
        supervise();
        finish_server();
        report_.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report_.statuses = statuses_;
        write_run_report(report_, opts_.out_dir / "run_report.json");
        return report_;
    }

private:
    void start_server() {
        const auto data_port = net::pick_free_port();
        auto ctrl_port = net::pick_free_port();
        while (ctrl_port == data_port) ctrl_port = net::pick_free_port();
        data_ep_ = {cfg_.server.host, data_port};
        JobSpec job;
        job.role = Role::Server;
        job.argv = {opts_.olts_binary.string(), "server",      "--data-port", std::to_string(data_port),
                    "--ctrl-port",              std::to_string(ctrl_port), "--out-dir",   opts_.out_dir.string()};
        if (!opts_.config_path.empty()) {
            job.argv.push_back("--config");
            job.argv.push_back(opts_.config_path.string());
            if (opts_.full_scale) job.argv.push_back("--full-scale");
        }
        try {
            server_ = backend_.spawn(job);
        } catch (const SpawnError& e) {
            throw std::runtime_error(std::string("server did not start: ") + e.what());
        }

        const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(cfg_.launcher.readiness_timeout_ms);
        while (!ctrl_) {
            if (auto code = server_->poll())
                throw std::runtime_error("server exited with code " + std::to_string(*code) + " before it was ready");
            try {
                ctrl_ = ControlClient::connect({cfg_.server.host, ctrl_port}, 0ms);
            } catch (const net::NetError&) {
                if (std::chrono::steady_clock::now() >= deadline) {
                    server_->kill();
                    throw std::runtime_error("server not ready within the readiness timeout");
                }
                std::this_thread::sleep_for(50ms);
            }
        }
    }

    void supervise() {
        const MonitorPolicy policy{cfg_.launcher.heartbeat_timeout_ms, cfg_.launcher.max_retries};
        std::uint64_t next_poll = 0;
        std::uint64_t next_kill = net::wallclock_ms() + cfg_.launcher.faults.first_kill_ms;
        for (;;) {
            const auto now = net::wallclock_ms();
            reap(now);

            const bool awaiting = std::any_of(statuses_.begin(), statuses_.end(),
                                              [](const auto& s) { return s.exited_ok_ms.has_value(); });
            if (now >= next_poll || awaiting) {
                apply_status(ctrl_->poll(), now);
                next_poll = now + cfg_.launcher.tick_ms;
            }

            for (const auto& action : monitor_tick(now, statuses_, policy)) apply(action);

            if (report_.killed < cfg_.launcher.faults.kill_count && now >= next_kill && inject_fault(now))
                next_kill = now + cfg_.launcher.faults.interval_ms;

            fill(now);
            report_.max_running = std::max<std::uint32_t>(report_.max_running, static_cast<std::uint32_t>(procs_.size()));

            const bool settled = std::all_of(statuses_.begin(), statuses_.end(), [](const auto& s) {
                return s.state == ClientState::Done || s.state == ClientState::Abandoned;
            });
            if (exhausted_ && settled) return;
            if (auto code = server_->poll()) {
                std::cerr << "server exited early with code " << *code << '\n';
                for (auto& [sim, proc] : procs_) proc->kill();
                return;
            }
            std::this_thread::sleep_for(awaiting ? 100ms : 20ms);
        }
    }

    ClientStatus& status(std::uint64_t sim) {
        return *std::find_if(statuses_.begin(), statuses_.end(), [&](const auto& s) { return s.sim_id == sim; });
    }

    void reap(std::uint64_t now) {
        for (auto it = procs_.begin(); it != procs_.end();) {
            const auto code = it->second->poll();
            if (!code) {
                ++it;
                continue;
            }
            auto& st = status(it->first);
            st.exit_code = *code;
            st.pid = -1;
            if (*code == 0)
                st.exited_ok_ms = now;
            else
                st.state = ClientState::Failed;
            it = procs_.erase(it);
        }
    }

    void apply_status(const ServerStatus& server, std::uint64_t now) {
        for (auto& st : statuses_) {
            if (st.state != ClientState::Running) continue;
            if (auto it = server.live.find(st.sim_id); it != server.live.end())
                st.last_heartbeat_ms = std::max(st.last_heartbeat_ms, it->second);
            if (!st.exited_ok_ms) continue;
            if (server.completed.count(st.sim_id)) {
                st.state = ClientState::Done;
                st.exited_ok_ms.reset();
                ++report_.done;
            } else if (now - *st.exited_ok_ms > cfg_.launcher.confirm_timeout_ms) {
                st.state = ClientState::Failed;
                st.exited_ok_ms.reset();
            }
        }
    }

    void apply(const Action& action) {
        auto& st = status(action.sim_id);
        if (auto it = procs_.find(st.sim_id); it != procs_.end()) {
            it->second->kill();
            it->second->wait_for(5s);
            procs_.erase(it);
        }
        st.pid = -1;
        st.exited_ok_ms.reset();
        if (action.kind == Action::Kind::Restart) {
            ++st.retries_used;
            ++report_.restarted;
            st.state = ClientState::Pending;
        } else {
            st.state = ClientState::Abandoned;
            ++report_.abandoned;
        }
    }

    bool inject_fault(std::uint64_t now) {
        std::vector<std::uint64_t> candidates;
        for (const auto& [sim, proc] : procs_) {
            const auto& st = status(sim);
            if (!killed_.count(sim) && now - st.started_ms >= cfg_.launcher.faults.min_runtime_ms)
                candidates.push_back(sim);
        }
        if (candidates.empty()) return false;
        const auto sim = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng_)];
        procs_.at(sim)->kill();
        killed_.insert(sim);
        ++report_.killed;
        return true;
    }

    void fill(std::uint64_t now) {
        const auto cap = cfg_.concurrency;
        std::size_t pending = std::count_if(statuses_.begin(), statuses_.end(),
                                            [](const auto& s) { return s.state == ClientState::Pending; });
        if (!exhausted_ && procs_.size() + pending < cap) {
            const auto want = static_cast<std::uint32_t>(cap - procs_.size() - pending);
            const auto assigned = ctrl_->request_params(want);
            if (assigned.size() < want) exhausted_ = true;
            for (const auto& a : assigned) {
                ClientStatus st;
                st.sim_id = a.sim_id;
                st.params = a.params;
                statuses_.push_back(std::move(st));
            }
        }
        for (auto& st : statuses_) {
            if (procs_.size() >= cap) break;
            if (st.state != ClientState::Pending) continue;
            if (st.retries_used == 0 && st.started_ms == 0) ++report_.launched;
            st.started_ms = now;
            st.last_heartbeat_ms = 0;
            st.exit_code.reset();
            JobSpec job;
            job.sim_id = st.sim_id;
            job.max_retries = cfg_.launcher.max_retries;
            job.argv = client_argv(cfg_, opts_, st.sim_id, st.params, data_ep_);
            try {
                auto proc = backend_.spawn(job);
                st.pid = proc->pid();
                st.state = ClientState::Running;
                procs_.emplace(st.sim_id, std::move(proc));
            } catch (const SpawnError& e) {
                std::cerr << "sim " << st.sim_id << ": " << e.what() << '\n';
                st.state = ClientState::Failed;
            }
        }
    }

    void finish_server() {
        try {
            ctrl_->drain();
        } catch (const net::NetError& e) {
            std::cerr << "drain request failed: " << e.what() << '\n';
        }
        report_.server_exit_code = server_->wait_for(std::chrono::milliseconds(cfg_.launcher.drain_timeout_ms));
        if (!report_.server_exit_code) {
            std::cerr << "server did not stop within the drain timeout\n";
            server_->kill();
            report_.server_exit_code = server_->wait_for(5s);
        }
    }

    const config::RunConfig& cfg_;
    const LaunchOptions& opts_;
    SchedulerBackend& backend_;
    std::mt19937_64 rng_;

    std::unique_ptr<ProcessHandle> server_;
    std::optional<ControlClient> ctrl_;
    net::Endpoint data_ep_;
    std::vector<ClientStatus> statuses_;
    std::map<std::uint64_t, std::unique_ptr<ProcessHandle>> procs_;
    std::set<std::uint64_t> killed_;
    bool exhausted_ = false;
    RunReport report_;
};

}  // namespace

RunReport launch(const config::RunConfig& cfg, const LaunchOptions& opts, SchedulerBackend& backend) {
    cfg.validate();
    Launch l(cfg, opts, backend);
    return l.run();
}

void write_run_report(const RunReport& r, const std::filesystem::path& path) {
    nlohmann::json j;
    j["launched"] = r.launched;
    j["restarted"] = r.restarted;
    j["abandoned"] = r.abandoned;
    j["done"] = r.done;
    j["killed"] = r.killed;
    j["max_running"] = r.max_running;
    j["wall_time_s"] = r.wall_time_s;
    j["server_exit_code"] = r.server_exit_code ? nlohmann::json(*r.server_exit_code) : nlohmann::json(nullptr);
    auto& clients = j["clients"] = nlohmann::json::array();
    for (const auto& s : r.statuses) {
        clients.push_back({{"sim_id", s.sim_id},
                           {"state", to_string(s.state)},
                           {"retries_used", s.retries_used},
                           {"exit_code", s.exit_code ? nlohmann::json(*s.exit_code) : nlohmann::json(nullptr)},
                           {"params", s.params}});
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

}  // namespace olts::launcher
