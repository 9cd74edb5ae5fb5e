#include "olts/config.hpp"
#include "olts/harness.hpp"
#include "olts/launcher.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace olts;
using namespace olts::launcher;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "olts_test_launcher" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ClientStatus running(std::uint64_t sim, std::uint64_t last_heartbeat, std::uint32_t retries = 0) {
    ClientStatus s;
    s.sim_id = sim;
    s.state = ClientState::Running;
    s.last_heartbeat_ms = last_heartbeat;
    s.started_ms = 0;
    s.retries_used = retries;
    return s;
}

const std::string kSmallRun = R"(preset = "e2_lorenz"
concurrency = 3
server.stop = "ensemble"

[trainer]
hidden = [8]
batch_size = 16
max_batches = 100000
validate_every = 500
validation_trajectories = 2

[buffer]
capacity = 512

[launcher]
tick_ms = 100
heartbeat_interval_ms = 100
client_step_delay_ms = 0.2
)";

struct Run {
    config::RunConfig cfg;
    LaunchOptions opts;
};

Run prepare(const std::string& name, const std::string& top, const std::string& tail = "") {
    const auto dir = fresh_dir(name);
    const auto text = top + kSmallRun + tail;
    std::ofstream(dir / "run.toml") << text;
    Run r{config::parse_config(text), {}};
    r.opts.olts_binary = OLTS_BINARY;
    r.opts.config_path = dir / "run.toml";
    r.opts.out_dir = dir / "out";
    return r;
}

nlohmann::json server_report(const Run& r) {
    std::ifstream f(r.opts.out_dir / "server_report.json");
    return nlohmann::json::parse(f);
}

// Hands one sim a command that always fails; everything else runs normally.
class FailingSimBackend : public SchedulerBackend {
public:
    explicit FailingSimBackend(std::uint64_t sim) : sim_(sim) {}
    std::unique_ptr<ProcessHandle> spawn(const JobSpec& spec) override {
        if (spec.role == Role::Client && spec.sim_id == sim_) {
            ++attempts;
            JobSpec bad = spec;
            bad.argv = {"/bin/sh", "-c", "exit 9"};
            return local_.spawn(bad);
        }
        return local_.spawn(spec);
    }
    int attempts = 0;

private:
    std::uint64_t sim_;
    LocalProcessBackend local_;
};

}  // namespace

TEST_CASE("monitor_tick") {
    const MonitorPolicy policy{1000, 3};

    SUBCASE("fresh heartbeats need nothing") {
        CHECK(monitor_tick(5000, {running(1, 4900), running(2, 4500)}, policy).empty());
    }
    SUBCASE("silent for twice the timeout is restarted") {
        CHECK(monitor_tick(5000, {running(1, 4900), running(2, 3000)}, policy) ==
              std::vector<Action>{{Action::Kind::Restart, 2}});
    }
    SUBCASE("silent with retries exhausted is abandoned") {
        CHECK(monitor_tick(5000, {running(7, 3000, 3)}, policy) == std::vector<Action>{{Action::Kind::Abandon, 7}});
    }
    SUBCASE("a failed exit is restarted without waiting") {
        auto s = running(4, 4999);
        s.state = ClientState::Failed;
        s.exit_code = 1;
        CHECK(monitor_tick(5000, {s}, policy) == std::vector<Action>{{Action::Kind::Restart, 4}});
    }
    SUBCASE("a client that just started is not silent yet") {
        auto s = running(5, 0);
        s.started_ms = 4500;
        CHECK(monitor_tick(5000, {s}, policy).empty());
    }
    SUBCASE("finished and pending clients are left alone") {
        auto done = running(1, 0), pending = running(2, 0), abandoned = running(3, 0);
        done.state = ClientState::Done;
        pending.state = ClientState::Pending;
        abandoned.state = ClientState::Abandoned;
        CHECK(monitor_tick(5000, {done, pending, abandoned}, policy).empty());
    }
}

TEST_CASE("local process backend") {
    LocalProcessBackend backend;
    JobSpec job;

    SUBCASE("nonexistent binary fails to spawn") {
        job.argv = {"/nonexistent/olts-client"};
        CHECK_THROWS_AS(backend.spawn(job), SpawnError);
    }
    SUBCASE("exit status is reported") {
        job.argv = {"/bin/sh", "-c", "exit 7"};
        auto p = backend.spawn(job);
        CHECK(p->pid() > 0);
        CHECK(p->wait_for(5000ms) == 7);
        CHECK(p->poll() == 7);
    }
    SUBCASE("environment is passed through") {
        job.argv = {"/bin/sh", "-c", "test \"$OLTS_PROBE\" = yes"};
        job.env = {{"OLTS_PROBE", "yes"}};
        CHECK(backend.spawn(job)->wait_for(5000ms) == 0);
    }
    SUBCASE("a killed process reports its signal") {
        job.argv = {"/bin/sleep", "30"};
        auto p = backend.spawn(job);
        CHECK_FALSE(p->poll().has_value());
        p->kill();
        CHECK(p->wait_for(5000ms) == 128 + 9);
    }
}

TEST_CASE("client argv carries parameters at full precision") {
    auto cfg = config::preset(config::Preset::E2Lorenz);
    cfg.launcher.client_step_delay_ms = 0.5;
    LaunchOptions opts;
    opts.olts_binary = "/opt/olts";
    opts.config_path = "/tmp/run.toml";
    const std::vector<double> params{40, 0.1 + 0.2, -1.0 / 3.0, 1e-310};
    const auto argv = client_argv(cfg, opts, 12, params, {"127.0.0.1", 4000});
    CHECK(argv.front() == "/opt/olts");
    CHECK(argv[1] == "client");
    const auto at = [&](const std::string& flag) {
        const auto it = std::find(argv.begin(), argv.end(), flag);
        REQUIRE(it != argv.end());
        return *(it + 1);
    };
    CHECK(at("--sim-id") == "12");
    CHECK(at("--server") == "127.0.0.1:4000");
    CHECK(at("--config") == "/tmp/run.toml");
    CHECK(at("--step-delay-ms") == "0.5");
    CHECK(harness::parse_params(cfg, at("--params"), 0).values == params);
}

TEST_CASE("launch keeps concurrency under the cap and completes the ensemble") {
    auto r = prepare("cap", "ensemble_size = 6\n");
    LocalProcessBackend backend;
    const auto report = launch(r.cfg, r.opts, backend);
    CHECK(report.launched == 6);
    CHECK(report.done == 6);
    CHECK(report.abandoned == 0);
    CHECK(report.max_running <= 3);
    CHECK(report.max_running >= 2);
    CHECK(report.server_exit_code == 0);
    const auto s = server_report(r);
    CHECK(s["sims_completed"] == 6);
    CHECK(s["trajectory_gaps"] == 0);
    CHECK(s["unique_timesteps"] == 6 * 2001);
    CHECK(fs::exists(r.opts.out_dir / "run_report.json"));
}

TEST_CASE("a killed client is restarted with the same sim and parameters") {
    auto r = prepare("kill", "ensemble_size = 4\n", "[launcher.faults]\nkill_count = 1\nfirst_kill_ms = 150\nmin_runtime_ms = 100\n");
    LocalProcessBackend backend;
    const auto report = launch(r.cfg, r.opts, backend);
    CHECK(report.killed == 1);
    CHECK(report.restarted >= 1);
    CHECK(report.done == 4);
    const auto s = server_report(r);
    CHECK(s["sims_completed"] == 4);
    CHECK(s["trajectory_gaps"] == 0);
    CHECK(s["duplicates_dropped"].get<std::uint64_t>() > 0);
    CHECK(s["unique_timesteps"] == 4 * 2001);
    CHECK(s["buffer_insertions"] == 4 * 2001);
    for (const auto& st : report.statuses) CHECK(st.state == ClientState::Done);
}

TEST_CASE("a client failing past max_retries is abandoned and the run still completes") {
    auto r = prepare("abandon", "ensemble_size = 3\nlauncher.max_retries = 2\n");
    FailingSimBackend backend(1);
    const auto report = launch(r.cfg, r.opts, backend);
    CHECK(backend.attempts == 3);
    CHECK(report.abandoned == 1);
    CHECK(report.done == 2);
    CHECK(report.server_exit_code == 0);
    for (const auto& st : report.statuses) {
        if (st.sim_id == 1) {
            CHECK(st.state == ClientState::Abandoned);
            CHECK(st.exit_code == 9);
            CHECK(st.retries_used == 2);
        } else {
            CHECK(st.state == ClientState::Done);
        }
    }
    CHECK(server_report(r)["sims_completed"] == 2);
}
