// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `acceptance wire buffer` runs a subset.

#include "olts/buffer.hpp"
#include "olts/config.hpp"
#include "olts/dataset.hpp"
#include "olts/harness.hpp"
#include "olts/mlp.hpp"
#include "olts/solvers.hpp"
#include "olts/wire.hpp"

#include "grad_check.hpp"
#include "solver_oracles.hpp"
#include "stats_util.hpp"
#include "wire_fixtures.hpp"
#include "wire_gen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

using namespace olts;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double limit_s;
    std::function<Outcome()> run;
};

fs::path g_work;

fs::path fresh(const std::string& name) {
    const auto dir = g_work / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("missing " + p.string());
    return nlohmann::json::parse(f);
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_shell(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128 + WTERMSIG(rc);
}

// ---------------------------------------------------------------- wire

Outcome wire_conformance() {
    std::mt19937_64 rng(20240611);
    std::size_t round_trip_failures = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto msg = testing::random_message(rng);
        const auto bytes = wire::encode(msg);
        if (wire::decode(bytes) != msg || wire::encode(wire::decode(bytes)) != bytes) ++round_trip_failures;
    }

    const fs::path dir = OLTS_WIRE_FIXTURES;
    const auto index = testing::load_fixture_index(dir);
    std::size_t golden = 0, golden_failures = 0;
    std::vector<std::vector<std::byte>> frames;
    for (const auto& fx : index.at("fixtures")) {
        const auto bytes = testing::read_bytes(dir / fx.at("file").get<std::string>());
        const auto msg = testing::fixture_message(fx);
        ++golden;
        if (wire::encode(msg) != bytes || wire::encode(msg) != bytes || wire::decode(bytes) != msg) ++golden_failures;
        frames.push_back(bytes);
    }

    // Every bit of body and checksum, over the golden frames and random ones.
    for (int i = 0; i < 300; ++i) frames.push_back(wire::encode(testing::random_message(rng)));
    std::size_t flips = 0, missed = 0;
    for (auto frame : frames) {
        for (std::size_t byte = wire::kHeaderSize; byte < frame.size(); ++byte) {
            for (int bit = 0; bit < 8; ++bit) {
                frame[byte] ^= std::byte(1u << bit);
                ++flips;
                try {
                    wire::decode(frame);
                    ++missed;
                } catch (const wire::DecodeError& e) {
                    if (e.code() != wire::DecodeErrc::CrcMismatch) ++missed;
                }
                frame[byte] ^= std::byte(1u << bit);
            }
        }
    }
    const bool pass = round_trip_failures == 0 && golden > 0 && golden_failures == 0 && missed == 0;
    return {pass, "round trips 10000 failed " + std::to_string(round_trip_failures) + ", golden frames " +
                      std::to_string(golden) + " unstable " + std::to_string(golden_failures) + ", bit flips " +
                      std::to_string(flips) + " not CrcMismatch " + std::to_string(missed)};
}

// ---------------------------------------------------------------- buffer

Sample tagged(std::uint64_t id) {
    Sample s;
    s.sim_id = id;
    s.unit = SingleStep{0, {static_cast<double>(id)}};
    return s;
}

Outcome buffer_suite() {
    constexpr std::uint32_t capacity = 32;
    std::size_t exactness_failures = 0, watermark_violations = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        buffer::Rng ops(seed), draw(seed + 7919);
        const std::uint32_t watermark = 1 + ops() % 12;
        buffer::MemoryBuffer buf(buffer::ReadOnceRandom{watermark}, capacity);
        std::vector<std::uint64_t> inserted, yielded;
        std::uint64_t next = 0;
        for (int op = 0; op < 1000; ++op) {
            const auto before = buf.occupancy().count;
            if (ops() % 2 == 0) {
                if (buf.put(tagged(next))) inserted.push_back(next);
                else if (before != capacity) ++exactness_failures;
                ++next;
            } else {
                const std::uint32_t bs = 1 + ops() % 6;
                if (auto b = buf.try_get_batch(bs, draw)) {
                    if (before < std::max(watermark, bs) || b->samples.size() != bs ||
                        buf.occupancy().count != before - bs)
                        ++watermark_violations;
                    for (const auto& s : b->samples) yielded.push_back(s.sim_id);
                } else if (before >= std::max(watermark, bs)) {
                    ++exactness_failures;
                }
            }
        }
        // Whatever is still buffered counts as not yet read.
        const auto left = buf.occupancy().count;
        std::sort(inserted.begin(), inserted.end());
        std::sort(yielded.begin(), yielded.end());
        if (std::adjacent_find(yielded.begin(), yielded.end()) != yielded.end() ||
            yielded.size() + left != inserted.size() ||
            !std::includes(inserted.begin(), inserted.end(), yielded.begin(), yielded.end()))
            ++exactness_failures;
    }

    constexpr int k = 16, N = 1024, trials = 10000;
    std::vector<long> counts(N, 0);
    for (int t = 0; t < trials; ++t) {
        buffer::MemoryBuffer buf(buffer::ReservoirWeighted{}, k, 1000003 + t);
        for (int i = 0; i < N; ++i) buf.put(tagged(i));
        buffer::Rng rng(t);
        auto all = buf.try_get_batch(k, rng);
        if (!all) return {false, "reservoir returned no batch"};
        for (const auto& s : all->samples) ++counts[s.sim_id];
    }
    const double x = testing::inclusion_chi_square(counts, trials, double(k) / N);
    const double p = testing::chi_square_upper_tail(x, N - 1);
    return {exactness_failures == 0 && watermark_violations == 0 && p > 0.01,
            "read-once seeds 100 x 1000 ops exactness failures " + std::to_string(exactness_failures) +
                ", watermark violations " + std::to_string(watermark_violations) + ", reservoir chi2 " + fmt(x, 6) +
                " p " + fmt(p) + " (need > 0.01)"};
}

// ---------------------------------------------------------------- gradients

Outcome gradient_check() {
    std::mt19937_64 rng(99);
    double worst_relu = 0.0, worst_silu = 0.0;
    for (int i = 0; i < 50; ++i) {
        worst_relu = std::max(worst_relu, testing::random_gradient_check(rng, nn::Activation::ReLU));
        worst_silu = std::max(worst_silu, testing::random_gradient_check(rng, nn::Activation::SiLU));
    }
    return {worst_relu < 1e-5 && worst_silu < 1e-5,
            "50 nets each, max relative error relu " + fmt(worst_relu) + " silu " + fmt(worst_silu) + " (need < 1e-5)"};
}

// ---------------------------------------------------------------- solvers

Outcome solver_oracles() {
    using namespace solvers;
    std::vector<std::string> failed;

    {
        HeatParams p;
        p.n = 16;
        p.T_ic = p.T_x1 = p.T_x2 = p.T_y1 = p.T_y2 = 321.5;
        HeatSolver solver(p);
        auto s = solver.initial_state();
        double worst = 0.0;
        for (int k = 0; k < 100; ++k) {
            s = solver.step(s);
            worst = std::max(worst, (s.grid.array() - 321.5).abs().maxCoeff());
        }
        if (worst > 1e-10) failed.push_back("uniform fixed point " + fmt(worst));
    }
    {
        HeatParams p{450, 120, 480, 250, 390};
        p.n = 16;
        HeatSolver solver(p);
        const auto steady = testing::jacobi_steady_state(solver.initial_state().grid, p.n, 1e-13);
        auto s = solver.initial_state();
        for (int k = 0; k < 2000; ++k) s = solver.step(s);
        const double dist = (s.grid - steady).lpNorm<Eigen::Infinity>();
        if (dist > 1e-8) failed.push_back("steady state distance " + fmt(dist));
    }
    {
        std::mt19937_64 rng(2718);
        std::uniform_real_distribution<double> temp(100, 500), dt(1e-4, 1.0);
        int violations = 0;
        for (int run = 0; run < 100; ++run) {
            HeatParams p{temp(rng), temp(rng), temp(rng), temp(rng), temp(rng)};
            p.n = 12;
            p.dt = dt(rng);
            const double lo = std::min({p.T_ic, p.T_x1, p.T_x2, p.T_y1, p.T_y2});
            const double hi = std::max({p.T_ic, p.T_x1, p.T_x2, p.T_y1, p.T_y2});
            HeatSolver solver(p);
            auto s = solver.initial_state();
            for (int k = 0; k < 50; ++k) {
                s = solver.step(s);
                if (s.grid.minCoeff() < lo || s.grid.maxCoeff() > hi) ++violations;
            }
        }
        if (violations > 0) failed.push_back("max principle violations " + std::to_string(violations));
    }
    {
        AdvectionParams p;
        p.n = 64;
        p.beta = 1.0;
        p.dt = p.dx();
        std::mt19937_64 rng(5);
        std::vector<double> u(p.n);
        for (auto& x : u) x = std::uniform_real_distribution<double>(-3, 3)(rng);
        bool exact = p.cfl() == 1.0;
        auto v = u;
        for (std::uint32_t step = 1; step <= p.n; ++step) {
            v = advect_step(v, p);
            for (std::uint32_t i = 0; i < p.n; ++i) exact = exact && v[i] == u[(i + p.n - step % p.n) % p.n];
        }
        if (!exact) failed.push_back("advection shift not exact");
    }
    {
        LorenzParams p;
        p.rho = 0.5;
        Vec3 pos(1, 1, 1);
        const int steps = static_cast<int>(std::lround(20.0 / p.dt));
        for (int k = 0; k < steps; ++k) pos = lorenz_step(pos, p);
        if (!(pos.norm() < 1e-3)) failed.push_back("lorenz decay norm " + fmt(pos.norm()));
    }
    {
        LorenzParams p;
        p.rho = 28.0;
        const Vec3 next = lorenz_step(Vec3(1, 1, 1), p);
        const double err = (next - Vec3(1.0, 1.26, 1.0 + 0.01 * (1.0 - 8.0 / 3.0))).cwiseAbs().maxCoeff();
        if (err > 1e-12) failed.push_back("lorenz hand step error " + fmt(err));
    }
    std::string detail = "heat fixed point, Jacobi steady state 16x16, max principle 100 runs, CFL 1 shift, "
                         "lorenz decay, lorenz hand step";
    for (const auto& f : failed) detail += "; FAILED " + f;
    return {failed.empty(), detail};
}

// ---------------------------------------------------------------- end to end

Outcome end_to_end() {
    const auto dir = fresh("e2e");
    std::ofstream(dir / "run.toml") << R"(preset = "e2_lorenz"
ensemble_size = 20
concurrency = 4
server.stop = "ensemble"

[trainer]
hidden = [32]
validate_every = 1000
validation_trajectories = 2

[launcher]
tick_ms = 100
heartbeat_interval_ms = 200
client_step_delay_ms = 1.0
faults.kill_count = 3
faults.first_kill_ms = 600
faults.interval_ms = 700
faults.min_runtime_ms = 300
)";
    const int rc = run_shell(std::string("'") + OLTS_BINARY + "' launch --config '" + (dir / "run.toml").string() +
                             "' --out-dir '" + (dir / "out").string() + "' > '" + (dir / "launch.log").string() +
                             "' 2>&1");
    const auto run = read_json(dir / "out" / "run_report.json");
    const auto srv = read_json(dir / "out" / "server_report.json");
    int done = 0;
    for (const auto& c : run["clients"]) done += c["state"] == "done";
    const std::uint64_t unique = srv["unique_timesteps"], insertions = srv["buffer_insertions"];
    const std::uint64_t dups = srv["duplicates_dropped"], gaps = srv["trajectory_gaps"];
    const std::uint64_t killed = run["killed"];
    std::uint64_t expected_unique = 0;
    for (const auto& [sim, last_t] : srv["completed"].items()) expected_unique += last_t.get<std::uint64_t>() + 1;
    const bool pass = rc == 0 && done == 20 && run["clients"].size() == 20 && killed == 3 && gaps == 0 && dups > 0 &&
                      insertions == unique && unique == expected_unique && srv["sims_completed"] == 20;
    return {pass, "exit " + std::to_string(rc) + ", Done " + std::to_string(done) + "/20, killed " +
                      std::to_string(killed) + ", restarted " + run["restarted"].dump() + ", gaps " +
                      std::to_string(gaps) + ", duplicates " + std::to_string(dups) + ", insertions " +
                      std::to_string(insertions) + ", unique " + std::to_string(unique) + " (sum over sims " +
                      std::to_string(expected_unique) + ")"};
}

// ---------------------------------------------------------------- bias

double rho_std(const fs::path& dir) {
    for (const auto& f : harness::summarize_batch_stats(dir / "batch_stats_shard0.csv"))
        if (f.feature == "rho") return f.std_of_means;
    throw std::runtime_error("no rho column in batch stats");
}

Outcome bias_mitigation() {
    const std::string common = R"(preset = "e2_lorenz"
ensemble_size = 1000
server.stop = "ensemble"
trainer.hidden = [32]
trainer.log_batch_stats = true
trainer.validate_every = 100000
buffer.capacity = 4096
)";
    int wins = 0;
    std::string detail = "std of batch-mean rho, stream/sampled ratio per seed:";
    for (int seed = 1; seed <= 5; ++seed) {
        const std::string seeded = common + "seeds.master = " + std::to_string(seed) + "\n";
        const auto stream_dir = fresh("bias/stream_" + std::to_string(seed));
        const auto mc_dir = fresh("bias/mc_" + std::to_string(seed));
        harness::run_serialized(config::parse_config(seeded + "sampling.strategy = \"ordered_sweep\"\n"
                                                              "sampling.axis = \"rho\"\nbuffer.policy = \"fifo\"\n"),
                                stream_dir);
        harness::run_serialized(
            config::parse_config(seeded + "sampling.strategy = \"monte_carlo\"\nbuffer.policy = \"read_once\"\n"),
            mc_dir);
        const double ratio = rho_std(stream_dir) / rho_std(mc_dir);
        wins += ratio >= 2.0;
        detail += " " + fmt(ratio);
    }
    return {wins >= 4, detail + " (" + std::to_string(wins) + "/5 >= 2, need 4)"};
}

// ---------------------------------------------------------------- trend

struct MetricsRow {
    std::uint64_t step = 0;
    double train_loss = 0.0, val_rmse = 0.0;
    bool epoch_end = false;
};

std::vector<MetricsRow> read_metrics(const fs::path& csv) {
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    if (line != "step,lr,train_loss,val_rmse,epoch,epoch_end") throw std::runtime_error("unexpected header " + line);
    std::vector<MetricsRow> rows;
    while (std::getline(f, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        if (cols.size() != 6) throw std::runtime_error("bad metrics row " + line);
        rows.push_back({std::stoull(cols[0]), std::stod(cols[2]), std::stod(cols[3]), cols[5] == "1"});
    }
    return rows;
}

Outcome online_vs_offline() {
    int online_wins = 0, signatures = 0;
    std::string detail;
    for (int seed = 1; seed <= 5; ++seed) {
        const auto cfg = config::parse_config("preset = \"e1_heat\"\nseeds.master = " + std::to_string(seed) + R"(
trainer.batch_size = 5
trainer.lr0 = 0.05
trainer.validate_every = 500
serialized.fill_buffer = true
)");
        const auto base = "trend/seed" + std::to_string(seed);
        const auto on_dir = fresh(base + "/online"), off_dir = fresh(base + "/offline");
        const auto online = harness::run_serialized(cfg, on_dir);

        auto off_cfg = cfg;
        off_cfg.trainer.sgd.max_batches = online.batches_trained();
        harness::offline_generate(off_cfg, g_work / base / "dataset");
        const auto offline = harness::offline_train(off_cfg, g_work / base / "dataset", off_dir);

        const auto on_rows = read_metrics(on_dir / "metrics_shard0.csv");
        const auto off_rows = read_metrics(off_dir / "metrics_shard0.csv");
        const double on_val = on_rows.back().val_rmse, off_val = off_rows.back().val_rmse;

        // Pooled over every logged row after the first epoch boundary; the
        // loss is a mean square, so validation is squared to match.
        double train_sum = 0.0, val_sum = 0.0;
        bool after_first = false;
        for (const auto& r : off_rows) {
            if (after_first) {
                train_sum += r.train_loss;
                val_sum += r.val_rmse * r.val_rmse;
            }
            after_first = after_first || r.epoch_end;
        }
        const double gap = train_sum > 0.0 ? val_sum / train_sum : 0.0;
        const bool win = on_val < off_val && online.batches_trained() == offline.batches;
        const bool signature = train_sum > 0.0 && gap > 1.2;
        online_wins += win;
        signatures += signature;
        detail += " [seed " + std::to_string(seed) + ": batches " + std::to_string(online.batches_trained()) + "/" +
                  std::to_string(offline.batches) + ", val online " + fmt(on_val, 4) + " offline " + fmt(off_val, 4) +
                  ", offline gap " + fmt(gap) + "]";
    }
    return {online_wins >= 4 && signatures >= 4,
            "online lower in " + std::to_string(online_wins) + "/5 (need 4), offline gap ratio > 1.2 in " +
                std::to_string(signatures) + "/5 (need 4);" + detail};
}

// ---------------------------------------------------------------- determinism

Outcome determinism() {
    const auto cfg = config::parse_config(R"(preset = "e2_lorenz"
ensemble_size = 6
concurrency = 1
shards = 1
seeds.master = 424242
server.stop = "ensemble"
trainer.hidden = [32, 32]
trainer.loss_trace = true
trainer.validate_every = 50
)");
    std::vector<std::string> traces;
    for (int run = 0; run < 2; ++run) {
        const auto dir = fresh("determinism/run" + std::to_string(run));
        harness::run_serialized(cfg, dir);
        traces.push_back(read_text(dir / "loss_trace_shard0.csv"));
    }
    const auto rows = std::count(traces[0].begin(), traces[0].end(), '\n') - 1;
    return {rows > 0 && traces[0] == traces[1],
            "loss trace rows " + std::to_string(rows) + ", bitwise identical " + (traces[0] == traces[1] ? "yes" : "no")};
}

// ---------------------------------------------------------------- no file

struct Trace {
    std::set<fs::path> written;
    std::vector<std::string> renames;
};

Trace read_trace(const fs::path& log, const fs::path& cwd) {
    Trace t;
    std::ifstream f(log);
    std::string pid, what;
    while (f >> pid >> what) {
        std::string rest;
        std::getline(f, rest);
        std::istringstream parts(rest);
        std::string a, b;
        parts >> a >> b;
        auto abs = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : cwd / p; };
        if (what == "open") t.written.insert(abs(a).lexically_normal());
        if (what == "rename") {
            t.written.insert(abs(b).lexically_normal());
            t.renames.push_back(a);
        }
    }
    return t;
}

// Every timestep a Lorenz trajectory produces, as the 24 raw bytes of its
// three doubles in memory order.
std::unordered_set<std::string> lorenz_rows(const config::RunConfig& cfg, const std::vector<std::vector<double>>& params) {
    std::unordered_set<std::string> rows;
    for (const auto& values : params) {
        auto sim = solvers::make_simulation(cfg.kind, ParamVector{cfg.space.names(), values}, cfg.solver);
        for (;;) {
            const auto f = sim->field();
            rows.emplace(reinterpret_cast<const char*>(f.data()), f.size_bytes());
            if (sim->finished()) break;
            sim->advance();
        }
    }
    return rows;
}

std::size_t payload_hits(const fs::path& file, const std::unordered_set<std::string>& rows) {
    const auto bytes = read_text(file);
    std::size_t hits = 0;
    for (std::size_t i = 0; i + 24 <= bytes.size(); ++i)
        if (rows.count(bytes.substr(i, 24)) > 0) ++hits;
    return hits;
}

std::string traced(const fs::path& log) {
    return std::string("env LD_PRELOAD='") + OLTS_IOTRACE_LIB + "' OLTS_IOTRACE='" + log.string() + "' ";
}

Outcome no_file() {
    const auto dir = fresh("nofile");
    const std::string toml = R"(preset = "e2_lorenz"
ensemble_size = 8
concurrency = 4
server.stop = "ensemble"
offline.trajectories = 3

[trainer]
hidden = [16]
validate_every = 200
validation_trajectories = 2
checkpoint_every = 100

[launcher]
tick_ms = 100
heartbeat_interval_ms = 200
)";
    std::ofstream(dir / "run.toml") << toml;
    const auto cfg = config::parse_config(toml);
    const auto out = dir / "out";
    const auto log = dir / "online.trace";
    const int rc = run_shell("cd '" + dir.string() + "' && " + traced(log) + "'" + OLTS_BINARY +
                             "' launch --config run.toml --out-dir out > launch.log 2>&1");
    const auto trace = read_trace(log, dir);

    const std::vector<std::string> allowed_prefixes{"metrics_shard", "checkpoint_shard", "batch_stats_shard",
                                                    "loss_trace_shard", "server_report.json", "run_report.json"};
    std::vector<std::string> unexpected;
    std::vector<fs::path> existing;
    for (const auto& p : trace.written) {
        if (p == "/dev/null") continue;
        const auto name = p.filename().string();
        const bool ok = p.parent_path() == out &&
                        std::any_of(allowed_prefixes.begin(), allowed_prefixes.end(),
                                    [&](const std::string& a) { return name.rfind(a, 0) == 0; });
        if (!ok) unexpected.push_back(p.string());
        if (fs::is_regular_file(p)) existing.push_back(p);
    }

    std::vector<std::vector<double>> params;
    const auto report = read_json(out / "run_report.json");
    for (const auto& c : report.at("clients"))
        params.push_back(c["params"].get<std::vector<double>>());
    const auto rows = lorenz_rows(cfg, params);
    std::size_t hits = 0;
    for (const auto& p : existing) hits += payload_hits(p, rows);

    // Positive control: the offline path does put trajectories on disk, and
    // the same trace and scan must see them.
    const auto control_log = dir / "offline.trace";
    const int control_rc = run_shell("cd '" + dir.string() + "' && " + traced(control_log) + "'" + OLTS_BINARY +
                                     "' offline-generate --config run.toml --out dataset > offline.log 2>&1");
    const auto control = read_trace(control_log, dir);
    std::vector<std::vector<double>> control_params;
    for (const auto& r : dataset::read(dir / "dataset").records) control_params.push_back(r.params);
    const auto control_rows = lorenz_rows(cfg, control_params);
    std::size_t control_hits = 0;
    for (const auto& p : control.written)
        if (fs::is_regular_file(p)) control_hits += payload_hits(p, control_rows);

    std::string detail = "launch exit " + std::to_string(rc) + ", files written " +
                         std::to_string(trace.written.size()) + ", outside the report set " +
                         std::to_string(unexpected.size()) + ", payload rows found " + std::to_string(hits) +
                         " of " + std::to_string(rows.size()) + "; offline control exit " +
                         std::to_string(control_rc) + " payload rows found " + std::to_string(control_hits);
    for (const auto& u : unexpected) detail += "; unexpected " + u;
    return {rc == 0 && !trace.written.empty() && unexpected.empty() && hits == 0 && control_rc == 0 && control_hits > 0,
            detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"olts acceptance suite"};
    std::vector<std::string> only;
    std::string work = (fs::temp_directory_path() / "olts_acceptance").string();
    app.add_option("criteria", only, "run only these criteria");
    app.add_option("--work-dir", work, "scratch directory");
    CLI11_PARSE(app, argc, argv);
    g_work = fs::absolute(work);
    fs::create_directories(g_work);

    const std::vector<Criterion> criteria{
        {"wire", 10, wire_conformance},
        {"buffer", 60, buffer_suite},
        {"gradient", 30, gradient_check},
        {"solvers", 120, solver_oracles},
        {"end-to-end", 180, end_to_end},
        {"bias", 300, bias_mitigation},
        {"trend", 900, online_vs_offline},
        {"determinism", 0, determinism},
        {"no-file", 0, no_file},
    };
    for (const auto& name : only)
        if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == name; })) {
            std::cerr << "unknown criterion " << name << '\n';
            return 2;
        }

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt(secs) + " s";
        if (c.limit_s > 0) {
            timing += " of " + fmt(c.limit_s) + " s";
            if (secs >= c.limit_s) o.pass = false;
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << timing << "]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
