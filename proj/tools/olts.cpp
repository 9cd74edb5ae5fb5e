// Command-line entry point. Every subcommand is a thin wrapper over the
// library; exit status 0 is success, 2 a configuration error, 3 a runtime
// failure.

#include "olts/config.hpp"
#include "olts/harness.hpp"
#include "olts/launcher.hpp"
#include "olts/server.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

std::atomic<bool> g_stop{false};
static_assert(std::atomic<bool>::is_always_lock_free);

extern "C" void on_signal(int) { g_stop.store(true); }

struct ConfigArgs {
    std::string path;
    bool full_scale = false;

    void add(CLI::App& app, bool required) {
        auto* opt = app.add_option("--config", path, "Run configuration file");
        if (required) opt->required();
        app.add_flag("--full-scale", full_scale, "Use the full-scale preset sizes");
    }

    olts::config::RunConfig load(olts::config::Preset fallback) const {
        auto cfg = path.empty() ? olts::config::preset(fallback, full_scale)
                                : olts::config::load_config(path, full_scale);
        cfg.validate();
        return cfg;
    }
};

olts::config::Preset preset_for(olts::solvers::Kind kind) {
    switch (kind) {
        case olts::solvers::Kind::Heat: return olts::config::Preset::E1Heat;
        case olts::solvers::Kind::Lorenz: return olts::config::Preset::E2Lorenz;
        case olts::solvers::Kind::Advection: return olts::config::Preset::Advection;
    }
    return olts::config::Preset::Custom;
}

std::filesystem::path self_path() {
    std::error_code ec;
    auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
    if (ec) throw std::runtime_error("cannot resolve the olts executable: " + ec.message());
    return p;
}

void print_counters(const olts::server::ServeReport& r) {
    const auto& c = r.counters;
    std::cout << "stop_reason " << r.stop_reason << "\n"
              << "batches " << r.batches_trained() << "\n"
              << "samples_received " << c.samples_received << "\n"
              << "duplicates_dropped " << c.duplicates_dropped << "\n"
              << "unique_timesteps " << c.unique_timesteps << "\n"
              << "buffer_insertions " << c.buffer_insertions << "\n"
              << "trajectory_gaps " << c.trajectory_gaps << "\n"
              << "completed " << r.completed.size() << "\n";
}

int cmd_server(const ConfigArgs& ca, int data_port, int ctrl_port, const std::string& out_dir) {
    auto cfg = ca.load(olts::config::Preset::E2Lorenz);
    if (data_port >= 0) cfg.server.data_port = static_cast<std::uint16_t>(data_port);
    if (ctrl_port >= 0) cfg.server.ctrl_port = static_cast<std::uint16_t>(ctrl_port);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::signal(SIGPIPE, SIG_IGN);
    olts::server::ServeOptions opts;
    opts.out_dir = out_dir;
    opts.stop = &g_stop;
    opts.on_ready = [](std::uint16_t d, std::uint16_t c) {
        std::cout << "listening data " << d << " ctrl " << c << std::endl;
    };
    const auto report = olts::server::serve(cfg, opts);
    print_counters(report);
    return report.diverged ? kRuntimeError : 0;
}

int cmd_launch(const ConfigArgs& ca, bool serialized, const std::string& out_dir, std::uint64_t fault_seed) {
    const auto cfg = ca.load(olts::config::Preset::Custom);
    if (serialized) {
        const auto report = olts::harness::run_serialized(cfg, out_dir);
        print_counters(report);
        return report.diverged ? kRuntimeError : 0;
    }
    std::signal(SIGPIPE, SIG_IGN);
    olts::launcher::LaunchOptions opts;
    opts.olts_binary = self_path();
    opts.config_path = std::filesystem::absolute(ca.path);
    opts.full_scale = ca.full_scale;
    opts.out_dir = out_dir;
    opts.fault_seed = fault_seed;
    olts::launcher::LocalProcessBackend backend;
    const auto r = olts::launcher::launch(cfg, opts, backend);
    std::cout << "launched " << r.launched << "\n"
              << "restarted " << r.restarted << "\n"
              << "abandoned " << r.abandoned << "\n"
              << "done " << r.done << "\n"
              << "killed " << r.killed << "\n"
              << "max_running " << r.max_running << "\n"
              << "server_exit_code " << (r.server_exit_code ? std::to_string(*r.server_exit_code) : "none") << "\n";
    const bool ok = r.abandoned == 0 && r.server_exit_code == 0;
    return ok ? 0 : kRuntimeError;
}

struct ClientArgs {
    std::string kind;
    std::uint64_t sim_id = 0;
    std::uint64_t client_id = 0;
    std::string params;
    std::string server = "127.0.0.1:5555";
    std::uint64_t seed = 0;
    double step_delay_ms = 0.0;
};

int cmd_client(const ConfigArgs& ca, const ClientArgs& a, bool client_id_given) {
    const auto kind = olts::solvers::parse_kind(a.kind);
    auto cfg = ca.load(preset_for(kind));
    if (cfg.kind != kind) throw olts::config::ConfigError("--kind disagrees with the config's solver");
    std::signal(SIGPIPE, SIG_IGN);
    olts::harness::ClientRun run;
    run.sim_id = a.sim_id;
    run.params = olts::harness::parse_params(cfg, a.params, a.seed);
    const char* env = std::getenv("OLTS_SERVER");
    run.server = olts::net::Endpoint::parse(env != nullptr && *env != '\0' ? env : a.server);
    run.connect.client_id = client_id_given ? a.client_id : a.sim_id;
    run.connect.heartbeat_interval = std::chrono::milliseconds(cfg.launcher.heartbeat_interval_ms);
    run.step_delay_ms = a.step_delay_ms;
    const auto sent = olts::harness::run_client(cfg, run);
    std::cout << "sim " << a.sim_id << " sent " << sent << " timesteps\n";
    return 0;
}

int cmd_stats(const std::string& csv) {
    const auto rows = olts::harness::summarize_batch_stats(csv);
    std::cout << "feature,mean_of_means,std_of_means,mean_of_stds\n" << std::setprecision(17);
    for (const auto& r : rows)
        std::cout << r.feature << ',' << r.mean_of_means << ',' << r.std_of_means << ',' << r.mean_of_stds << '\n';
    return 0;
}

int cmd_compare(const std::vector<std::string>& runs, const std::string& md_path, const std::string& csv_path) {
    std::vector<olts::harness::RunMetrics> metrics;
    for (const auto& r : runs) {
        const auto eq = r.find('=');
        const std::filesystem::path path = eq == std::string::npos ? r : r.substr(eq + 1);
        const auto label = eq == std::string::npos ? path.parent_path().filename().string() : r.substr(0, eq);
        metrics.push_back(olts::harness::read_final_metrics(path, label.empty() ? path.string() : label));
    }
    std::ofstream md_file, csv_file;
    std::ostringstream discard;
    if (!md_path.empty()) md_file.open(md_path);
    if (!csv_path.empty()) csv_file.open(csv_path);
    std::ostream& md = md_path.empty() ? std::cout : md_file;
    std::ostream& csv = csv_path.empty() ? static_cast<std::ostream&>(discard) : csv_file;
    olts::harness::write_comparison(metrics, md, csv);
    if (!md || !csv) throw std::runtime_error("cannot write the comparison");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online surrogate training: server, launcher, clients and offline baselines"};
    app.require_subcommand(1);

    ConfigArgs ca;
    std::string out_dir = ".";

    auto* launch = app.add_subcommand("launch", "Run an online experiment end to end");
    ca.add(*launch, true);
    bool serialized = false;
    std::uint64_t fault_seed = 0;
    launch->add_flag("--serialized", serialized, "Single-threaded in-process run, no sockets");
    launch->add_option("--out-dir", out_dir, "Output directory");
    launch->add_option("--fault-seed", fault_seed, "Seed for choosing which clients to kill");

    auto* server = app.add_subcommand("server", "Run the training server");
    ConfigArgs server_ca;
    server_ca.add(*server, false);
    int data_port = -1, ctrl_port = -1;
    server->add_option("--data-port", data_port, "Data listener port (0 picks one)");
    server->add_option("--ctrl-port", ctrl_port, "Control listener port (0 picks one)");
    server->add_option("--out-dir", out_dir, "Output directory");

    auto* client = app.add_subcommand("client", "Stream one simulation to a server");
    ConfigArgs client_ca;
    client_ca.add(*client, false);
    ClientArgs ca_client;
    client->add_option("--kind", ca_client.kind, "heat, lorenz or advection")->required();
    client->add_option("--sim-id", ca_client.sim_id)->required();
    auto* client_id_opt = client->add_option("--client-id", ca_client.client_id, "Defaults to the sim id");
    client->add_option("--params", ca_client.params, "name=value,...");
    client->add_option("--server", ca_client.server, "host:port; OLTS_SERVER takes precedence");
    client->add_option("--seed", ca_client.seed, "Seed for unspecified Lorenz initial coordinates");
    client->add_option("--step-delay-ms", ca_client.step_delay_ms, "Sleep between timesteps");

    auto* gen = app.add_subcommand("offline-generate", "Write a trajectory dataset");
    ConfigArgs gen_ca;
    gen_ca.add(*gen, true);
    std::string dataset_dir;
    gen->add_option("--out", dataset_dir, "Dataset directory")->required();

    auto* train = app.add_subcommand("offline-train", "Train over a stored dataset in epochs");
    ConfigArgs train_ca;
    train_ca.add(*train, true);
    train->add_option("--dataset", dataset_dir, "Dataset directory")->required();
    train->add_option("--out-dir", out_dir, "Output directory");

    auto* sub = app.add_subcommand("subsample", "Keep every k-th timestep of a dataset");
    std::string sub_out;
    std::uint32_t every_k = 1;
    sub->add_option("--dataset", dataset_dir, "Input dataset directory")->required();
    sub->add_option("--out", sub_out, "Output dataset directory")->required();
    sub->add_option("--every", every_k, "Keep timesteps t with t mod k == 0")->required()->check(CLI::PositiveNumber);

    auto* stats = app.add_subcommand("stats", "Summarize a batch_stats CSV");
    std::string stats_csv;
    stats->add_option("csv", stats_csv)->required();

    auto* compare = app.add_subcommand("compare", "Final validation RMSE and gain of runs against the first");
    std::vector<std::string> runs;
    std::string md_path, csv_path;
    compare->add_option("runs", runs, "[label=]metrics.csv, baseline first")->required()->expected(2, -1);
    compare->add_option("--markdown", md_path, "Write the table here instead of stdout");
    compare->add_option("--csv", csv_path, "Also write a CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kConfigError;
    }

    try {
        if (*launch) return cmd_launch(ca, serialized, out_dir, fault_seed);
        if (*server) return cmd_server(server_ca, data_port, ctrl_port, out_dir);
        if (*client) return cmd_client(client_ca, ca_client, client_id_opt->count() > 0);
        if (*gen) {
            const auto m = olts::harness::offline_generate(gen_ca.load(olts::config::Preset::Custom), dataset_dir);
            std::cout << "wrote " << m.count << " trajectories to " << dataset_dir << "\n";
            return 0;
        }
        if (*train) {
            const auto r =
                olts::harness::offline_train(train_ca.load(olts::config::Preset::Custom), dataset_dir, out_dir);
            std::cout << "pairs " << r.pairs << "\nbatches " << r.batches << "\nbatches_per_epoch "
                      << r.batches_per_epoch << "\nfinal_val_rmse " << r.final_val_rmse << "\n";
            return 0;
        }
        if (*sub) {
            olts::harness::subsample_dataset(dataset_dir, sub_out, every_k);
            return 0;
        }
        if (*stats) return cmd_stats(stats_csv);
        if (*compare) return cmd_compare(runs, md_path, csv_path);
    } catch (const olts::config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kConfigError;
}
