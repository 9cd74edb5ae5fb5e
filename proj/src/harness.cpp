#include "olts/harness.hpp"

#include "olts/buffer.hpp"
#include "olts/sampler.hpp"
#include "olts/solvers.hpp"
#include "olts/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

namespace olts::harness {

namespace {

std::string num(double v) {
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string describe(const sampler::Distribution& d) {
    return std::visit(
        [](const auto& e) -> std::string {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, sampler::UniformReal>) {
                return "uniform[" + num(e.lo) + ", " + num(e.hi) + "]";
            } else if constexpr (std::is_same_v<T, sampler::Normal>) {
                return "normal(mean " + num(e.mean) + ", std " + num(e.std) + ")";
            } else if constexpr (std::is_same_v<T, sampler::DiscreteSet>) {
                std::string s = "discrete{";
                for (std::size_t i = 0; i < e.values.size(); ++i) s += (i ? ", " : "") + num(e.values[i]);
                return s + "}";
            } else {
                return "fixed " + num(e.value);
            }
        },
        d);
}

std::string strategy_name(const sampler::Strategy& s) {
    if (const auto* sweep = std::get_if<sampler::OrderedSweep>(&s)) return "ordered_sweep(" + sweep->axis_name + ")";
    return "monte_carlo";
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw std::runtime_error("not a number: '" + s + "'");
    return v;
}

}  // namespace

// ---------------------------------------------------------------- client process

ParamVector parse_params(const config::RunConfig& cfg, const std::string& text, std::uint64_t seed) {
    const auto names = solvers::param_names(cfg.kind);
    std::vector<std::optional<double>> given(names.size());
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw config::ConfigError("expected name=value, got '" + item + "'");
        const auto name = item.substr(0, eq);
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end())
            throw config::ConfigError("'" + name + "' is not a parameter of " + solvers::to_string(cfg.kind));
        const auto value = item.substr(eq + 1);
        double v = 0.0;
        const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || p != value.data() + value.size())
            throw config::ConfigError("bad value for '" + name + "': '" + value + "'");
        given[it - names.begin()] = v;
    }
    ParamVector out{names, {}};
    std::optional<ParamVector> drawn;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (given[i]) {
            out.values.push_back(*given[i]);
            continue;
        }
        const bool initial = cfg.kind == solvers::Kind::Lorenz && names[i] != "rho";
        if (!initial) throw config::ConfigError("missing parameter '" + names[i] + "'");
        if (!drawn) drawn = sampler::next_params(cfg.space, sampler::MonteCarlo{seed}, 0, 1);
        out.values.push_back(drawn->at(names[i]));
    }
    return out;
}

std::uint32_t run_client(const config::RunConfig& cfg, const ClientRun& run) {
    auto sim = solvers::make_simulation(cfg.kind, run.params, cfg.solver);
    auto session = client::ClientSession::connect(run.server, run.sim_id, run.params, sim->field_shape(), run.connect);
    const auto delay = std::chrono::duration<double, std::milli>(run.step_delay_ms);
    for (;;) {
        session.send_timestep(sim->t_index(), sim->field());
        if (sim->finished()) break;
        sim->advance();
        if (run.step_delay_ms > 0) std::this_thread::sleep_for(delay);
    }
    session.finalize();
    return session.sent_count();
}

// ---------------------------------------------------------------- offline

dataset::Manifest offline_generate(const config::RunConfig& cfg, const std::filesystem::path& dir) {
    cfg.validate();
    const auto count = cfg.offline.trajectories;
    const auto setup_probe = solvers::make_simulation(
        cfg.kind, sampler::next_params(cfg.space, sampler::MonteCarlo{cfg.seeds.validation}, 0, 1), cfg.solver);
    dataset::Manifest m;
    m.experiment = config::to_string(cfg.preset);
    m.kind = solvers::to_string(cfg.kind);
    m.param_names = cfg.space.names();
    for (const auto& e : cfg.space.entries()) m.param_space.push_back(e.name + ": " + describe(e.dist));
    m.strategy = strategy_name(cfg.strategy);
    m.field_shape = setup_probe->field_shape();
    m.seed = cfg.seeds.master;
    const auto field_dim = std::accumulate(m.field_shape.begin(), m.field_shape.end(), 1u, std::multiplies<>());

    dataset::Writer writer(dir, m);
    for (std::uint64_t i = 0; i < count; ++i) {
        dataset::Record rec;
        rec.sim_id = i;
        const auto params = sampler::next_params(cfg.space, cfg.strategy, i, count);
        rec.params = params.values;
        rec.field_dim = field_dim;
        solvers::run_trajectory(cfg.kind, params, cfg.solver, [&](std::uint32_t, std::span<const double> f) {
            rec.fields.insert(rec.fields.end(), f.begin(), f.end());
            ++rec.t_count;
        });
        writer.append(rec);
    }
    writer.close();
    m.count = count;
    return m;
}

OfflineReport offline_train(const config::RunConfig& cfg, const std::filesystem::path& dataset_dir,
                            const std::filesystem::path& out_dir) {
    cfg.validate();
    const auto setup = training::make_training_setup(cfg);
    const auto ds = dataset::read(dataset_dir);
    if (ds.manifest.kind != solvers::to_string(cfg.kind) || ds.manifest.field_shape != setup.field_shape ||
        ds.manifest.param_names != cfg.space.names())
        throw trainer::DimensionMismatch("dataset " + dataset_dir.string() + " does not match the configured model");

    std::vector<Sample> samples;
    for (const auto& rec : ds.records) {
        const ParamVector params{ds.manifest.param_names, rec.params};
        if (setup.spec.mode == trainer::Mode::Direct) {
            for (std::uint32_t r = 0; r < rec.t_count; ++r) {
                const auto first = rec.fields.begin() + std::uint64_t{r} * rec.field_dim;
                samples.push_back({rec.sim_id, params,
                                   SingleStep{r * ds.manifest.stride, std::vector<double>(first, first + rec.field_dim)}});
            }
        } else {
            FullTrajectory traj;
            for (std::uint32_t r = 0; r < rec.t_count; ++r) {
                const auto first = rec.fields.begin() + std::uint64_t{r} * rec.field_dim;
                traj.fields.emplace_back(first, first + rec.field_dim);
            }
            samples.push_back({rec.sim_id, params, std::move(traj)});
        }
    }
    const auto pairs = trainer::make_pairs(samples, setup.spec);
    samples.clear();

    OfflineReport report;
    report.pairs = static_cast<std::uint64_t>(pairs.size());
    const std::uint64_t bs = cfg.batch_size();
    const std::uint64_t max_batches = cfg.trainer.sgd.max_batches;
    report.batches_per_epoch = (report.pairs + bs - 1) / bs;

    training::ShardTrainer tr(setup, cfg, 0, out_dir);
    if (report.pairs > 0) {
        for (std::uint64_t e = 1; e * report.batches_per_epoch <= max_batches; ++e) {
            tr.schedule_epoch_end(e * report.batches_per_epoch, static_cast<std::uint32_t>(e));
            report.epoch_ends.push_back(e * report.batches_per_epoch);
        }
        std::vector<Eigen::Index> order(report.pairs);
        while (tr.budget_left()) {
            std::iota(order.begin(), order.end(), Eigen::Index{0});
            std::shuffle(order.begin(), order.end(), tr.batch_rng());
            for (std::uint64_t first = 0; first < report.pairs && tr.budget_left(); first += bs) {
                const auto last = std::min<std::uint64_t>(first + bs, report.pairs);
                const std::vector<Eigen::Index> idx(order.begin() + first, order.begin() + last);
                trainer::PairSet batch{pairs.inputs(Eigen::all, idx), pairs.targets(Eigen::all, idx)};
                tr.train(batch);
            }
        }
    }
    tr.finish();
    report.batches = tr.step();
    report.final_val_rmse = trainer::validate(tr.model(), setup.validation, setup.input_norm, setup.target_norm);
    return report;
}

void subsample_dataset(const std::filesystem::path& in, const std::filesystem::path& out, std::uint32_t every_k) {
    if (every_k == 0) throw std::invalid_argument("every_k must be at least 1");
    const auto ds = dataset::read(in);
    auto m = ds.manifest;
    m.stride = std::lcm(m.stride, every_k);
    dataset::Writer writer(out, m);
    for (const auto& rec : ds.records) writer.append(dataset::subsample(rec, every_k, ds.manifest.stride));
    writer.close();
}

// ---------------------------------------------------------------- serialized online

namespace {

struct SerialShard {
    std::unique_ptr<buffer::MemoryBuffer> buffer;
    std::unique_ptr<training::ShardTrainer> trainer;
    std::uint64_t inserted = 0;
    bool stopped = false;
};

class Serialized {
public:
    explicit Serialized(const config::RunConfig& cfg, const std::filesystem::path& out_dir)
        : cfg_(cfg),
          out_dir_(out_dir),
          setup_(training::make_training_setup(cfg)),
          core_(cfg, cfg.shards),
          per_batch_(cfg.serialized.insertions_per_batch > 0 ? cfg.serialized.insertions_per_batch : cfg.batch_size()),
          reads_remove_(!std::holds_alternative<buffer::ReservoirWeighted>(cfg.buffer.policy)) {
        for (std::uint32_t k = 0; k < cfg.shards; ++k) {
            SerialShard sh;
            sh.buffer = std::make_unique<buffer::MemoryBuffer>(cfg.buffer.policy, cfg.buffer.capacity,
                                                               training::buffer_seed(cfg, k));
            sh.trainer = std::make_unique<training::ShardTrainer>(setup_, cfg, k, out_dir);
            shards_.push_back(std::move(sh));
        }
    }

    server::ServeReport run() {
        const auto t0 = std::chrono::steady_clock::now();
        generate();
        drain();
        server::ServeReport report;
        for (auto& sh : shards_) {
            if (!sh.trainer->finished() && !diverged_shard(sh)) sh.trainer->finish();
            report.batches_per_shard.push_back(sh.trainer->step());
        }
        report.counters = core_.counters();
        report.clients_per_shard = core_.clients_per_shard();
        report.completed = core_.completed();
        report.diverged = diverged_;
        report.stop_reason = core_.ensemble_complete() ? "ensemble" : "batches";
        report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        server::write_report(report, out_dir_ / "server_report.json");
        return report;
    }

private:
    struct Live {
        std::unique_ptr<solvers::Simulation> sim;
        server::ConnState conn;
        std::uint64_t sim_id = 0;
    };

    bool diverged_shard(const SerialShard& sh) const { return sh.stopped && diverged_ && !sh.trainer->finished(); }

    bool active(const SerialShard& sh) const {
        return !sh.stopped && (cfg_.server.stop == config::StopCondition::Ensemble || sh.trainer->budget_left());
    }

    bool train_one(SerialShard& sh) {
        auto batch = sh.buffer->try_get_batch(cfg_.batch_size(), sh.trainer->batch_rng());
        if (!batch) return false;
        try {
            sh.trainer->train(*batch);
        } catch (const trainer::TrainingDiverged& e) {
            std::cerr << "training diverged: " << e.what() << '\n';
            sh.stopped = true;
            diverged_ = true;
            return false;
        }
        return true;
    }

    void insert(std::uint32_t k, Sample&& s) {
        auto& sh = shards_[k];
        for (;;) {
            if (!active(sh)) {
                core_.note_discarded();
                return;
            }
            if (sh.buffer->put(std::move(s))) break;
            if (!reads_remove_ || std::holds_alternative<buffer::Fifo>(cfg_.buffer.policy)) {
                core_.note_not_retained();
                return;
            }
            if (!train_one(sh)) {
                core_.note_discarded();
                return;
            }
        }
        core_.note_inserted();
        if (++sh.inserted % per_batch_ == 0 && !cfg_.serialized.fill_buffer && active(sh)) train_one(sh);
    }

    void deliver(server::ConnState& conn, const wire::Message& msg) {
        auto effect = core_.on_data(conn, msg, 0);
        if (!effect.error.empty()) throw std::logic_error("serialized stream rejected: " + effect.error);
        if (effect.sample) insert(conn.shard, std::move(*effect.sample));
    }

    bool next_sim(Live& slot) {
        bool violation = false;
        const auto replies = core_.on_control(wire::ParamRequest{1}, violation);
        const auto* assign = std::get_if<wire::ParamAssign>(&replies.front());
        if (assign == nullptr) return false;
        slot.sim_id = assign->sim_id;
        slot.sim = solvers::make_simulation(cfg_.kind, ParamVector{core_.param_names(), assign->params}, cfg_.solver);
        slot.conn = {};
        deliver(slot.conn, wire::Hello{assign->sim_id, assign->sim_id, assign->params, slot.sim->field_shape()});
        return true;
    }

    bool any_active() const {
        return std::any_of(shards_.begin(), shards_.end(), [&](const auto& sh) { return active(sh); });
    }

    void generate() {
        std::vector<Live> live;
        for (std::uint32_t i = 0; i < cfg_.concurrency; ++i) {
            Live slot;
            if (!next_sim(slot)) break;
            live.push_back(std::move(slot));
        }
        while (!live.empty() && any_active()) {
            for (std::size_t i = 0; i < live.size();) {
                auto& slot = live[i];
                const auto field = slot.sim->field();
                deliver(slot.conn, wire::Timestep{slot.sim_id, slot.sim->t_index(), {field.begin(), field.end()}});
                if (!slot.sim->finished()) {
                    slot.sim->advance();
                    ++i;
                    continue;
                }
                deliver(slot.conn, wire::Bye{slot.sim_id, slot.sim->t_index()});
                core_.on_disconnect(slot.conn);
                if (next_sim(slot)) {
                    ++i;
                } else {
                    live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
                }
            }
        }
        for (auto& slot : live) core_.on_disconnect(slot.conn);
    }

    void drain() {
        const auto stop = cfg_.server.stop;
        for (auto& sh : shards_) {
            while (!sh.stopped) {
                if (stop != config::StopCondition::Ensemble && !sh.trainer->budget_left()) break;
                if (!reads_remove_ && stop != config::StopCondition::Batches) break;
                if (!train_one(sh)) break;
            }
        }
    }

    const config::RunConfig& cfg_;
    std::filesystem::path out_dir_;
    training::TrainingSetup setup_;
    server::ServerCore core_;
    std::vector<SerialShard> shards_;
    const std::uint64_t per_batch_;
    const bool reads_remove_;
    bool diverged_ = false;
};

}  // namespace

server::ServeReport run_serialized(const config::RunConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    Serialized s(cfg, out_dir);
    return s.run();
}

// ---------------------------------------------------------------- analysis

std::vector<FeatureSummary> summarize_batch_stats(const std::filesystem::path& csv) {
    std::ifstream f(csv);
    if (!f) throw std::runtime_error("cannot read " + csv.string());
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(csv.string() + " is empty");
    const auto header = split_csv(line);
    std::vector<std::string> features;
    for (const auto& h : header)
        if (h.rfind("mean_", 0) == 0) features.push_back(h.substr(5));
    if (features.empty() || header.size() != 1 + 2 * features.size())
        throw std::runtime_error(csv.string() + " is not a batch statistics file");

    std::vector<std::vector<double>> means(features.size()), stds(features.size());
    while (std::getline(f, line)) {
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) throw std::runtime_error("ragged row in " + csv.string());
        for (std::size_t i = 0; i < features.size(); ++i) {
            means[i].push_back(parse_double(cells[1 + i]));
            stds[i].push_back(parse_double(cells[1 + features.size() + i]));
        }
    }
    std::vector<FeatureSummary> out;
    for (std::size_t i = 0; i < features.size(); ++i) {
        FeatureSummary s;
        s.feature = features[i];
        const auto n = static_cast<double>(means[i].size());
        if (n > 0) {
            s.mean_of_means = std::accumulate(means[i].begin(), means[i].end(), 0.0) / n;
            double ss = 0.0;
            for (double m : means[i]) ss += (m - s.mean_of_means) * (m - s.mean_of_means);
            s.std_of_means = std::sqrt(ss / n);
            s.mean_of_stds = std::accumulate(stds[i].begin(), stds[i].end(), 0.0) / n;
        }
        out.push_back(s);
    }
    return out;
}

RunMetrics read_final_metrics(const std::filesystem::path& csv, const std::string& label) {
    std::ifstream f(csv);
    if (!f) throw std::runtime_error("cannot read " + csv.string());
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(csv.string() + " is empty");
    const auto header = split_csv(line);
    auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw std::runtime_error(csv.string() + " has no '" + name + "' column");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto step_col = col("step"), rmse_col = col("val_rmse"), loss_col = col("train_loss");
    std::string last;
    while (std::getline(f, line))
        if (!line.empty()) last = line;
    if (last.empty()) throw std::runtime_error(csv.string() + " has no rows");
    const auto cells = split_csv(last);
    if (cells.size() != header.size()) throw std::runtime_error("ragged row in " + csv.string());
    RunMetrics m;
    m.label = label;
    m.final_step = std::stoull(cells[step_col]);
    m.final_val_rmse = parse_double(cells[rmse_col]);
    m.final_train_loss = parse_double(cells[loss_col]);
    return m;
}

double gain_percent(double rmse, double baseline_rmse) { return (1.0 - rmse / baseline_rmse) * 100.0; }

void write_comparison(const std::vector<RunMetrics>& runs, std::ostream& md, std::ostream& csv) {
    if (runs.size() < 2) throw std::invalid_argument("compare needs at least two runs");
    const auto& base = runs.front();
    md << "| run | final step | val RMSE | gain vs " << base.label << " (%) |\n";
    md << "|---|---:|---:|---:|\n";
    csv << "run,final_step,val_rmse,gain_percent\n";
    for (const auto& r : runs) {
        const double g = gain_percent(r.final_val_rmse, base.final_val_rmse);
        std::ostringstream gs;
        gs << std::fixed << std::setprecision(1) << g;
        md << "| " << r.label << " | " << r.final_step << " | " << num(r.final_val_rmse) << " | " << gs.str()
           << " |\n";
        csv << r.label << ',' << r.final_step << ',' << num(r.final_val_rmse) << ',' << num(g) << '\n';
    }
}

}  // namespace olts::harness
