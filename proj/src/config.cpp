#include "olts/config.hpp"

#include "olts/toml.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace olts::config {

Preset parse_preset(const std::string& s) {
    if (s == "e1_heat") return Preset::E1Heat;
    if (s == "e2_lorenz") return Preset::E2Lorenz;
    if (s == "advection") return Preset::Advection;
    if (s == "custom") return Preset::Custom;
    throw ConfigError("unknown preset '" + s + "'");
}

const char* to_string(Preset p) {
    switch (p) {
        case Preset::E1Heat: return "e1_heat";
        case Preset::E2Lorenz: return "e2_lorenz";
        case Preset::Advection: return "advection";
        case Preset::Custom: return "custom";
    }
    return "?";
}

SampleUnit parse_sample_unit(const std::string& s) {
    if (s == "single_step") return SampleUnit::SingleStep;
    if (s == "full_trajectory") return SampleUnit::FullTrajectory;
    throw ConfigError("unknown sample_unit '" + s + "'");
}

const char* to_string(SampleUnit u) { return u == SampleUnit::SingleStep ? "single_step" : "full_trajectory"; }

StopCondition parse_stop(const std::string& s) {
    if (s == "first") return StopCondition::First;
    if (s == "batches") return StopCondition::Batches;
    if (s == "ensemble") return StopCondition::Ensemble;
    throw ConfigError("unknown stop condition '" + s + "'");
}

const char* to_string(StopCondition s) {
    switch (s) {
        case StopCondition::First: return "first";
        case StopCondition::Batches: return "batches";
        case StopCondition::Ensemble: return "ensemble";
    }
    return "?";
}

namespace {

RunMode parse_run_mode(const std::string& s) {
    if (s == "online") return RunMode::Online;
    if (s == "offline_generate") return RunMode::OfflineGenerate;
    if (s == "offline_train") return RunMode::OfflineTrain;
    throw ConfigError("unknown mode '" + s + "'");
}

buffer::Policy parse_policy(const std::string& s) {
    if (s == "fifo") return buffer::Fifo{};
    if (s == "reservoir") return buffer::ReservoirWeighted{};
    if (s == "read_once") return buffer::ReadOnceRandom{};
    throw ConfigError("unknown buffer policy '" + s + "'");
}

solvers::LorenzVariant parse_variant(const std::string& s) {
    if (s == "standard") return solvers::LorenzVariant::Standard;
    if (s == "as_printed") return solvers::LorenzVariant::AsPrinted;
    throw ConfigError("unknown lorenz_variant '" + s + "'");
}

sampler::ParamSpace heat_space() {
    std::vector<sampler::ParamEntry> e;
    for (const auto& n : solvers::param_names(solvers::Kind::Heat)) e.push_back({n, sampler::UniformReal{100.0, 500.0}});
    return sampler::ParamSpace(std::move(e));
}

// Initial positions use variance 30. Explicit Euler at dt = 0.01 blows up on
// most starts once rho reaches 80 and on about 0.5% of them at rho = 60, so
// the rho set stops at 40.
sampler::ParamSpace lorenz_space() {
    const double sd = std::sqrt(30.0);
    return sampler::ParamSpace({
        {"rho", sampler::DiscreteSet{{0, 20, 40}}},
        {"x0", sampler::Normal{15.0, sd}},
        {"y0", sampler::Normal{15.0, sd}},
        {"z0", sampler::Normal{15.0, sd}},
    });
}

sampler::ParamSpace advection_space() {
    return sampler::ParamSpace({
        {"beta", sampler::UniformReal{0.1, 1.0}},
        {"amplitude", sampler::UniformReal{0.5, 1.5}},
        {"wavenumber", sampler::DiscreteSet{{1, 2, 3}}},
        {"phase", sampler::UniformReal{0.0, 2.0 * std::numbers::pi}},
    });
}

// Tracks which keys were read so leftovers can be reported as unknown.
class Reader {
public:
    explicit Reader(toml::Table table) : table_(std::move(table)) {}

    const toml::Value* find(const std::string& key) {
        auto it = table_.find(key);
        if (it == table_.end()) return nullptr;
        used_.insert(key);
        return &it->second;
    }

    bool has_prefix(const std::string& prefix) const {
        auto it = table_.lower_bound(prefix);
        return it != table_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
    }

    std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (auto it = table_.lower_bound(prefix); it != table_.end(); ++it) {
            if (it->first.compare(0, prefix.size(), prefix) != 0) break;
            out.push_back(it->first);
        }
        return out;
    }

    template <typename T>
    bool get(const std::string& key, T& out);

    void reject_unknown() const {
        for (const auto& [key, v] : table_)
            if (!used_.count(key)) throw ConfigError("line " + std::to_string(v.line) + ": unknown key '" + key + "'");
    }

private:
    toml::Table table_;
    std::set<std::string> used_;
};

[[noreturn]] void type_error(const std::string& key, const toml::Value& v, const char* want) {
    throw ConfigError("line " + std::to_string(v.line) + ": '" + key + "' must be " + want + ", got " +
                      toml::to_string(v.kind));
}

template <typename T>
T as(const std::string& key, const toml::Value& v) {
    if constexpr (std::is_same_v<T, bool>) {
        if (v.kind != toml::Value::Kind::Bool) type_error(key, v, "a boolean");
        return v.b;
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (v.kind != toml::Value::Kind::String) type_error(key, v, "a string");
        return v.s;
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) type_error(key, v, "a number");
        return v.number();
    } else if constexpr (std::is_integral_v<T>) {
        if (v.kind != toml::Value::Kind::Int) type_error(key, v, "an integer");
        if (v.i < 0 || static_cast<std::uint64_t>(v.i) > std::numeric_limits<T>::max())
            throw ConfigError("line " + std::to_string(v.line) + ": '" + key + "' out of range");
        return static_cast<T>(v.i);
    } else {
        static_assert(sizeof(T) == 0, "unsupported config type");
    }
}

template <typename T>
std::vector<T> as_vector(const std::string& key, const toml::Value& v) {
    if (v.kind != toml::Value::Kind::Array) type_error(key, v, "an array");
    std::vector<T> out;
    for (const auto& item : v.items) out.push_back(as<T>(key, item));
    return out;
}

template <typename T>
bool Reader::get(const std::string& key, T& out) {
    const auto* v = find(key);
    if (!v) return false;
    out = as<T>(key, *v);
    return true;
}

sampler::Distribution parse_distribution(Reader& r, const std::string& name) {
    const std::string base = "params." + name + ".";
    const auto keys = r.keys_with_prefix(base);
    if (keys.size() != 1)
        throw ConfigError("[params." + name + "] needs exactly one of uniform, normal, discrete, fixed");
    const std::string kind = keys.front().substr(base.size());
    const auto& v = *r.find(keys.front());
    if (kind == "uniform" || kind == "normal") {
        const auto pair = as_vector<double>(keys.front(), v);
        if (pair.size() != 2) throw ConfigError("'" + keys.front() + "' needs two numbers");
        if (kind == "uniform") return sampler::UniformReal{pair[0], pair[1]};
        return sampler::Normal{pair[0], pair[1]};
    }
    if (kind == "discrete") return sampler::DiscreteSet{as_vector<double>(keys.front(), v)};
    if (kind == "fixed") return sampler::Fixed{as<double>(keys.front(), v)};
    throw ConfigError("unknown distribution '" + kind + "' for parameter " + name);
}

void read_solver(Reader& r, solvers::SolverSettings& s) {
    r.get("solver.heat_n", s.heat_n);
    r.get("solver.heat_dt", s.heat_dt);
    r.get("solver.heat_t_total", s.heat_t_total);
    r.get("solver.heat_alpha", s.heat_alpha);
    r.get("solver.heat_L", s.heat_L);
    r.get("solver.lorenz_dt", s.lorenz_dt);
    r.get("solver.lorenz_t_total", s.lorenz_t_total);
    std::string variant;
    if (r.get("solver.lorenz_variant", variant)) s.lorenz_variant = parse_variant(variant);
    r.get("solver.adv_n", s.adv_n);
    r.get("solver.adv_dt", s.adv_dt);
    r.get("solver.adv_t_total", s.adv_t_total);
    r.get("solver.adv_L", s.adv_L);
}

void read_params(Reader& r, RunConfig& cfg, bool kind_changed) {
    const auto names = solvers::param_names(cfg.kind);
    std::vector<sampler::ParamEntry> entries;
    for (const auto& name : names) {
        if (r.has_prefix("params." + name + ".")) {
            entries.push_back({name, parse_distribution(r, name)});
        } else if (!kind_changed && cfg.space.find(name)) {
            entries.push_back(*cfg.space.find(name));
        } else {
            throw ConfigError("parameter '" + name + "' has no distribution");
        }
    }
    for (const auto& key : r.keys_with_prefix("params.")) {
        const auto name = key.substr(7, key.find('.', 7) - 7);
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw ConfigError("'" + name + "' is not a parameter of " + solvers::to_string(cfg.kind));
    }
    try {
        cfg.space = sampler::ParamSpace(std::move(entries));
    } catch (const sampler::SpaceError& e) {
        throw ConfigError(e.what());
    }
}

void read_trainer(Reader& r, TrainerConfig& t) {
    if (const auto* v = r.find("trainer.hidden")) t.model.hidden = as_vector<int>("trainer.hidden", *v);
    std::string s;
    if (r.get("trainer.activation", s)) {
        try {
            t.model.activation = nn::parse_activation(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (r.get("trainer.mode", s)) {
        try {
            t.model.mode = trainer::parse_mode(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (const auto* v = r.find("trainer.input_params"))
        t.model.input_params = as_vector<std::string>("trainer.input_params", *v);
    r.get("trainer.lr0", t.sgd.lr0);
    r.get("trainer.gamma", t.sgd.decay_gamma);
    r.get("trainer.batch_size", t.sgd.batch_size);
    r.get("trainer.max_batches", t.sgd.max_batches);
    r.get("trainer.validate_every", t.validate_every);
    r.get("trainer.checkpoint_every", t.checkpoint_every);
    r.get("trainer.validation_trajectories", t.validation_trajectories);
    r.get("trainer.log_batch_stats", t.log_batch_stats);
    r.get("trainer.loss_trace", t.loss_trace);
}

void read_launcher(Reader& r, LauncherConfig& l) {
    r.get("launcher.max_retries", l.max_retries);
    r.get("launcher.heartbeat_timeout_ms", l.heartbeat_timeout_ms);
    r.get("launcher.tick_ms", l.tick_ms);
    r.get("launcher.heartbeat_interval_ms", l.heartbeat_interval_ms);
    r.get("launcher.client_step_delay_ms", l.client_step_delay_ms);
    r.get("launcher.readiness_timeout_ms", l.readiness_timeout_ms);
    r.get("launcher.drain_timeout_ms", l.drain_timeout_ms);
    r.get("launcher.confirm_timeout_ms", l.confirm_timeout_ms);
    r.get("launcher.faults.kill_count", l.faults.kill_count);
    r.get("launcher.faults.first_kill_ms", l.faults.first_kill_ms);
    r.get("launcher.faults.interval_ms", l.faults.interval_ms);
    r.get("launcher.faults.min_runtime_ms", l.faults.min_runtime_ms);
}

}  // namespace

RunConfig preset(Preset p, bool full_scale) {
    RunConfig c;
    c.preset = p;
    auto& t = c.trainer;
    switch (p) {
        case Preset::E1Heat:
            c.kind = solvers::Kind::Heat;
            c.space = heat_space();
            c.ensemble_size = full_scale ? 10000 : 500;
            c.concurrency = 8;
            c.buffer = {buffer::ReadOnceRandom{buffer::default_watermark(32)}, 2048};
            t.model = {std::vector<int>(3, full_scale ? 1024 : 256), nn::Activation::ReLU, trainer::Mode::Direct, {}};
            t.sgd.batch_size = 32;
            t.sgd.max_batches = full_scale ? 100000 : 10000;
            c.offline.trajectories = full_scale ? 100 : 50;
            c.solver.heat_n = full_scale ? 100 : 32;
            break;
        case Preset::E2Lorenz:
            c.kind = solvers::Kind::Lorenz;
            c.space = lorenz_space();
            c.ensemble_size = full_scale ? 10000 : 1000;
            c.concurrency = 8;
            t.model = {{512, 512, 512}, nn::Activation::SiLU, trainer::Mode::Autoregressive, {"rho"}};
            t.sgd.batch_size = full_scale ? 1024 : 64;
            c.buffer = {buffer::ReadOnceRandom{buffer::default_watermark(t.sgd.batch_size)},
                        full_scale ? 65536u : 4096u};
            t.sgd.max_batches = full_scale ? 100000 : 10000;
            c.offline.trajectories = 100;
            break;
        case Preset::Advection:
            c.kind = solvers::Kind::Advection;
            c.space = advection_space();
            c.ensemble_size = 100;
            c.concurrency = 4;
            c.buffer = {buffer::ReadOnceRandom{buffer::default_watermark(32)}, 2048};
            t.model = {{128, 128, 128}, nn::Activation::ReLU, trainer::Mode::Direct, {}};
            t.sgd.batch_size = 32;
            t.sgd.max_batches = 5000;
            c.offline.trajectories = 20;
            break;
        case Preset::Custom:
            break;
    }
    c.strategy = sampler::MonteCarlo{c.seeds.master};
    return c;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    const auto names = solvers::param_names(kind);
    if (space.size() != names.size()) fail(std::string("parameter space must cover ") + solvers::to_string(kind));
    for (const auto& n : names)
        if (!space.find(n)) fail("parameter space lacks '" + n + "'");
    try {
        sampler::validate(space, strategy);
    } catch (const std::exception& e) {
        fail(e.what());
    }
    if (concurrency == 0) fail("concurrency must be at least 1");
    if (shards == 0) fail("shards must be at least 1");
    if (buffer.capacity == 0) fail("buffer capacity must be at least 1");
    if (const auto* ro = std::get_if<buffer::ReadOnceRandom>(&buffer.policy))
        if (ro->watermark > buffer.capacity) fail("buffer watermark exceeds capacity");
    if (unit == SampleUnit::FullTrajectory && trainer.sgd.batch_size > buffer.capacity)
        fail("batch_size exceeds buffer capacity");
    if (serialized.fill_buffer && !std::holds_alternative<buffer::ReadOnceRandom>(buffer.policy))
        fail("serialized.fill_buffer needs the read_once buffer policy");
    try {
        trainer.sgd.validate();
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    for (int h : trainer.model.hidden)
        if (h <= 0) fail("hidden layer widths must be positive");
    for (const auto& p : trainer.model.input_params)
        if (!space.find(p)) fail("input parameter '" + p + "' is not in the parameter space");
    if (trainer.validate_every == 0) fail("validate_every must be at least 1");
    if (trainer.checkpoint_every == 0) fail("checkpoint_every must be at least 1");
    if (trainer.validation_trajectories == 0) fail("validation_trajectories must be at least 1");
    if (launcher.tick_ms == 0 || launcher.heartbeat_interval_ms == 0) fail("launcher intervals must be positive");
    if (!(launcher.client_step_delay_ms >= 0.0)) fail("client_step_delay_ms must be non-negative");
    if (seeds.master == seeds.validation) fail("validation seed must differ from the master seed");
    const auto& st = solver;
    if (st.heat_n < 3 || !(st.heat_dt > 0) || !(st.heat_t_total > 0) || !(st.heat_alpha > 0) || !(st.heat_L > 0))
        fail("invalid heat solver settings");
    if (!(st.lorenz_dt > 0) || !(st.lorenz_t_total > 0)) fail("invalid lorenz solver settings");
    if (st.adv_n < 2 || !(st.adv_dt > 0) || !(st.adv_t_total > 0) || !(st.adv_L > 0))
        fail("invalid advection solver settings");
}

std::vector<std::string> RunConfig::input_params() const {
    return trainer.model.input_params.empty() ? space.names() : trainer.model.input_params;
}

RunConfig parse_config(std::string_view text, bool full_scale) {
    toml::Table table;
    try {
        table = toml::parse(text);
    } catch (const toml::ParseError& e) {
        throw ConfigError(e.what());
    }
    Reader r(std::move(table));

    std::string s;
    RunConfig cfg = preset(r.get("preset", s) ? parse_preset(s) : Preset::Custom, full_scale);
    if (r.get("mode", s)) cfg.mode = parse_run_mode(s);
    bool kind_changed = false;
    if (r.get("kind", s)) {
        try {
            const auto k = solvers::parse_kind(s);
            kind_changed = k != cfg.kind || cfg.space.size() == 0;
            cfg.kind = k;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (cfg.preset == Preset::Custom) kind_changed = true;
    r.get("ensemble_size", cfg.ensemble_size);
    r.get("concurrency", cfg.concurrency);
    r.get("shards", cfg.shards);
    if (r.get("sample_unit", s)) cfg.unit = parse_sample_unit(s);

    r.get("seeds.master", cfg.seeds.master);
    r.get("seeds.validation", cfg.seeds.validation);

    read_solver(r, cfg.solver);
    read_params(r, cfg, kind_changed);

    std::string strategy = std::holds_alternative<sampler::OrderedSweep>(cfg.strategy) ? "ordered_sweep" : "monte_carlo";
    r.get("sampling.strategy", strategy);
    std::string axis;
    const bool has_axis = r.get("sampling.axis", axis);
    if (strategy == "monte_carlo") {
        if (has_axis) throw ConfigError("sampling.axis only applies to ordered_sweep");
        cfg.strategy = sampler::MonteCarlo{cfg.seeds.master};
    } else if (strategy == "ordered_sweep") {
        if (!has_axis) throw ConfigError("ordered_sweep needs sampling.axis");
        cfg.strategy = sampler::OrderedSweep{axis, cfg.seeds.master};
    } else {
        throw ConfigError("unknown sampling strategy '" + strategy + "'");
    }

    if (r.get("buffer.policy", s)) cfg.buffer.policy = parse_policy(s);
    r.get("buffer.capacity", cfg.buffer.capacity);

    read_trainer(r, cfg.trainer);

    std::uint32_t watermark = 0;
    const bool has_watermark = r.get("buffer.watermark", watermark);
    if (auto* ro = std::get_if<buffer::ReadOnceRandom>(&cfg.buffer.policy)) {
        ro->watermark = has_watermark ? watermark : buffer::default_watermark(cfg.batch_size());
    } else if (has_watermark) {
        throw ConfigError("buffer.watermark only applies to the read_once policy");
    }

    if (r.get("server.stop", s)) cfg.server.stop = parse_stop(s);
    r.get("server.host", cfg.server.host);
    r.get("server.data_port", cfg.server.data_port);
    r.get("server.ctrl_port", cfg.server.ctrl_port);
    r.get("server.orphan_grace_ms", cfg.server.orphan_grace_ms);
    r.get("server.idle_exit_ms", cfg.server.idle_exit_ms);

    read_launcher(r, cfg.launcher);
    r.get("offline.trajectories", cfg.offline.trajectories);
    r.get("serialized.insertions_per_batch", cfg.serialized.insertions_per_batch);
    r.get("serialized.fill_buffer", cfg.serialized.fill_buffer);

    r.reject_unknown();
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path, bool full_scale) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), full_scale);
}

}  // namespace olts::config
