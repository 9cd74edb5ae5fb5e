#include "olts/server.hpp"

#include "olts/buffer.hpp"
#include "olts/net.hpp"
#include "olts/sampler.hpp"
#include "olts/solvers.hpp"
#include "olts/training.hpp"

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <list>
#include <memory>
#include <thread>

namespace olts::server {

ServerCore::ServerCore(const config::RunConfig& cfg, std::uint32_t shards)
    : cfg_(cfg), shards_(shards), names_(solvers::param_names(cfg.kind)), per_shard_(shards, 0) {
    if (shards == 0) throw std::invalid_argument("at least one shard is required");
    const auto probe = solvers::make_simulation(
        cfg.kind, sampler::next_params(cfg.space, sampler::MonteCarlo{cfg.seeds.validation}, 0, 1), cfg.solver);
    field_dim_ = 1;
    for (auto d : probe->field_shape()) field_dim_ *= d;
}

DataEffect ServerCore::on_data(ConnState& conn, const wire::Message& msg, std::uint64_t now_ms) {
    if (const auto* h = std::get_if<wire::Hello>(&msg)) return hello(conn, *h, now_ms);
    if (const auto* ts = std::get_if<wire::Timestep>(&msg)) return timestep(conn, *ts, now_ms);
    if (const auto* b = std::get_if<wire::Bye>(&msg)) return bye(conn, *b);
    if (std::holds_alternative<wire::Heartbeat>(msg)) {
        if (conn.hello) {
            std::lock_guard lock(mu_);
            sims_[conn.sim_id].last_seen_ms = now_ms;
        }
        return {};
    }
    DataEffect e;
    e.close = true;
    e.error = std::string("unexpected ") + wire::to_string(wire::type_of(msg)) + " on the data channel";
    return e;
}

DataEffect ServerCore::hello(ConnState& conn, const wire::Hello& h, std::uint64_t now_ms) {
    DataEffect e;
    auto violation = [&](std::string why) {
        e.close = true;
        e.error = std::move(why);
        return e;
    };
    if (conn.hello) return violation("second Hello on one connection");
    if (h.params.size() != names_.size()) return violation("Hello carries the wrong number of parameters");
    std::uint64_t dim = 1;
    for (auto d : h.field_shape) dim *= d;
    if (h.field_shape.empty() || dim != field_dim_) return violation("Hello field shape does not match the run");

    conn.hello = true;
    conn.sim_id = h.sim_id;
    conn.params = ParamVector{names_, h.params};
    conn.field_dim = field_dim_;
    std::lock_guard lock(mu_);
    conn.shard = static_cast<std::uint32_t>(hello_count_++ % shards_);
    ++per_shard_[conn.shard];
    auto& rec = sims_[h.sim_id];
    ++rec.open_connections;
    rec.last_seen_ms = now_ms;
    return e;
}

DataEffect ServerCore::timestep(ConnState& conn, const wire::Timestep& ts, std::uint64_t now_ms) {
    DataEffect e;
    if (!conn.hello || conn.bye) {
        e.close = true;
        e.error = conn.bye ? "Timestep after Bye" : "Timestep before Hello";
        return e;
    }
    if (ts.sim_id != conn.sim_id || ts.values.size() != conn.field_dim) {
        e.close = true;
        e.error = "Timestep does not match its Hello";
        return e;
    }
    bool fresh = false;
    {
        std::lock_guard lock(mu_);
        ++counters_.samples_received;
        auto& rec = sims_[conn.sim_id];
        rec.last_seen_ms = now_ms;
        fresh = seen_.emplace(ts.sim_id, ts.t_index).second;
        if (fresh) {
            ++counters_.unique_timesteps;
            ++rec.unique;
            rec.max_t = std::max(rec.max_t, ts.t_index);
        } else {
            ++counters_.duplicates_dropped;
        }
    }

    if (cfg_.unit == config::SampleUnit::FullTrajectory) {
        if (ts.t_index == conn.fields.size())
            conn.fields.push_back(ts.values);
        else
            conn.out_of_order = true;
        return e;
    }

    if (fresh) {
        Sample s;
        s.sim_id = ts.sim_id;
        s.params = conn.params;
        SingleStep step{ts.t_index, {}};
        const bool chained = conn.prev_t && *conn.prev_t + 1 == ts.t_index;
        if (cfg_.trainer.model.mode == trainer::Mode::Autoregressive && chained) {
            step.field.reserve(2 * ts.values.size());
            step.field = conn.prev_field;
            step.field.insert(step.field.end(), ts.values.begin(), ts.values.end());
        } else {
            step.field = ts.values;
        }
        s.unit = std::move(step);
        e.sample = std::move(s);
    }
    if (cfg_.trainer.model.mode == trainer::Mode::Autoregressive) {
        conn.prev_field = ts.values;
        conn.prev_t = ts.t_index;
    }
    return e;
}

DataEffect ServerCore::bye(ConnState& conn, const wire::Bye& b) {
    DataEffect e;
    e.close = true;
    if (!conn.hello || conn.bye || b.sim_id != conn.sim_id) {
        e.error = "unexpected Bye";
        return e;
    }
    conn.bye = true;
    std::lock_guard lock(mu_);
    if (b.last_t == wire::kEmptyTrajectory) {
        ++counters_.empty_trajectories;
        return e;
    }
    auto& rec = sims_[conn.sim_id];
    if (cfg_.unit == config::SampleUnit::FullTrajectory) {
        if (conn.out_of_order || conn.fields.size() != std::uint64_t{b.last_t} + 1) {
            ++counters_.trajectory_gaps;
            conn.fields.clear();
            return e;
        }
        if (!rec.trajectory_inserted) {
            rec.trajectory_inserted = true;
            Sample s;
            s.sim_id = conn.sim_id;
            s.params = conn.params;
            s.unit = FullTrajectory{std::move(conn.fields)};
            e.sample = std::move(s);
        }
        conn.fields.clear();
    } else if (rec.unique != std::uint64_t{b.last_t} + 1 || rec.max_t != b.last_t) {
        ++counters_.trajectory_gaps;
        return e;
    }
    if (completed_.emplace(conn.sim_id, b.last_t).second) ++counters_.sims_completed;
    return e;
}

void ServerCore::on_disconnect(ConnState& conn) {
    if (!conn.hello) return;
    std::lock_guard lock(mu_);
    auto& rec = sims_[conn.sim_id];
    if (rec.open_connections > 0) --rec.open_connections;
    if (!conn.bye) ++counters_.incomplete_trajectories;
    conn.fields.clear();
}

std::vector<wire::Message> ServerCore::on_control(const wire::Message& msg, bool& violation) {
    violation = false;
    std::vector<wire::Message> out;
    std::lock_guard lock(mu_);
    if (const auto* req = std::get_if<wire::ParamRequest>(&msg)) {
        for (std::uint32_t k = 0; k < req->count && next_index_ < cfg_.ensemble_size; ++k) {
            const std::uint64_t sim = next_index_++;
            const auto params = sampler::next_params(cfg_.space, cfg_.strategy, sim, cfg_.ensemble_size);
            out.push_back(wire::ParamAssign{sim, params.values});
            ++counters_.params_assigned;
        }
        out.push_back(wire::Ack{static_cast<std::uint16_t>(wire::MsgType::ParamRequest)});
    } else if (std::holds_alternative<wire::Heartbeat>(msg)) {
        const auto now = net::wallclock_ms();
        for (const auto& [sim, rec] : sims_)
            if (rec.open_connections > 0)
                out.push_back(wire::Heartbeat{sim, rec.blocked > 0 ? now : rec.last_seen_ms});
        for (const auto& [sim, last_t] : completed_) out.push_back(wire::Bye{sim, last_t});
        out.push_back(wire::Ack{static_cast<std::uint16_t>(wire::MsgType::Heartbeat)});
    } else if (const auto* b = std::get_if<wire::Bye>(&msg); b && b->sim_id == wire::kDrainSimId) {
        drain_ = true;
        out.push_back(wire::Ack{static_cast<std::uint16_t>(wire::MsgType::Bye)});
    } else {
        violation = true;
        ++counters_.protocol_errors;
    }
    return out;
}

void ServerCore::note_inserted() {
    std::lock_guard lock(mu_);
    ++counters_.buffer_insertions;
}
void ServerCore::note_not_retained() {
    std::lock_guard lock(mu_);
    ++counters_.reservoir_not_retained;
}
void ServerCore::note_discarded() {
    std::lock_guard lock(mu_);
    ++counters_.samples_discarded;
}
void ServerCore::set_blocked(std::uint64_t sim_id, bool blocked) {
    std::lock_guard lock(mu_);
    auto& rec = sims_[sim_id];
    if (blocked)
        ++rec.blocked;
    else if (rec.blocked > 0)
        --rec.blocked;
}
void ServerCore::note_protocol_error() {
    std::lock_guard lock(mu_);
    ++counters_.protocol_errors;
}

Counters ServerCore::counters() const {
    std::lock_guard lock(mu_);
    return counters_;
}
std::vector<std::uint32_t> ServerCore::clients_per_shard() const {
    std::lock_guard lock(mu_);
    return per_shard_;
}
std::map<std::uint64_t, std::uint32_t> ServerCore::completed() const {
    std::lock_guard lock(mu_);
    return completed_;
}
std::uint64_t ServerCore::completed_count() const {
    std::lock_guard lock(mu_);
    return completed_.size();
}
bool ServerCore::drain_requested() const {
    std::lock_guard lock(mu_);
    return drain_;
}
bool ServerCore::ensemble_complete() const {
    std::lock_guard lock(mu_);
    return completed_.size() >= cfg_.ensemble_size;
}

std::uint64_t ServeReport::batches_trained() const {
    std::uint64_t n = 0;
    for (auto b : batches_per_shard) n += b;
    return n;
}

void write_report(const ServeReport& r, const std::filesystem::path& path) {
    const auto& c = r.counters;
    nlohmann::json j;
    j["samples_received"] = c.samples_received;
    j["duplicates_dropped"] = c.duplicates_dropped;
    j["unique_timesteps"] = c.unique_timesteps;
    j["buffer_insertions"] = c.buffer_insertions;
    j["samples_discarded"] = c.samples_discarded;
    j["reservoir_not_retained"] = c.reservoir_not_retained;
    j["trajectory_gaps"] = c.trajectory_gaps;
    j["incomplete_trajectories"] = c.incomplete_trajectories;
    j["empty_trajectories"] = c.empty_trajectories;
    j["protocol_errors"] = c.protocol_errors;
    j["sims_completed"] = c.sims_completed;
    j["params_assigned"] = c.params_assigned;
    j["batches_trained"] = r.batches_trained();
    j["batches_per_shard"] = r.batches_per_shard;
    j["clients_per_shard"] = r.clients_per_shard;
    auto& done = j["completed"] = nlohmann::json::object();
    for (const auto& [sim, last_t] : r.completed) done[std::to_string(sim)] = last_t;
    j["diverged"] = r.diverged;
    j["stop_reason"] = r.stop_reason;
    j["wall_time_s"] = r.wall_time_s;
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------- threaded server

namespace {

using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

struct Connection {
    net::Socket sock;
    std::thread thread;
    std::atomic<bool> finished{false};
};

struct Shard {
    std::unique_ptr<buffer::MemoryBuffer> buffer;
    std::unique_ptr<training::ShardTrainer> trainer;
    std::atomic<bool> done{false};
    std::atomic<std::uint64_t> batches{0};
    std::thread thread;
};

class Server {
public:
    Server(const config::RunConfig& cfg, const ServeOptions& opts)
        : cfg_(cfg), opts_(opts), setup_(training::make_training_setup(cfg)), core_(cfg, cfg.shards) {
        for (std::uint32_t k = 0; k < cfg.shards; ++k) {
            auto sh = std::make_unique<Shard>();
            sh->buffer = std::make_unique<buffer::MemoryBuffer>(cfg.buffer.policy, cfg.buffer.capacity,
                                                                training::buffer_seed(cfg, k));
            sh->trainer = std::make_unique<training::ShardTrainer>(setup_, cfg, k, opts.out_dir);
            shards_.push_back(std::move(sh));
        }
    }

    ServeReport run() {
        const auto t0 = Clock::now();
        net::Listener data(cfg_.server.host, cfg_.server.data_port);
        net::Listener ctrl(cfg_.server.host, cfg_.server.ctrl_port);
        last_activity_ = Clock::now();

        for (std::uint32_t k = 0; k < shards_.size(); ++k) shards_[k]->thread = std::thread([this, k] { train(k); });
        std::thread data_accept([&] { accept_loop(data, false); });
        std::thread ctrl_accept([&] { accept_loop(ctrl, true); });
        if (opts_.on_ready) opts_.on_ready(data.port(), ctrl.port());

        supervise();

        for (auto& sh : shards_) sh->thread.join();
        finished_ = true;
        data_accept.join();
        {
            std::lock_guard lock(conn_mu_);
            for (auto& c : data_conns_) c->sock.shutdown_both();
        }
        join_all(data_conns_);
        // Control readers stay up until the report exists so a drain
        // request always gets its Ack before the process ends.
        ServeReport report;
        report.counters = core_.counters();
        for (auto& sh : shards_) report.batches_per_shard.push_back(sh->batches.load());
        report.clients_per_shard = core_.clients_per_shard();
        report.completed = core_.completed();
        report.diverged = diverged_;
        report.stop_reason = stop_reason_;
        report.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
        write_report(report, opts_.out_dir / "server_report.json");

        ctrl_accept.join();
        {
            std::lock_guard lock(conn_mu_);
            for (auto& c : ctrl_conns_) c->sock.shutdown_both();
        }
        join_all(ctrl_conns_);
        return report;
    }

private:
    bool external_stop() const { return opts_.stop != nullptr && opts_.stop->load(); }

    void supervise() {
        while (true) {
            if (external_stop()) {
                stop_now_ = true;
                reception_done_ = true;
                if (stop_reason_.empty()) stop_reason_ = "signal";
            }
            if (!reception_done_) {
                std::string why = reception_finished();
                if (!why.empty()) {
                    stop_reason_ = why;
                    reception_done_ = true;
                }
            }
            bool all_done = true;
            for (auto& sh : shards_) all_done = all_done && sh->done.load();
            if (all_done && reception_done_) return;
            std::this_thread::sleep_for(20ms);
        }
    }

    std::string reception_finished() {
        if (core_.drain_requested()) return "drain";
        if (core_.ensemble_complete()) return "ensemble";
        const auto quiet = Clock::now() - last_activity_.load();
        const bool no_clients = open_data_.load() == 0;
        if (control_seen_ && open_ctrl_.load() == 0 && no_clients &&
            quiet >= std::chrono::milliseconds(cfg_.server.orphan_grace_ms))
            return "orphaned";
        if (cfg_.server.idle_exit_ms > 0 && no_clients && open_ctrl_.load() == 0 &&
            quiet >= std::chrono::milliseconds(cfg_.server.idle_exit_ms))
            return "idle";
        return {};
    }

    void train(std::uint32_t k) {
        auto& sh = *shards_[k];
        auto& tr = *sh.trainer;
        const bool reads_remove = !std::holds_alternative<buffer::ReservoirWeighted>(cfg_.buffer.policy);
        const auto stop = cfg_.server.stop;
        try {
            while (!stop_now_) {
                if (stop != config::StopCondition::Ensemble && !tr.budget_left()) break;
                if (reception_done_ && !reads_remove && stop != config::StopCondition::Batches) break;
                auto batch = sh.buffer->get_batch_wait(cfg_.batch_size(), tr.batch_rng(), 50ms);
                if (batch) {
                    tr.train(*batch);
                    sh.batches = tr.step();
                    continue;
                }
                if (reception_done_ && reads_remove) break;
            }
            tr.finish();
        } catch (const trainer::TrainingDiverged& e) {
            std::cerr << "shard " << k << ": " << e.what() << '\n';
            diverged_ = true;
        }
        sh.done = true;
        sh.buffer->close();
    }

    void deliver(std::uint32_t shard, Sample&& s) {
        auto& sh = *shards_[shard];
        if (sh.done) {
            core_.note_discarded();
            return;
        }
        const auto sim = s.sim_id;
        core_.set_blocked(sim, true);
        const bool put = sh.buffer->put_wait(std::move(s));
        core_.set_blocked(sim, false);
        if (put) {
            core_.note_inserted();
        } else if (sh.buffer->closed()) {
            core_.note_discarded();
        } else {
            core_.note_not_retained();
        }
    }

    void accept_loop(net::Listener& listener, bool control) {
        while (!(control ? finished_.load() : reception_done_.load())) {
            auto sock = listener.accept_for(100ms);
            if (!sock) continue;
            auto conn = std::make_shared<Connection>();
            conn->sock = std::move(*sock);
            std::lock_guard lock(conn_mu_);
            if (control) {
                control_seen_ = true;
                ++open_ctrl_;
                conn->thread = std::thread([this, conn] { control_reader(*conn); });
                ctrl_conns_.push_back(conn);
            } else {
                ++open_data_;
                last_activity_ = Clock::now();
                conn->thread = std::thread([this, conn] { data_reader(*conn); });
                data_conns_.push_back(conn);
                reap(data_conns_);
            }
        }
        listener.close();
    }

    void data_reader(Connection& conn) {
        ConnState st;
        net::FrameReader reader(conn.sock);
        try {
            while (auto msg = reader.read()) {
                last_activity_ = Clock::now();
                auto effect = core_.on_data(st, *msg, net::wallclock_ms());
                if (!effect.error.empty()) {
                    core_.note_protocol_error();
                    std::cerr << "closing client connection: " << effect.error << '\n';
                }
                if (effect.sample) {
                    if (reception_done_ && stop_now_)
                        core_.note_discarded();
                    else
                        deliver(st.shard, std::move(*effect.sample));
                }
                if (effect.close) break;
            }
        } catch (const wire::DecodeError& e) {
            core_.note_protocol_error();
            std::cerr << "closing client connection: " << e.what() << '\n';
        } catch (const net::NetError&) {
        }
        core_.on_disconnect(st);
        conn.sock.shutdown_both();
        last_activity_ = Clock::now();
        --open_data_;
        conn.finished = true;
    }

    void control_reader(Connection& conn) {
        net::FrameReader reader(conn.sock);
        net::FrameWriter writer(conn.sock);
        try {
            while (auto msg = reader.read()) {
                bool violation = false;
                for (const auto& reply : core_.on_control(*msg, violation)) writer.write(reply);
                if (violation) break;
            }
        } catch (const wire::DecodeError&) {
            core_.note_protocol_error();
        } catch (const net::NetError&) {
        }
        conn.sock.shutdown_both();
        last_activity_ = Clock::now();
        --open_ctrl_;
        conn.finished = true;
    }

    static void reap(std::list<std::shared_ptr<Connection>>& conns) {
        for (auto it = conns.begin(); it != conns.end();) {
            if ((*it)->finished) {
                (*it)->thread.join();
                it = conns.erase(it);
            } else {
                ++it;
            }
        }
    }

    void join_all(std::list<std::shared_ptr<Connection>>& conns) {
        std::list<std::shared_ptr<Connection>> taken;
        {
            std::lock_guard lock(conn_mu_);
            taken.swap(conns);
        }
        for (auto& c : taken) c->thread.join();
    }

    const config::RunConfig& cfg_;
    const ServeOptions& opts_;
    training::TrainingSetup setup_;
    ServerCore core_;
    std::vector<std::unique_ptr<Shard>> shards_;

    std::atomic<bool> reception_done_{false};
    std::atomic<bool> stop_now_{false};
    std::atomic<bool> finished_{false};
    std::atomic<bool> diverged_{false};
    std::atomic<bool> control_seen_{false};
    std::atomic<int> open_data_{0};
    std::atomic<int> open_ctrl_{0};
    std::atomic<Clock::time_point> last_activity_{};
    std::string stop_reason_;

    std::mutex conn_mu_;
    std::list<std::shared_ptr<Connection>> data_conns_;
    std::list<std::shared_ptr<Connection>> ctrl_conns_;
};

}  // namespace

ServeReport serve(const config::RunConfig& cfg, const ServeOptions& opts) {
    cfg.validate();
    std::filesystem::create_directories(opts.out_dir);
    Server server(cfg, opts);
    return server.run();
}

}  // namespace olts::server
