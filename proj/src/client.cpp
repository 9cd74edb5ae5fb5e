#include "olts/client.hpp"

#include "olts/wire.hpp"

#include <sys/socket.h>

#include <condition_variable>
#include <mutex>
#include <thread>

namespace olts::client {

struct ClientSession::Impl {
    std::uint64_t sim_id = 0;
    std::uint64_t field_len = 0;
    net::Socket sock;
    net::FrameWriter writer{sock};
    std::uint32_t sent = 0;
    State state = State::Connected;
    ConnectOptions opts;

    std::mutex hb_mu;
    std::condition_variable hb_cv;
    bool hb_stop = false;
    std::thread heartbeat;

    void start_heartbeat() {
        if (opts.heartbeat_interval.count() <= 0) return;
        heartbeat = std::thread([this] {
            std::unique_lock lock(hb_mu);
            while (!hb_cv.wait_for(lock, opts.heartbeat_interval, [this] { return hb_stop; })) {
                lock.unlock();
                try {
                    writer.write(wire::Heartbeat{sim_id, net::wallclock_ms()});
                } catch (const net::NetError&) {
                    return;
                }
                lock.lock();
            }
        });
    }

    void stop_heartbeat() {
        {
            std::lock_guard lock(hb_mu);
            hb_stop = true;
        }
        hb_cv.notify_all();
        if (heartbeat.joinable()) heartbeat.join();
    }

    ~Impl() {
        stop_heartbeat();
        sock.close();
    }
};

ClientSession::ClientSession(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ClientSession::ClientSession(ClientSession&&) noexcept = default;
ClientSession& ClientSession::operator=(ClientSession&&) noexcept = default;
ClientSession::~ClientSession() = default;

ClientSession ClientSession::connect(const net::Endpoint& server, std::uint64_t sim_id, const ParamVector& params,
                                     std::vector<std::uint32_t> field_shape, const ConnectOptions& opts) {
    if (field_shape.empty()) throw ContractViolation("field shape must have at least one dimension");
    std::uint64_t len = 1;
    for (auto d : field_shape) len *= d;
    if (len == 0 || len > wire::kMaxValueCount) throw ContractViolation("field shape out of range");

    auto impl = std::make_unique<Impl>();
    impl->sim_id = sim_id;
    impl->field_len = len;
    impl->opts = opts;

    auto delay = opts.backoff_base;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
        try {
            impl->sock = net::Socket::connect(server);
            break;
        } catch (const net::NetError& e) {
            last_error = e.what();
        }
        std::this_thread::sleep_for(delay);
        delay *= 2;
    }
    if (!impl->sock.valid())
        throw ConnectionRefused("cannot reach server at " + server.str() + " after " +
                                std::to_string(opts.max_attempts) + " attempts: " + last_error);

    impl->writer.write(wire::Hello{opts.client_id, sim_id, params.values, std::move(field_shape)});
    impl->start_heartbeat();
    return ClientSession(std::move(impl));
}

void ClientSession::send_timestep(std::uint32_t t_index, std::span<const double> field) {
    auto& s = *impl_;
    if (s.state != State::Connected) throw ContractViolation("send on a closed session");
    if (t_index != s.sent)
        throw ContractViolation("t_index " + std::to_string(t_index) + " out of sequence, expected " +
                                std::to_string(s.sent));
    if (field.size() != s.field_len)
        throw ContractViolation("field holds " + std::to_string(field.size()) + " values, expected " +
                                std::to_string(s.field_len));
    s.writer.write(wire::Timestep{s.sim_id, t_index, std::vector<double>(field.begin(), field.end())});
    ++s.sent;
}

void ClientSession::finalize() {
    if (!impl_ || impl_->state == State::Closed) return;
    auto& s = *impl_;
    s.state = State::Closed;
    s.stop_heartbeat();
    s.writer.write(wire::Bye{s.sim_id, s.sent > 0 ? s.sent - 1 : wire::kEmptyTrajectory});
    s.sock.shutdown_write();
    // The server closes after it has processed the Bye; anything it sends
    // before that is ignored.
    const auto deadline = std::chrono::steady_clock::now() + s.opts.close_timeout;
    std::byte scratch[256];
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            s.sock.close();
            throw net::NetError("server did not close the stream after Bye");
        }
        if (!s.sock.wait_readable(left)) continue;
        const auto n = ::recv(s.sock.fd(), scratch, sizeof scratch, 0);
        if (n <= 0) break;
    }
    s.sock.close();
}

State ClientSession::state() const noexcept { return impl_ ? impl_->state : State::Closed; }
std::uint32_t ClientSession::sent_count() const noexcept { return impl_ ? impl_->sent : 0; }
std::uint64_t ClientSession::sim_id() const noexcept { return impl_ ? impl_->sim_id : 0; }

}  // namespace olts::client
