#pragma once

#include "olts/net.hpp"
#include "olts/sample.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace olts::client {

/// Misuse of a session: wrong field length, skipped t_index, send after close.
/// Nothing is written when this is thrown.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConnectionRefused : public net::NetError {
public:
    using net::NetError::NetError;
};

struct ConnectOptions {
    std::uint64_t client_id = 0;
    /// Delay after the first failed attempt; doubles after each later one.
    std::chrono::milliseconds backoff_base{100};
    int max_attempts = 5;
    /// 0 disables the background heartbeat.
    std::chrono::milliseconds heartbeat_interval{1000};
    /// How long finalize waits for the server to close its side.
    std::chrono::milliseconds close_timeout{10000};
};

enum class State { Connected, Closed };

/// One simulation's stream to the server. A session is used by one thread;
/// the optional heartbeat timer shares the socket through an internal
/// synchronized writer.
class ClientSession {
public:
    /// Connects with exponential backoff and sends Hello. Throws
    /// ConnectionRefused once every attempt has failed.
    static ClientSession connect(const net::Endpoint& server, std::uint64_t sim_id, const ParamVector& params,
                                 std::vector<std::uint32_t> field_shape, const ConnectOptions& opts = {});

    ClientSession(ClientSession&&) noexcept;
    ClientSession& operator=(ClientSession&&) noexcept;
    /// Closes the socket without a Bye; the server sees an incomplete trajectory.
    ~ClientSession();

    /// Requires t_index == sent_count() and a field of the announced size.
    /// Blocks while the transport is full. Throws net::NetError when the
    /// connection is broken.
    void send_timestep(std::uint32_t t_index, std::span<const double> field);

    /// Sends Bye, flushes, and waits for the server to close. Idempotent.
    void finalize();

    State state() const noexcept;
    std::uint32_t sent_count() const noexcept;
    std::uint64_t sim_id() const noexcept;

private:
    struct Impl;
    explicit ClientSession(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

}  // namespace olts::client
