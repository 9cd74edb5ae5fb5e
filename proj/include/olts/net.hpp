#pragma once

#include "olts/wire.hpp"

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

namespace olts::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Peer closed the stream at a frame boundary.
class Closed : public NetError {
public:
    Closed() : NetError("connection closed by peer") {}
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// Parses "host:port".
    static Endpoint parse(const std::string& text);
    std::string str() const;
};

/// Owning stream-socket handle.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket();
    Socket(Socket&& other) noexcept;
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    void close();
    void shutdown_write();
    void shutdown_both();

    /// Throws NetError on failure.
    void write_all(const void* data, std::size_t len);
    /// Reads exactly len bytes. Returns false on clean EOF before the first byte.
    bool read_exact(void* data, std::size_t len);
    /// Waits until readable or timeout; true when readable (or EOF pending).
    bool wait_readable(std::chrono::milliseconds timeout) const;

    static Socket connect(const Endpoint& ep);

private:
    int fd_ = -1;
};

class Listener {
public:
    /// Binds to host:port (port 0 picks an ephemeral port).
    Listener(const std::string& host, std::uint16_t port);
    std::uint16_t port() const noexcept { return port_; }
    /// Waits up to timeout for a connection.
    std::optional<Socket> accept_for(std::chrono::milliseconds timeout);
    void close() { sock_.close(); }

private:
    Socket sock_;
    std::uint16_t port_ = 0;
};

/// Reads whole frames from a socket. Any decode failure poisons the reader.
class FrameReader {
public:
    explicit FrameReader(Socket& sock) : sock_(sock) {}
    /// Returns nullopt on clean EOF at a frame boundary.
    std::optional<wire::Message> read();
    bool poisoned() const noexcept { return poisoned_; }

private:
    Socket& sock_;
    bool poisoned_ = false;
};

/// Serializes frame writes from several threads onto one socket.
class FrameWriter {
public:
    explicit FrameWriter(Socket& sock) : sock_(sock) {}
    void write(const wire::Message& msg);

private:
    Socket& sock_;
    std::mutex mu_;
};

/// Asks the OS for a currently unused TCP port on the loopback interface.
std::uint16_t pick_free_port();

std::uint64_t wallclock_ms();

}  // namespace olts::net
