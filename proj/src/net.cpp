#include "olts/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <vector>

namespace olts::net {

namespace {

std::string errno_text(const char* what) {
    return std::string(what) + ": " + std::strerror(errno);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    const std::string h = host == "localhost" ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
        throw NetError("cannot resolve host " + host);
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon + 1 == text.size())
        throw NetError("endpoint must be host:port, got '" + text + "'");
    Endpoint ep;
    ep.host = colon == 0 ? "127.0.0.1" : text.substr(0, colon);
    const auto port = std::stoul(text.substr(colon + 1));
    if (port > 65535) throw NetError("port out of range in '" + text + "'");
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

Socket::~Socket() { close(); }

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::write_all(const void* data, std::size_t len) {
    const auto* p = static_cast<const char*>(data);
    while (len > 0) {
        const auto n = ::send(fd_, p, len, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError(errno_text("send"));
        }
        p += n;
        len -= static_cast<std::size_t>(n);
    }
}

bool Socket::read_exact(void* data, std::size_t len) {
    auto* p = static_cast<char*>(data);
    std::size_t got = 0;
    while (got < len) {
        const auto n = ::recv(fd_, p + got, len - got, 0);
        if (n == 0) {
            if (got == 0) return false;
            throw NetError("connection closed mid-frame");
        }
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError(errno_text("recv"));
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

bool Socket::wait_readable(std::chrono::milliseconds timeout) const {
    pollfd pfd{fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    return rc > 0;
}

Socket Socket::connect(const Endpoint& ep) {
    const auto addr = resolve(ep.host, ep.port);
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) throw NetError(errno_text("socket"));
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
        throw NetError(errno_text(("connect " + ep.str()).c_str()));
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return s;
}

Listener::Listener(const std::string& host, std::uint16_t port) {
    sock_ = Socket(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!sock_.valid()) throw NetError(errno_text("socket"));
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    auto addr = resolve(host, port);
    if (::bind(sock_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
        throw NetError(errno_text(("bind " + host + ":" + std::to_string(port)).c_str()));
    if (::listen(sock_.fd(), 128) != 0) throw NetError(errno_text("listen"));
    socklen_t len = sizeof(addr);
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

std::optional<Socket> Listener::accept_for(std::chrono::milliseconds timeout) {
    if (!sock_.valid() || !sock_.wait_readable(timeout)) return std::nullopt;
    const int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) return std::nullopt;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Socket(fd);
}

std::optional<wire::Message> FrameReader::read() {
    if (poisoned_) throw wire::DecodeError(wire::DecodeErrc::Poisoned, "reader failed earlier");
    try {
        std::byte header[wire::kHeaderSize];
        if (!sock_.read_exact(header, sizeof(header))) return std::nullopt;
        const auto h = wire::parse_header(header);
        if (h.body_len > wire::kMaxBodyLen)
            throw wire::DecodeError(wire::DecodeErrc::Malformed, "body length over limit");
        std::vector<std::byte> frame(wire::kHeaderSize + h.body_len + wire::kCrcSize);
        std::memcpy(frame.data(), header, sizeof(header));
        if (!sock_.read_exact(frame.data() + wire::kHeaderSize, frame.size() - wire::kHeaderSize))
            throw wire::DecodeError(wire::DecodeErrc::Truncated, "stream ended inside frame");
        return wire::decode(frame);
    } catch (...) {
        poisoned_ = true;
        throw;
    }
}

void FrameWriter::write(const wire::Message& msg) {
    const auto bytes = wire::encode(msg);
    std::lock_guard lock(mu_);
    sock_.write_all(bytes.data(), bytes.size());
}

std::uint16_t pick_free_port() {
    Listener probe("127.0.0.1", 0);
    return probe.port();
}

std::uint64_t wallclock_ms() {
    using namespace std::chrono;
    return static_cast<std::uint64_t>(
        duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

}  // namespace olts::net
