#pragma once

#include <sys/socket.h>

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ipscope/target.hpp"

namespace ipscope::net {

using Deadline = std::chrono::steady_clock::time_point;

/// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) noexcept : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset() noexcept;

 private:
  int fd_ = -1;
};

/// `host:port`, `[v6]:port` or a bare host with a default port.
struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text, std::uint16_t default_port);
  std::string to_string() const;
};

socklen_t to_sockaddr(const IpAddress& ip, std::uint16_t port, sockaddr_storage& out);
IpAddress from_sockaddr(const sockaddr_storage& sa);

enum class ConnectStatus { connected, refused, timeout, unreachable };

struct ConnectResult {
  ConnectStatus status = ConnectStatus::timeout;
  double latency_ms = 0;
  Socket socket;
};

/// Starts a non-blocking connect. Returns the socket and sets `immediate` when
/// the connect already finished (with `error` holding errno, 0 for success).
Socket start_connect(const IpAddress& ip, std::uint16_t port, bool& immediate, int& error);

/// Maps a finished connect's errno to a status.
ConnectStatus classify_connect_errno(int err) noexcept;

/// Blocking-style TCP connect bounded by `timeout`.
ConnectResult connect_with_timeout(const IpAddress& ip, std::uint16_t port, std::chrono::milliseconds timeout);

/// Writes everything before `deadline`; returns false on error or timeout.
bool send_all(const Socket& s, std::string_view data, Deadline deadline);

/// Reads until EOF, `deadline`, or `max_bytes`. `timed_out` reports whether
/// the deadline cut the read short.
std::string recv_to_eof(const Socket& s, Deadline deadline, std::size_t max_bytes, bool* timed_out = nullptr);

/// System resolver (getaddrinfo). Literal addresses are returned as-is.
std::vector<IpAddress> resolve_host(const std::string& host);

double elapsed_ms(std::chrono::steady_clock::time_point since);

}  // namespace ipscope::net
