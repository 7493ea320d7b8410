#include "ipscope/socket.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include "ipscope/error.hpp"

namespace ipscope::net {

using namespace std::chrono;

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    reset();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Socket::~Socket() { reset(); }

void Socket::reset() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Endpoint Endpoint::parse(std::string_view text, std::uint16_t default_port) {
  Endpoint ep;
  ep.port = default_port;
  std::string_view port_text;
  if (!text.empty() && text.front() == '[') {
    const auto close = text.find(']');
    if (close == std::string_view::npos) throw InvalidArgument("unterminated '[' in endpoint");
    ep.host = std::string(text.substr(1, close - 1));
    if (close + 1 < text.size()) {
      if (text[close + 1] != ':') throw InvalidArgument("garbage after ']' in endpoint");
      port_text = text.substr(close + 2);
    }
  } else {
    const auto colon = text.rfind(':');
    // More than one colon without brackets is a bare IPv6 literal.
    if (colon != std::string_view::npos && text.find(':') == colon) {
      ep.host = std::string(text.substr(0, colon));
      port_text = text.substr(colon + 1);
    } else {
      ep.host = std::string(text);
    }
  }
  if (!port_text.empty()) {
    unsigned p = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), p);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || p == 0 || p > 65535) {
      throw InvalidArgument("bad port in endpoint '" + std::string(text) + "'");
    }
    ep.port = static_cast<std::uint16_t>(p);
  }
  if (ep.host.empty()) throw InvalidArgument("empty host in endpoint");
  return ep;
}

std::string Endpoint::to_string() const {
  if (host.find(':') != std::string::npos) return "[" + host + "]:" + std::to_string(port);
  return host + ":" + std::to_string(port);
}

socklen_t to_sockaddr(const IpAddress& ip, std::uint16_t port, sockaddr_storage& out) {
  std::memset(&out, 0, sizeof out);
  if (ip.is_v4()) {
    auto* sin = reinterpret_cast<sockaddr_in*>(&out);
    sin->sin_family = AF_INET;
    sin->sin_port = htons(port);
    std::memcpy(&sin->sin_addr, ip.bytes().data(), 4);
    return sizeof(sockaddr_in);
  }
  auto* sin6 = reinterpret_cast<sockaddr_in6*>(&out);
  sin6->sin6_family = AF_INET6;
  sin6->sin6_port = htons(port);
  std::memcpy(&sin6->sin6_addr, ip.bytes().data(), 16);
  return sizeof(sockaddr_in6);
}

IpAddress from_sockaddr(const sockaddr_storage& sa) {
  if (sa.ss_family == AF_INET) {
    const auto* sin = reinterpret_cast<const sockaddr_in*>(&sa);
    return IpAddress::v4(ntohl(sin->sin_addr.s_addr));
  }
  const auto* sin6 = reinterpret_cast<const sockaddr_in6*>(&sa);
  std::array<std::uint8_t, 16> b{};
  std::memcpy(b.data(), &sin6->sin6_addr, 16);
  return IpAddress::v6(b);
}

Socket start_connect(const IpAddress& ip, std::uint16_t port, bool& immediate, int& error) {
  immediate = false;
  error = 0;
  Socket s(::socket(ip.is_v4() ? AF_INET : AF_INET6, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
  if (!s.valid()) {
    immediate = true;
    error = errno;
    return s;
  }
  sockaddr_storage sa;
  const socklen_t len = to_sockaddr(ip, port, sa);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&sa), len) == 0) {
    immediate = true;
  } else if (errno != EINPROGRESS) {
    immediate = true;
    error = errno;
  }
  return s;
}

ConnectStatus classify_connect_errno(int err) noexcept {
  switch (err) {
    case 0: return ConnectStatus::connected;
    case ECONNREFUSED:
    case ECONNRESET: return ConnectStatus::refused;
    case ETIMEDOUT: return ConnectStatus::timeout;
    default: return ConnectStatus::unreachable;
  }
}

ConnectResult connect_with_timeout(const IpAddress& ip, std::uint16_t port, milliseconds timeout) {
  ConnectResult out;
  const auto start = steady_clock::now();
  bool immediate = false;
  int err = 0;
  Socket s = start_connect(ip, port, immediate, err);
  if (!immediate) {
    pollfd pfd{s.fd(), POLLOUT, 0};
    int rc;
    do {
      const auto left = duration_cast<milliseconds>(start + timeout - steady_clock::now()).count();
      rc = ::poll(&pfd, 1, static_cast<int>(std::max<long long>(left, 0)));
    } while (rc < 0 && errno == EINTR);
    if (rc <= 0) {
      out.status = ConnectStatus::timeout;
      out.latency_ms = elapsed_ms(start);
      return out;
    }
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
  }
  out.latency_ms = elapsed_ms(start);
  out.status = classify_connect_errno(err);
  if (out.status == ConnectStatus::connected) out.socket = std::move(s);
  return out;
}

namespace {

int millis_until(Deadline deadline) {
  const auto left = duration_cast<milliseconds>(deadline - steady_clock::now()).count();
  return static_cast<int>(std::max<long long>(left, 0));
}

}  // namespace

bool send_all(const Socket& s, std::string_view data, Deadline deadline) {
  while (!data.empty()) {
    pollfd pfd{s.fd(), POLLOUT, 0};
    const int rc = ::poll(&pfd, 1, millis_until(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return false;
    const ssize_t n = ::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EAGAIN || errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

std::string recv_to_eof(const Socket& s, Deadline deadline, std::size_t max_bytes, bool* timed_out) {
  std::string out;
  char buf[4096];
  if (timed_out) *timed_out = false;
  while (out.size() < max_bytes) {
    pollfd pfd{s.fd(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, millis_until(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) {
      if (timed_out) *timed_out = true;
      break;
    }
    if (rc < 0) break;
    const ssize_t n = ::recv(s.fd(), buf, sizeof buf, 0);
    if (n < 0 && (errno == EAGAIN || errno == EINTR)) continue;
    if (n <= 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  if (out.size() > max_bytes) out.resize(max_bytes);
  return out;
}

std::vector<IpAddress> resolve_host(const std::string& host) {
  if (auto ip = IpAddress::parse(host)) return {*ip};
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) return {};
  std::vector<IpAddress> out;
  for (auto* p = res; p; p = p->ai_next) {
    sockaddr_storage sa{};
    std::memcpy(&sa, p->ai_addr, p->ai_addrlen);
    const auto ip = from_sockaddr(sa);
    if (std::find(out.begin(), out.end(), ip) == out.end()) out.push_back(ip);
  }
  ::freeaddrinfo(res);
  return out;
}

double elapsed_ms(steady_clock::time_point since) {
  return duration<double, std::milli>(steady_clock::now() - since).count();
}

}  // namespace ipscope::net
