#include "ipscope/liveness.hpp"

#include <netinet/icmp6.h>
#include <netinet/in.h>
#include <netinet/ip_icmp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <random>

#include "ipscope/error.hpp"
#include "ipscope/port_scan.hpp"
#include "ipscope/socket.hpp"

namespace ipscope::probes {

using namespace std::chrono;

std::optional<double> median(std::vector<double> samples) {
  if (samples.empty()) return std::nullopt;
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  return n % 2 ? samples[n / 2] : (samples[n / 2 - 1] + samples[n / 2]) / 2.0;
}

namespace {

struct IcmpSocket {
  net::Socket socket;
  bool raw = false;
};

// Unprivileged ping sockets first, raw sockets second.
std::optional<IcmpSocket> open_icmp(bool v6) {
  const int family = v6 ? AF_INET6 : AF_INET;
  const int proto = v6 ? static_cast<int>(IPPROTO_ICMPV6) : static_cast<int>(IPPROTO_ICMP);
  net::Socket dgram(::socket(family, SOCK_DGRAM | SOCK_CLOEXEC, proto));
  if (dgram.valid()) return IcmpSocket{std::move(dgram), false};
  if (!v6) {
    net::Socket raw(::socket(family, SOCK_RAW | SOCK_CLOEXEC, proto));
    if (raw.valid()) return IcmpSocket{std::move(raw), true};
  }
  return std::nullopt;
}

std::uint16_t checksum(const std::uint8_t* data, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) sum += (data[i] << 8) | data[i + 1];
  if (len % 2) sum += data[len - 1] << 8;
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

// One echo round trip; returns the RTT on a matching reply.
std::optional<double> icmp_echo(IcmpSocket& s, const IpAddress& ip, std::uint16_t id, std::uint16_t seq,
                                milliseconds timeout) {
  const bool v6 = !ip.is_v4();
  std::uint8_t pkt[16] = {};
  pkt[0] = v6 ? ICMP6_ECHO_REQUEST : ICMP_ECHO;
  pkt[4] = static_cast<std::uint8_t>(id >> 8);
  pkt[5] = static_cast<std::uint8_t>(id);
  pkt[6] = static_cast<std::uint8_t>(seq >> 8);
  pkt[7] = static_cast<std::uint8_t>(seq);
  std::memcpy(pkt + 8, "ipscope!", 8);
  if (!v6) {
    const auto sum = checksum(pkt, sizeof pkt);
    pkt[2] = static_cast<std::uint8_t>(sum >> 8);
    pkt[3] = static_cast<std::uint8_t>(sum);
  }

  sockaddr_storage sa;
  const socklen_t len = net::to_sockaddr(ip, 0, sa);
  const auto start = steady_clock::now();
  if (::sendto(s.socket.fd(), pkt, sizeof pkt, 0, reinterpret_cast<sockaddr*>(&sa), len) < 0) return std::nullopt;

  const auto deadline = start + timeout;
  std::uint8_t buf[1500];
  while (true) {
    const auto left = duration_cast<milliseconds>(deadline - steady_clock::now()).count();
    if (left <= 0) return std::nullopt;
    pollfd pfd{s.socket.fd(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return std::nullopt;
    sockaddr_storage from{};
    socklen_t from_len = sizeof from;
    const ssize_t n = ::recvfrom(s.socket.fd(), buf, sizeof buf, 0, reinterpret_cast<sockaddr*>(&from), &from_len);
    if (n <= 0) continue;
    std::size_t off = 0;
    if (s.raw) off = static_cast<std::size_t>(buf[0] & 0x0f) * 4;
    if (static_cast<std::size_t>(n) < off + 8) continue;
    const std::uint8_t* icmp = buf + off;
    const std::uint8_t want = v6 ? ICMP6_ECHO_REPLY : ICMP_ECHOREPLY;
    if (icmp[0] != want) continue;
    const std::uint16_t rseq = static_cast<std::uint16_t>((icmp[6] << 8) | icmp[7]);
    // Ping sockets rewrite the identifier, so only raw sockets can check it.
    const std::uint16_t rid = static_cast<std::uint16_t>((icmp[4] << 8) | icmp[5]);
    if (rseq != seq || (s.raw && rid != id)) continue;
    if (net::from_sockaddr(from) != ip) continue;
    return net::elapsed_ms(start);
  }
}

// Connects to every port at once; the first definitive answer wins.
std::optional<double> tcp_attempt(const IpAddress& ip, const std::vector<std::uint16_t>& ports, milliseconds timeout,
                                  NetMeter& meter) {
  std::vector<net::Socket> socks;
  std::vector<pollfd> fds;
  const auto start = steady_clock::now();
  for (auto port : ports) {
    meter.begin(Channel::tcp);
    bool immediate = false;
    int err = 0;
    auto s = net::start_connect(ip, port, immediate, err);
    if (immediate) {
      const auto st = net::classify_connect_errno(err);
      if (st == net::ConnectStatus::connected || st == net::ConnectStatus::refused) return net::elapsed_ms(start);
      continue;
    }
    fds.push_back(pollfd{s.fd(), POLLOUT, 0});
    socks.push_back(std::move(s));
  }
  const auto deadline = start + timeout;
  while (!fds.empty()) {
    const auto left = duration_cast<milliseconds>(deadline - steady_clock::now()).count();
    if (left <= 0) return std::nullopt;
    const int rc = ::poll(fds.data(), fds.size(), static_cast<int>(left));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return std::nullopt;
    for (std::size_t i = 0; i < fds.size();) {
      if (fds[i].revents == 0) {
        ++i;
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fds[i].fd, SOL_SOCKET, SO_ERROR, &err, &len);
      const auto st = net::classify_connect_errno(err);
      if (st == net::ConnectStatus::connected || st == net::ConnectStatus::refused) return net::elapsed_ms(start);
      fds.erase(fds.begin() + static_cast<std::ptrdiff_t>(i));
      socks.erase(socks.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
  return std::nullopt;
}

}  // namespace

bool icmp_available(bool v6) { return open_icmp(v6).has_value(); }

LivenessResult check_liveness(const Target& target, const LivenessOptions& opts, NetMeter* meter) {
  if (opts.attempts < 1 || opts.attempts > 10) throw InvalidArgument("attempts must be in 1..10");
  if (opts.timeout_ms < 1) throw InvalidArgument("timeout_ms must be positive");
  if (opts.tcp_ports.empty()) throw InvalidArgument("tcp_ports must not be empty");
  auto& m = meter_or_default(meter);
  const IpAddress ip = resolve_target(target, &m);
  require_consent(ip, opts.consent);

  const milliseconds timeout(opts.timeout_ms);
  LivenessResult out;
  out.attempts = opts.attempts;
  std::vector<double> rtts;

  std::optional<IcmpSocket> icmp;
  if (opts.allow_icmp) icmp = open_icmp(!ip.is_v4());
  if (icmp) {
    out.method = LivenessMethod::icmp_echo;
    static thread_local std::mt19937 rng{std::random_device{}()};
    const auto id = static_cast<std::uint16_t>(rng());
    for (int i = 0; i < opts.attempts; ++i) {
      m.begin(Channel::icmp);
      if (auto rtt = icmp_echo(*icmp, ip, id, static_cast<std::uint16_t>(i + 1), timeout)) rtts.push_back(*rtt);
    }
  } else {
    out.method = LivenessMethod::tcp_connect;
    for (int i = 0; i < opts.attempts; ++i) {
      if (auto rtt = tcp_attempt(ip, opts.tcp_ports, timeout, m)) rtts.push_back(*rtt);
    }
  }
  out.reachable = !rtts.empty();
  out.rtt_ms = median(std::move(rtts));
  return out;
}

}  // namespace ipscope::probes
