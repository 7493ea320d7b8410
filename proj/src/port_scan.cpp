#include "ipscope/port_scan.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <deque>

#include "ipscope/error.hpp"
#include "ipscope/socket.hpp"

namespace ipscope::probes {

using namespace std::chrono;

IpAddress resolve_target(const Target& target, NetMeter* meter) {
  if (auto ip = target.address()) return *ip;
  meter_or_default(meter).begin(Channel::dns);
  const auto found = net::resolve_host(target.canonical_text());
  if (found.empty()) throw ResolveError("cannot resolve " + target.canonical_text());
  // Prefer IPv4; most probe paths (ICMP fallback, DNSBL) are v4-first.
  for (const auto& ip : found) {
    if (ip.is_v4()) return ip;
  }
  return found.front();
}

bool needs_consent(const IpAddress& ip) {
  const auto scope = classify_scope(ip);
  return scope != AddressScope::loopback && scope != AddressScope::private_use;
}

void require_consent(const IpAddress& ip, bool consent) {
  if (!consent && needs_consent(ip)) {
    throw ConsentRequired("probing " + ip.to_string() + " requires --i-own-this");
  }
}

std::vector<std::uint16_t> default_port_set(std::string_view name) {
  if (name == "top20") {
    return {21, 22, 23, 25, 53, 80, 110, 111, 135, 139, 143, 443, 445, 993, 995, 1723, 3306, 3389, 5900, 8080};
  }
  if (name == "proxy") return {1080, 3128, 8080, 8888};
  if (name == "full_1_1024" || name == "1-1024") {
    std::vector<std::uint16_t> out(1024);
    for (std::uint16_t i = 0; i < 1024; ++i) out[i] = static_cast<std::uint16_t>(i + 1);
    return out;
  }
  throw UnknownPortSet("unknown port set: " + std::string(name));
}

namespace {

std::uint16_t parse_port(std::string_view s) {
  unsigned v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || v < 1 || v > 65535) {
    throw InvalidArgument("bad port: '" + std::string(s) + "'");
  }
  return static_cast<std::uint16_t>(v);
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

std::vector<std::uint16_t> parse_port_spec(std::string_view spec) {
  std::vector<std::uint16_t> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    auto comma = spec.find(',', pos);
    if (comma == std::string_view::npos) comma = spec.size();
    const auto item = spec.substr(pos, comma - pos);
    pos = comma + 1;
    if (item.empty()) throw InvalidArgument("empty item in port list");
    const auto dash = item.find('-');
    if (all_digits(item)) {
      out.push_back(parse_port(item));
    } else if (dash != std::string_view::npos && all_digits(item.substr(0, dash)) &&
               all_digits(item.substr(dash + 1))) {
      const auto lo = parse_port(item.substr(0, dash));
      const auto hi = parse_port(item.substr(dash + 1));
      if (lo > hi) throw InvalidArgument("descending port range: " + std::string(item));
      for (unsigned p = lo; p <= hi; ++p) out.push_back(static_cast<std::uint16_t>(p));
    } else {
      const auto named = default_port_set(item);
      out.insert(out.end(), named.begin(), named.end());
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

struct Pending {
  std::uint16_t port;
  net::Socket socket;
  steady_clock::time_point started;
};

PortState state_for(net::ConnectStatus s) {
  switch (s) {
    case net::ConnectStatus::connected: return PortState::open;
    case net::ConnectStatus::refused: return PortState::closed;
    default: return PortState::filtered;
  }
}

}  // namespace

PortScanResult scan_ports(const Target& target, const std::vector<std::uint16_t>& ports, const ScanOptions& opts,
                          const Clock& clock, NetMeter* meter) {
  if (ports.empty()) throw InvalidArgument("port list is empty");
  if (std::find(ports.begin(), ports.end(), 0) != ports.end()) throw InvalidArgument("port 0 is not scannable");
  if (opts.parallelism < 1 || opts.parallelism > 1024) throw InvalidArgument("parallelism must be in 1..1024");
  if (opts.timeout_ms < 1) throw InvalidArgument("timeout_ms must be positive");

  auto& m = meter_or_default(meter);
  const IpAddress ip = resolve_target(target, &m);
  require_consent(ip, opts.consent);

  PortScanResult result;
  result.target = target;
  result.params = PortScanParams{opts.timeout_ms, opts.parallelism, opts.port_set_name};
  result.started_at = clock.now();

  std::vector<std::uint16_t> queue(ports);
  std::sort(queue.begin(), queue.end());
  queue.erase(std::unique(queue.begin(), queue.end()), queue.end());
  std::size_t next = 0;
  const auto timeout = milliseconds(opts.timeout_ms);
  const std::size_t cap = static_cast<std::size_t>(opts.parallelism);

  std::vector<Pending> inflight;
  inflight.reserve(cap);
  auto report = [&] {
    if (opts.on_inflight) opts.on_inflight(inflight.size());
  };
  auto finish = [&](std::uint16_t port, net::ConnectStatus status, steady_clock::time_point started) {
    PortEntry e;
    e.port = port;
    e.state = state_for(status);
    if (e.state != PortState::filtered) e.latency_ms = net::elapsed_ms(started);
    result.entries.push_back(e);
  };

  std::vector<pollfd> fds;
  while (next < queue.size() || !inflight.empty()) {
    while (next < queue.size() && inflight.size() < cap) {
      const auto port = queue[next++];
      m.begin(Channel::tcp);
      bool immediate = false;
      int err = 0;
      const auto started = steady_clock::now();
      auto sock = net::start_connect(ip, port, immediate, err);
      if (immediate) {
        finish(port, net::classify_connect_errno(err), started);
        continue;
      }
      inflight.push_back(Pending{port, std::move(sock), started});
      report();
    }
    if (inflight.empty()) continue;

    const auto now = steady_clock::now();
    auto earliest = inflight.front().started;
    for (const auto& p : inflight) earliest = std::min(earliest, p.started);
    const auto wait = duration_cast<milliseconds>(earliest + timeout - now).count();

    fds.clear();
    for (const auto& p : inflight) fds.push_back(pollfd{p.socket.fd(), POLLOUT, 0});
    const int rc = ::poll(fds.data(), fds.size(), static_cast<int>(std::max<long long>(wait, 0)));
    if (rc < 0 && errno != EINTR) throw IoError("poll failed during port scan");

    const auto after = steady_clock::now();
    std::vector<Pending> still;
    still.reserve(inflight.size());
    for (std::size_t i = 0; i < inflight.size(); ++i) {
      auto& p = inflight[i];
      if (rc > 0 && fds[i].revents != 0) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(p.socket.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        finish(p.port, net::classify_connect_errno(err), p.started);
      } else if (after - p.started >= timeout) {
        finish(p.port, net::ConnectStatus::timeout, p.started);
      } else {
        still.push_back(std::move(p));
      }
    }
    const bool changed = still.size() != inflight.size();
    inflight = std::move(still);
    if (changed) report();
  }

  std::sort(result.entries.begin(), result.entries.end(),
            [](const PortEntry& a, const PortEntry& b) { return a.port < b.port; });
  result.finished_at = clock.now();
  return result;
}

}  // namespace ipscope::probes
