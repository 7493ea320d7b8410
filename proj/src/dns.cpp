#include "ipscope/dns.hpp"

#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <fstream>
#include <random>
#include <sstream>

#include "ipscope/error.hpp"
#include "ipscope/socket.hpp"

namespace ipscope::dns {

using namespace std::chrono;

namespace {

constexpr std::size_t kHeaderSize = 12;

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint16_t get16(const std::uint8_t* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }

// Reads a possibly compressed name starting at `pos`; advances `pos` past the
// in-place encoding.
std::optional<std::string> read_name(const std::uint8_t* data, std::size_t size, std::size_t& pos) {
  std::string name;
  std::size_t cur = pos;
  bool jumped = false;
  int hops = 0;
  while (true) {
    if (cur >= size) return std::nullopt;
    const std::uint8_t len = data[cur];
    if ((len & 0xc0) == 0xc0) {
      if (cur + 1 >= size || ++hops > 16) return std::nullopt;
      const std::size_t target = ((len & 0x3f) << 8) | data[cur + 1];
      if (!jumped) pos = cur + 2;
      jumped = true;
      cur = target;
      continue;
    }
    if (len & 0xc0) return std::nullopt;
    ++cur;
    if (len == 0) break;
    if (cur + len > size) return std::nullopt;
    if (!name.empty()) name += '.';
    name.append(reinterpret_cast<const char*>(data + cur), len);
    cur += len;
  }
  if (!jumped) pos = cur;
  return name;
}

std::uint16_t random_id() {
  static thread_local std::mt19937 rng{std::random_device{}()};
  return static_cast<std::uint16_t>(rng());
}

Answer to_answer(const ParsedResponse& r) {
  Answer a;
  a.rcode = r.rcode;
  a.addresses = r.a_records;
  switch (r.rcode) {
    case 0: a.status = Status::ok; break;
    case 3: a.status = Status::nxdomain; break;
    case 2: a.status = Status::servfail; break;
    default: a.status = Status::error; break;
  }
  return a;
}

}  // namespace

std::string_view to_string(Status s) noexcept {
  switch (s) {
    case Status::ok: return "ok";
    case Status::nxdomain: return "nxdomain";
    case Status::servfail: return "servfail";
    case Status::timeout: return "timeout";
    case Status::error: return "error";
  }
  return "error";
}

std::optional<ResolverConfig> system_resolver() {
  std::ifstream in("/etc/resolv.conf");
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key, value;
    ss >> key >> value;
    if (key != "nameserver") continue;
    if (auto ip = IpAddress::parse(value)) {
      ResolverConfig cfg;
      cfg.server = *ip;
      return cfg;
    }
  }
  return std::nullopt;
}

std::vector<std::uint8_t> encode_query(std::uint16_t id, std::string_view name, std::uint16_t qtype) {
  std::vector<std::uint8_t> out;
  put16(out, id);
  put16(out, 0x0100);  // RD
  put16(out, 1);
  put16(out, 0);
  put16(out, 0);
  put16(out, 0);
  std::size_t pos = 0;
  while (pos < name.size()) {
    auto dot = name.find('.', pos);
    if (dot == std::string_view::npos) dot = name.size();
    const auto label = name.substr(pos, dot - pos);
    if (label.empty() || label.size() > 63) throw InvalidArgument("bad DNS label in '" + std::string(name) + "'");
    out.push_back(static_cast<std::uint8_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
    pos = dot + 1;
  }
  out.push_back(0);
  put16(out, qtype);
  put16(out, 1);  // IN
  return out;
}

std::optional<ParsedResponse> parse_response(const std::uint8_t* data, std::size_t size) {
  if (size < kHeaderSize) return std::nullopt;
  ParsedResponse r;
  r.id = get16(data);
  const std::uint16_t flags = get16(data + 2);
  if (!(flags & 0x8000)) return std::nullopt;
  r.truncated = flags & 0x0200;
  r.rcode = flags & 0x000f;
  const std::uint16_t qd = get16(data + 4);
  const std::uint16_t an = get16(data + 6);
  std::size_t pos = kHeaderSize;
  for (std::uint16_t i = 0; i < qd; ++i) {
    auto name = read_name(data, size, pos);
    if (!name || pos + 4 > size) return std::nullopt;
    if (i == 0) r.question = *name;
    pos += 4;
  }
  for (std::uint16_t i = 0; i < an; ++i) {
    if (!read_name(data, size, pos) || pos + 10 > size) return std::nullopt;
    const std::uint16_t type = get16(data + pos);
    const std::uint16_t cls = get16(data + pos + 2);
    const std::uint16_t rdlen = get16(data + pos + 8);
    pos += 10;
    if (pos + rdlen > size) return std::nullopt;
    if (type == kTypeA && cls == 1 && rdlen == 4) {
      r.a_records.push_back(IpAddress::v4((std::uint32_t(data[pos]) << 24) | (std::uint32_t(data[pos + 1]) << 16) |
                                          (std::uint32_t(data[pos + 2]) << 8) | data[pos + 3]));
    }
    pos += rdlen;
  }
  return r;
}

std::optional<std::string> parse_query_name(const std::uint8_t* data, std::size_t size, std::uint16_t* id,
                                            std::uint16_t* qtype) {
  if (size < kHeaderSize || get16(data + 4) < 1) return std::nullopt;
  std::size_t pos = kHeaderSize;
  auto name = read_name(data, size, pos);
  if (!name || pos + 4 > size) return std::nullopt;
  if (id) *id = get16(data);
  if (qtype) *qtype = get16(data + pos);
  return name;
}

std::vector<std::uint8_t> build_response(const std::uint8_t* query, std::size_t size, int rcode,
                                         const std::vector<IpAddress>& a_records, bool truncated) {
  std::size_t pos = kHeaderSize;
  if (size < kHeaderSize || !read_name(query, size, pos) || pos + 4 > size) return {};
  const std::size_t question_end = pos + 4;

  std::vector<std::uint8_t> out;
  put16(out, get16(query));
  std::uint16_t flags = 0x8000 | 0x0100 | 0x0080 | static_cast<std::uint16_t>(rcode & 0xf);
  if (truncated) flags |= 0x0200;
  put16(out, flags);
  put16(out, 1);
  put16(out, truncated ? 0 : static_cast<std::uint16_t>(a_records.size()));
  put16(out, 0);
  put16(out, 0);
  out.insert(out.end(), query + kHeaderSize, query + question_end);
  if (!truncated) {
    for (const auto& ip : a_records) {
      put16(out, 0xc00c);
      put16(out, kTypeA);
      put16(out, 1);
      put16(out, 0);
      put16(out, 60);
      put16(out, 4);
      out.insert(out.end(), ip.bytes().begin(), ip.bytes().begin() + 4);
    }
  }
  return out;
}

Answer Client::query_a(std::string_view name) const {
  auto& meter = meter_or_default(meter_);
  meter.begin(Channel::dns);

  const std::uint16_t id = random_id();
  const auto query = encode_query(id, name, kTypeA);
  net::Socket s(::socket(cfg_.server.is_v4() ? AF_INET : AF_INET6, SOCK_DGRAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) return Answer{Status::error, -1, {}};

  sockaddr_storage sa;
  const socklen_t len = net::to_sockaddr(cfg_.server, cfg_.port, sa);
  if (::sendto(s.fd(), query.data(), query.size(), 0, reinterpret_cast<sockaddr*>(&sa), len) < 0) {
    return Answer{Status::error, -1, {}};
  }

  const auto deadline = steady_clock::now() + cfg_.timeout;
  std::uint8_t buf[4096];
  while (true) {
    const auto left = duration_cast<milliseconds>(deadline - steady_clock::now()).count();
    if (left <= 0) return Answer{Status::timeout, -1, {}};
    pollfd pfd{s.fd(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) return Answer{Status::timeout, -1, {}};
    if (rc < 0) return Answer{Status::error, -1, {}};
    const ssize_t n = ::recv(s.fd(), buf, sizeof buf, 0);
    if (n < 0) {
      // ICMP port unreachable surfaces here as ECONNREFUSED.
      if (errno == EINTR) continue;
      return Answer{Status::error, -1, {}};
    }
    auto parsed = parse_response(buf, static_cast<std::size_t>(n));
    if (!parsed || parsed->id != id) continue;
    if (parsed->truncated) return query_tcp(name, id);
    return to_answer(*parsed);
  }
}

Answer Client::query_tcp(std::string_view name, std::uint16_t id) const {
  meter_or_default(meter_).begin(Channel::dns);
  const auto deadline = steady_clock::now() + cfg_.timeout;
  auto conn = net::connect_with_timeout(cfg_.server, cfg_.port, cfg_.timeout);
  if (conn.status == net::ConnectStatus::timeout) return Answer{Status::timeout, -1, {}};
  if (conn.status != net::ConnectStatus::connected) return Answer{Status::error, -1, {}};

  const auto query = encode_query(id, name, kTypeA);
  std::string framed;
  framed.push_back(static_cast<char>(query.size() >> 8));
  framed.push_back(static_cast<char>(query.size() & 0xff));
  framed.append(reinterpret_cast<const char*>(query.data()), query.size());
  if (!net::send_all(conn.socket, framed, deadline)) return Answer{Status::timeout, -1, {}};

  bool timed_out = false;
  // Servers close after one answer on most stub setups; read the length
  // prefix and stop there if they keep the connection open.
  std::string data;
  while (true) {
    auto chunk = net::recv_to_eof(conn.socket, deadline, 65537, &timed_out);
    data += chunk;
    if (data.size() >= 2) {
      const std::size_t want = (static_cast<std::uint8_t>(data[0]) << 8) | static_cast<std::uint8_t>(data[1]);
      if (data.size() >= want + 2) {
        auto parsed = parse_response(reinterpret_cast<const std::uint8_t*>(data.data()) + 2, want);
        if (!parsed || parsed->id != id) return Answer{Status::error, -1, {}};
        return to_answer(*parsed);
      }
    }
    if (timed_out) return Answer{Status::timeout, -1, {}};
    if (chunk.empty()) return Answer{Status::error, -1, {}};
  }
}

std::string dnsbl_query_name(const IpAddress& ip, std::string_view zone) {
  if (!ip.is_v4()) throw UnsupportedTarget("DNSBL lookups support IPv4 only");
  const auto& b = ip.bytes();
  std::string out = std::to_string(b[3]) + "." + std::to_string(b[2]) + "." + std::to_string(b[1]) + "." +
                    std::to_string(b[0]);
  if (!zone.empty()) {
    out += '.';
    out += zone;
  }
  return out;
}

}  // namespace ipscope::dns
