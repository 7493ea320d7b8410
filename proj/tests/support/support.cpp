#include "support.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <stdexcept>

#include <httplib.h>

#include "ipscope/dns.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using ipscope::json;
using ipscope::net::Socket;

namespace {

Socket bind_loopback(int type, std::uint16_t port, std::uint16_t& bound) {
  Socket s(::socket(AF_INET, type | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw std::runtime_error("socket failed");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) return Socket{};
  socklen_t len = sizeof sa;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sa), &len);
  bound = ntohs(sa.sin_port);
  return s;
}

bool readable(int fd, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  return ::poll(&p, 1, timeout_ms) > 0;
}

std::string read_line(int fd) {
  std::string line;
  char c = 0;
  while (line.size() < 4096 && readable(fd, 2000) && ::recv(fd, &c, 1, 0) == 1) {
    if (c == '\n') break;
    line.push_back(c);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool read_exact(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    if (!readable(fd, 2000)) return false;
    const auto r = ::recv(fd, buf + got, n - got, 0);
    if (r <= 0) return false;
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int fd, const void* data, std::size_t n) {
  const auto* p = static_cast<const char*>(data);
  while (n > 0) {
    const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w <= 0) return;
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

}  // namespace

TempDir::TempDir() {
  std::random_device rd;
  for (int i = 0; i < 100; ++i) {
    auto candidate = fs::temp_directory_path() / ("ipscope-test-" + std::to_string(rd()));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string TempDir::write(const std::string& name, const std::string& content) const {
  const auto p = path_ / name;
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
  return p.string();
}

MockDns::MockDns(Script script) : script_(std::move(script)) {
  for (int attempt = 0; attempt < 20 && !tcp_.valid(); ++attempt) {
    udp_ = bind_loopback(SOCK_DGRAM, 0, port_);
    std::uint16_t tcp_port = 0;
    tcp_ = bind_loopback(SOCK_STREAM, port_, tcp_port);
  }
  if (!udp_.valid() || !tcp_.valid()) throw std::runtime_error("MockDns bind failed");
  ::listen(tcp_.fd(), 16);
  udp_thread_ = std::thread([this] { serve_udp(); });
  tcp_thread_ = std::thread([this] { serve_tcp(); });
}

MockDns::~MockDns() {
  stop_ = true;
  udp_thread_.join();
  tcp_thread_.join();
}

std::vector<std::string> MockDns::queries() const {
  std::lock_guard lock(mu_);
  return queries_;
}

void MockDns::serve_udp() {
  std::uint8_t buf[1500];
  while (!stop_) {
    if (!readable(udp_.fd(), 50)) continue;
    sockaddr_storage from{};
    socklen_t len = sizeof from;
    const auto n = ::recvfrom(udp_.fd(), buf, sizeof buf, 0, reinterpret_cast<sockaddr*>(&from), &len);
    if (n <= 0) continue;
    auto name = ipscope::dns::parse_query_name(buf, static_cast<std::size_t>(n));
    if (!name) continue;
    {
      std::lock_guard lock(mu_);
      queries_.push_back(*name);
    }
    const Reply reply = script_(*name);
    if (reply.drop) continue;
    auto out = reply.truncate
                   ? ipscope::dns::build_response(buf, static_cast<std::size_t>(n), reply.rcode, {}, true)
                   : ipscope::dns::build_response(buf, static_cast<std::size_t>(n), reply.rcode, reply.a);
    ::sendto(udp_.fd(), out.data(), out.size(), 0, reinterpret_cast<sockaddr*>(&from), len);
  }
}

void MockDns::serve_tcp() {
  while (!stop_) {
    if (!readable(tcp_.fd(), 50)) continue;
    Socket conn(::accept4(tcp_.fd(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!conn.valid()) continue;
    std::uint8_t len_buf[2];
    if (!read_exact(conn.fd(), len_buf, 2)) continue;
    const std::size_t len = (std::size_t{len_buf[0]} << 8) | len_buf[1];
    std::vector<std::uint8_t> query(len);
    if (!read_exact(conn.fd(), query.data(), len)) continue;
    auto name = ipscope::dns::parse_query_name(query.data(), query.size());
    if (!name) continue;
    ++tcp_count_;
    const Reply reply = script_(*name);
    if (reply.drop) continue;
    auto out = ipscope::dns::build_response(query.data(), query.size(), reply.rcode, reply.a);
    const std::uint8_t prefix[2] = {static_cast<std::uint8_t>(out.size() >> 8),
                                    static_cast<std::uint8_t>(out.size() & 0xff)};
    write_all(conn.fd(), prefix, 2);
    write_all(conn.fd(), out.data(), out.size());
  }
}

MockWhois::MockWhois(std::string response) : response_(std::move(response)) {
  listener_ = bind_loopback(SOCK_STREAM, 0, port_);
  if (!listener_.valid()) throw std::runtime_error("MockWhois bind failed");
  ::listen(listener_.fd(), 16);
  thread_ = std::thread([this] { serve(); });
}

MockWhois::~MockWhois() {
  stop_ = true;
  thread_.join();
}

std::vector<std::string> MockWhois::queries() const {
  std::lock_guard lock(mu_);
  return queries_;
}

void MockWhois::serve() {
  while (!stop_) {
    if (!readable(listener_.fd(), 50)) continue;
    Socket conn(::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!conn.valid()) continue;
    const std::string q = read_line(conn.fd());
    {
      std::lock_guard lock(mu_);
      queries_.push_back(q);
    }
    write_all(conn.fd(), response_.data(), response_.size());
  }
}

MockProvider::MockProvider(std::string id, Script script)
    : id_(std::move(id)), script_(std::move(script)), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/check", [this](const httplib::Request& req, httplib::Response& res) {
    ++calls_;
    {
      std::lock_guard lock(mu_);
      if (req.has_header("Key")) key_header_ = req.get_header_value("Key");
    }
    if (const int d = delay_ms_.load(); d > 0) std::this_thread::sleep_for(std::chrono::milliseconds(d));
    if (const int st = status_.load(); st != 200) {
      res.status = st;
      res.set_content(R"({"errors":[{"detail":"mock failure"}]})", "application/json");
      return;
    }
    const std::string ip = req.get_param_value("ipAddress");
    const Answer a = script_(ip);
    json reports;
    {
      std::lock_guard lock(mu_);
      reports = reports_;
    }
    json body = {{"data",
                  {{"ipAddress", ip},
                   {"abuseConfidenceScore", a.score},
                   {"isProxy", a.proxy},
                   {"isVpn", a.vpn},
                   {"isBot", a.bot},
                   {"isTor", a.tor},
                   {"isp", "Mock ISP"},
                   {"totalReports", reports.size()},
                   {"reports", reports}}}};
    res.set_content(body.dump(), "application/json");
  });
  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("MockProvider bind failed");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

MockProvider::~MockProvider() {
  server_->stop();
  thread_.join();
}

json MockProvider::adapter(const std::string& key_env) const {
  json j = {{"id", id_},
            {"base_url", base_url()},
            {"endpoints", {{"check", "/check"}}},
            {"timeout_ms", 2000},
            {"field_map",
             {{"tor", "/data/isTor"},
              {"vpn", "/data/isVpn"},
              {"proxy", "/data/isProxy"},
              {"bot", "/data/isBot"},
              {"threat", {{"path", "/data/abuseConfidenceScore"}, {"type", "score"}}}}},
            {"abuse", json::object()}};
  if (!key_env.empty()) j["api_key_env"] = key_env;
  return j;
}

std::optional<std::string> MockProvider::last_key_header() const {
  std::lock_guard lock(mu_);
  return key_header_;
}

void MockProvider::set_reports(json reports) {
  std::lock_guard lock(mu_);
  reports_ = std::move(reports);
}

std::uint16_t closed_port() {
  std::uint16_t port = 0;
  Socket s = bind_loopback(SOCK_STREAM, 0, port);
  return port;
}

Listener::Listener(std::uint16_t port) {
  sock_ = bind_loopback(SOCK_STREAM, port, port_);
  if (sock_.valid() && ::listen(sock_.fd(), 128) != 0) sock_.reset();
}

Listener::~Listener() = default;

BlackholePort::BlackholePort() {
  listener_ = bind_loopback(SOCK_STREAM, 0, port_);
  if (!listener_.valid() || ::listen(listener_.fd(), 0) != 0) return;
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port_);
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  for (int i = 0; i < 16; ++i) {
    Socket c(::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
    ::connect(c.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa);
    pollfd p{c.fd(), POLLOUT, 0};
    const bool done = ::poll(&p, 1, 200) > 0;
    fillers_.push_back(std::move(c));
    if (!done) {
      ok_ = true;
      return;
    }
  }
}

ScopedEnv::ScopedEnv(std::string name, const std::string& value) : name_(std::move(name)) {
  if (const char* v = std::getenv(name_.c_str())) old_ = v;
  ::setenv(name_.c_str(), value.c_str(), 1);
}

ScopedEnv::~ScopedEnv() {
  if (old_) {
    ::setenv(name_.c_str(), old_->c_str(), 1);
  } else {
    ::unsetenv(name_.c_str());
  }
}

MockProvider::Answer stack_answer(const std::string& ip) {
  MockProvider::Answer a;
  a.tor = ip == "192.0.2.7";
  a.vpn = ip.rfind("198.51.100.", 0) == 0;
  a.proxy = ip.rfind("203.0.113.", 0) == 0;
  a.bot = ip == "192.0.2.66";
  a.score = ip == "192.0.2.66" ? 90 : 5;
  return a;
}

MockStack::MockStack(int n) {
  dir.write("geo.csv",
            "cidr,country,city,lat,lon\n"
            "192.0.2.0/24,US,Springfield,39.8,-89.6\n"
            "198.51.100.0/24,DE,Berlin,52.5,13.4\n"
            "203.0.113.0/24,NL,Amsterdam,52.4,4.9\n");
  dir.write("tor_exits.txt", "192.0.2.7\n");
  dir.write("vpn_ranges.json", R"([{"prefix":"198.51.100.0/24","label":"ExampleVPN"}])");
  dir.write("dc_ranges.json", R"([{"prefix":"203.0.113.0/24","label":"ExampleCloud"}])");
  for (int i = 0; i < n; ++i) providers.push_back(std::make_unique<MockProvider>("mock" + std::to_string(i), stack_answer));
  dns = std::make_unique<MockDns>([](const std::string& qname) {
    MockDns::Reply r;
    if (qname == "66.2.0.192.bl.test") r = {0, {ipscope::IpAddress::v4(0x7f000002)}};
    if (qname == "tor.example.test") r = {0, {ipscope::IpAddress::v4(0xc0000207)}};
    return r;
  });
  whois = std::make_unique<MockWhois>("Domain Name: EXAMPLE.TEST\nRegistrar: Example Registrar\n"
                                      "Name Server: NS1.EXAMPLE.TEST\nName Server: ns2.example.test\n");
}

ipscope::json MockStack::config_json() const {
  using ipscope::json;
  json provs = json::array();
  for (const auto& p : providers) provs.push_back(p->adapter());
  return json{{"store_path", "cache.db"},
              {"users_path", "users.db"},
              {"datasets",
               {{{"id", "geo"}, {"kind", "geo"}, {"path", "geo.csv"}},
                {{"id", "tor_exits"}, {"kind", "ip_list"}, {"path", "tor_exits.txt"}},
                {{"id", "vpn_ranges"}, {"kind", "cidr_ranges"}, {"path", "vpn_ranges.json"}},
                {{"id", "dc_ranges"}, {"kind", "cidr_ranges"}, {"path", "dc_ranges.json"}}}},
              {"providers", provs},
              {"dnsbl_zones", {{{"zone", "bl.test"}}}},
              {"dns", {{"server", "127.0.0.1"}, {"port", dns->port()}, {"timeout_ms", 500}}},
              {"whois",
               {{"root_server", "whois.mock.test"},
                {"timeout_ms", 2000},
                {"server_overrides", {{"whois.mock.test", whois->endpoint()}}}}},
              {"probes", {{"scan_timeout_ms", 300}, {"ping_attempts", 1}, {"ping_timeout_ms", 300}}}};
}

ipscope::Config MockStack::config() const { return ipscope::config_from_json(config_json(), dir.path().string()); }

std::string MockStack::write_config() const { return dir.write("ipscope.json", config_json().dump(2)); }

std::size_t MockStack::provider_calls() const {
  std::size_t n = 0;
  for (const auto& p : providers) n += p->calls();
  return n;
}

void MockStack::set_provider_status(int status) {
  for (auto& p : providers) p->set_status(status);
}

ipscope::json ServiceHarness::Reply::json() const { return ipscope::json::parse(body, nullptr, false); }

ServiceHarness::ServiceHarness(ipscope::Config cfg, const ipscope::Clock& clock, ipscope::NetMeter* meter)
    : engine(cfg, clock, meter),
      users(cfg.users_path, clock, ipscope::auth::ScryptParams{1024, 8, 1}),
      service_(engine, users) {
  port_ = service_.bind("127.0.0.1", 0);
  if (port_ <= 0) throw std::runtime_error("service bind failed");
  thread_ = std::thread([this] { service_.run(); });
  service_.wait_until_ready();
}

ServiceHarness::~ServiceHarness() {
  service_.stop();
  if (thread_.joinable()) thread_.join();
}

namespace {

httplib::Headers auth_headers(const std::string& token) {
  if (token.empty()) return {};
  return {{"Authorization", "Bearer " + token}};
}

ServiceHarness::Reply to_reply(const httplib::Result& r) {
  if (!r) return {};
  return {r->status, r->body};
}

}  // namespace

ServiceHarness::Reply ServiceHarness::get(const std::string& path, const std::string& token) const {
  httplib::Client cli("127.0.0.1", port_);
  cli.set_read_timeout(30, 0);
  return to_reply(cli.Get(path, auth_headers(token)));
}

ServiceHarness::Reply ServiceHarness::post(const std::string& path, const ipscope::json& body,
                                           const std::string& token) const {
  httplib::Client cli("127.0.0.1", port_);
  cli.set_read_timeout(30, 0);
  return to_reply(cli.Post(path, auth_headers(token), body.dump(), "application/json"));
}

std::string ServiceHarness::login(const std::string& username, const std::string& password) const {
  const auto r = post("/api/v1/auth/login", {{"username", username}, {"password", password}});
  if (r.status != 200) return {};
  return r.json().value("token", std::string());
}

}  // namespace testsupport
