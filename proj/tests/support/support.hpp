#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ipscope/config.hpp"
#include "ipscope/engine.hpp"
#include "ipscope/service.hpp"
#include "ipscope/users.hpp"
#include "ipscope/model.hpp"
#include "ipscope/socket.hpp"

namespace httplib {
class Server;
}

namespace testsupport {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string write(const std::string& name, const std::string& content) const;

 private:
  std::filesystem::path path_;
};

/// UDP (and TCP, same port) DNS server on 127.0.0.1 answering from a script.
class MockDns {
 public:
  struct Reply {
    int rcode = 3;  ///< NXDOMAIN by default
    std::vector<ipscope::IpAddress> a;
    bool drop = false;      ///< never answer (client times out)
    bool truncate = false;  ///< set TC over UDP; full answer over TCP
  };
  using Script = std::function<Reply(const std::string& qname)>;

  explicit MockDns(Script script);
  ~MockDns();

  std::uint16_t port() const { return port_; }
  std::vector<std::string> queries() const;
  std::size_t tcp_queries() const { return tcp_count_.load(); }

 private:
  void serve_udp();
  void serve_tcp();

  Script script_;
  ipscope::net::Socket udp_;
  ipscope::net::Socket tcp_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> tcp_count_{0};
  mutable std::mutex mu_;
  std::vector<std::string> queries_;
  std::thread udp_thread_;
  std::thread tcp_thread_;
};

/// One scripted WHOIS server: every query gets `response`, then close.
class MockWhois {
 public:
  explicit MockWhois(std::string response);
  ~MockWhois();

  std::uint16_t port() const { return port_; }
  std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }
  std::vector<std::string> queries() const;

 private:
  void serve();

  std::string response_;
  ipscope::net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  mutable std::mutex mu_;
  std::vector<std::string> queries_;
  std::thread thread_;
};

/// AbuseIPDB-shaped mock provider over HTTP.
class MockProvider {
 public:
  struct Answer {
    bool proxy = false;
    bool vpn = false;
    bool bot = false;
    bool tor = false;
    int score = 0;
  };
  using Script = std::function<Answer(const std::string& ip)>;

  MockProvider(std::string id, Script script);
  ~MockProvider();

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  /// Adapter JSON mapping flags for tor/vpn/proxy/bot and the score for threat.
  ipscope::json adapter(const std::string& key_env = "") const;
  std::size_t calls() const { return calls_.load(); }
  /// Extra latency before every answer.
  void set_delay_ms(int ms) { delay_ms_.store(ms); }
  /// Status code to return instead of a body.
  void set_status(int status) { status_.store(status); }
  std::optional<std::string> last_key_header() const;
  /// Reports attached to every answer.
  void set_reports(ipscope::json reports);

 private:
  std::string id_;
  Script script_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<int> delay_ms_{0};
  std::atomic<int> status_{200};
  mutable std::mutex mu_;
  std::optional<std::string> key_header_;
  ipscope::json reports_ = ipscope::json::array();
};

/// A port nobody listens on (bound and closed again).
std::uint16_t closed_port();

/// A loopback TCP listener that accepts and holds connections.
class Listener {
 public:
  explicit Listener(std::uint16_t port = 0);
  ~Listener();
  std::uint16_t port() const { return port_; }
  bool ok() const { return sock_.valid(); }

 private:
  ipscope::net::Socket sock_;
  std::uint16_t port_ = 0;
};

/// Loopback port whose accept queue is full, so new connects time out.
class BlackholePort {
 public:
  BlackholePort();
  std::uint16_t port() const { return port_; }
  bool ok() const { return ok_; }

 private:
  ipscope::net::Socket listener_;
  std::vector<ipscope::net::Socket> fillers_;
  std::uint16_t port_ = 0;
  bool ok_ = false;
};

/// Sets an environment variable for the lifetime of the object.
class ScopedEnv {
 public:
  ScopedEnv(std::string name, const std::string& value);
  ~ScopedEnv();

 private:
  std::string name_;
  std::optional<std::string> old_;
};

/// Datasets on disk, mock providers and a one-zone DNS blocklist, all local.
/// Geo covers 192.0.2.0/24 (US) and 198.51.100.0/24 (DE); 192.0.2.7 is a
/// Tor exit, 198.51.100.0/24 a VPN range, 203.0.113.0/24 a datacenter range
/// and 192.0.2.66 is listed in bl.test. WHOIS goes to one scripted server.
class MockStack {
 public:
  explicit MockStack(int providers = 2);

  /// Config pointing at everything above, stores inside the temp dir.
  ipscope::Config config() const;
  /// The same config as a JSON document with relative paths.
  ipscope::json config_json() const;
  std::string write_config() const;

  std::size_t provider_calls() const;
  void set_provider_status(int status);

  TempDir dir;
  std::vector<std::unique_ptr<MockProvider>> providers;
  std::unique_ptr<MockDns> dns;
  std::unique_ptr<MockWhois> whois;
};

/// Answers of every MockStack provider.
MockProvider::Answer stack_answer(const std::string& ip);

/// Engine, user store and service bound to a free loopback port, plus a
/// small JSON client.
class ServiceHarness {
 public:
  struct Reply {
    int status = 0;
    std::string body;
    ipscope::json json() const;
  };

  ServiceHarness(ipscope::Config cfg, const ipscope::Clock& clock, ipscope::NetMeter* meter = nullptr);
  ~ServiceHarness();

  int port() const { return port_; }
  /// `token` empty sends no Authorization header.
  Reply get(const std::string& path, const std::string& token = "") const;
  Reply post(const std::string& path, const ipscope::json& body, const std::string& token = "") const;
  /// Logs in and returns the session token; empty on failure.
  std::string login(const std::string& username, const std::string& password) const;

  ipscope::Engine engine;
  ipscope::users::UserStore users;

 private:
  ipscope::service::Service service_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace testsupport
