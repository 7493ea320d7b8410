#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>

#include "ipscope/engine.hpp"
#include "ipscope/users.hpp"

namespace httplib {
class Server;
}

namespace ipscope::service {

/// Body of every authentication failure, whatever the cause.
inline constexpr const char* kUnauthorizedBody = R"({"error":"unauthorized"})";

/// JSON-over-HTTP front end under /api/v1.
class Service {
 public:
  /// `log` receives one JSON object per request; null disables logging.
  Service(Engine& engine, users::UserStore& users, std::ostream* log = nullptr);
  ~Service();

  /// Routes plus the static console when configured.
  void install(httplib::Server& server);

  /// Binds `host:port`; port 0 picks a free one. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Serves on an earlier bind(). Blocks until stop().
  void run();
  void stop();
  /// Blocks until the server is accepting connections.
  void wait_until_ready();

 private:
  std::optional<users::Principal> principal(const std::string& auth_header) const;
  void log_request(const std::string& method, const std::string& path, int status, const std::string& user,
                   double ms);

  Engine& engine_;
  users::UserStore& users_;
  std::ostream* log_;
  std::mutex log_mu_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace ipscope::service
