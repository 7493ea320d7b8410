#include "ipscope/service.hpp"

#include <httplib.h>

#include <chrono>

#include "ipscope/error.hpp"

namespace ipscope::service {

namespace {

thread_local std::chrono::steady_clock::time_point t_started;
thread_local std::string t_user;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, json{{"error", code}, {"message", message}});
}

void unauthorized(httplib::Response& res) {
  res.status = 401;
  res.set_content(kUnauthorizedBody, "application/json");
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  if (req.body.empty()) return json::object();
  auto doc = json::parse(req.body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    send_error(res, 400, "bad_request", "body must be a JSON object");
    return std::nullopt;
  }
  return doc;
}

int status_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::parse:
    case ErrorCode::invalid_argument:
    case ErrorCode::unsupported_target:
    case ErrorCode::unknown_port_set: return 400;
    case ErrorCode::consent_required: return 403;
    case ErrorCode::unknown_dataset: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::fetch:
    case ErrorCode::format:
    case ErrorCode::io: return 502;
    default: return 500;
  }
}

json user_json(const users::User& u) {
  return json{{"id", u.id},
              {"username", u.username},
              {"role", users::to_string(u.role)},
              {"totp_enrolled", u.totp_secret.has_value()},
              {"created_at", format_rfc3339(u.created_at)}};
}

json token_json(const users::IssuedToken& t) {
  json scopes = json::array();
  for (auto s : t.scopes) scopes.push_back(users::to_string(s));
  return json{{"token", t.token},
              {"token_id", t.token_id},
              {"expires_at", t.expires_at ? json(format_rfc3339(*t.expires_at)) : json(nullptr)},
              {"scopes", scopes}};
}

}  // namespace

Service::Service(Engine& engine, users::UserStore& users, std::ostream* log)
    : engine_(engine), users_(users), log_(log), server_(std::make_unique<httplib::Server>()) {
  install(*server_);
}

Service::~Service() { stop(); }

std::optional<users::Principal> Service::principal(const std::string& auth_header) const {
  constexpr std::string_view prefix = "Bearer ";
  if (auth_header.size() <= prefix.size() || auth_header.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
  return users_.authenticate(std::string_view(auth_header).substr(prefix.size()));
}

void Service::log_request(const std::string& method, const std::string& path, int status, const std::string& user,
                          double ms) {
  if (!log_) return;
  const json line{{"ts", format_rfc3339(engine_.clock().now())},
                  {"method", method},
                  {"path", path},
                  {"status", status},
                  {"user", user.empty() ? json(nullptr) : json(user)},
                  {"duration_ms", ms}};
  std::lock_guard lock(log_mu_);
  *log_ << line.dump() << '\n';
  log_->flush();
}

void Service::install(httplib::Server& srv) {
  // Everything under /api/v1 except login needs a valid token, including
  // paths that do not exist, so probing reveals nothing.
  srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    t_started = std::chrono::steady_clock::now();
    t_user.clear();
    if (req.path.rfind("/api/v1/", 0) != 0 && req.path != "/api/v1") return httplib::Server::HandlerResponse::Unhandled;
    if (req.path == "/api/v1/auth/login") return httplib::Server::HandlerResponse::Unhandled;
    auto p = principal(req.get_header_value("Authorization"));
    if (!p) {
      unauthorized(res);
      return httplib::Server::HandlerResponse::Handled;
    }
    t_user = p->user.username;
    return httplib::Server::HandlerResponse::Unhandled;
  });

  srv.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_started).count();
    log_request(req.method, req.path, res.status, t_user, ms);
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, status_for(e), to_string(e.code()), e.what());
    } catch (const std::exception&) {
      send_error(res, 500, "internal_error", "internal error");
    }
  });

  // Handlers re-read the principal; the pre-routing check already passed.
  auto require = [this](const httplib::Request& req, httplib::Response& res,
                        std::optional<users::Scope> scope) -> std::optional<users::Principal> {
    auto p = principal(req.get_header_value("Authorization"));
    if (!p) {
      unauthorized(res);
      return std::nullopt;
    }
    if (scope && !p->scopes.contains(*scope)) {
      send_error(res, 403, "forbidden", std::string("token lacks the ") + std::string(users::to_string(*scope)) +
                                            " scope");
      return std::nullopt;
    }
    return p;
  };

  srv.Post("/api/v1/analyze", [this, require](const httplib::Request& req, httplib::Response& res) {
    auto p = require(req, res, users::Scope::analyze);
    if (!p) return;
    auto body = parse_body(req, res);
    if (!body) return;

    AnalyzeRequest ar;
    try {
      ar.target = parse_target(body->value("target", ""));
      for (const auto& f : body->value("features", json::array())) {
        auto kind = feature_from_string(f.is_string() ? f.get<std::string>() : std::string());
        if (!kind) {
          send_error(res, 400, "invalid_argument", "unknown feature: " + f.dump());
          return;
        }
        ar.features.insert(*kind);
      }
    } catch (const Error& e) {
      send_error(res, 400, to_string(e.code()), e.what());
      return;
    }
    ar.allow_stale = body->value("allow_stale", true);
    ar.force_refresh = body->value("force_refresh", false);
    ar.user_id = p->user.id;

    const bool wants_probe = ar.features.contains(FeatureKind::portscan) || ar.features.contains(FeatureKind::liveness);
    if (wants_probe && !p->scopes.contains(users::Scope::scan)) {
      send_error(res, 403, "forbidden", "active probes need the scan scope");
      return;
    }
    ar.consent = wants_probe && body->value("i_own_this", false);

    // Header analysis only means something when the target is the caller.
    if (ar.target.is_ip() && ar.target.canonical_text() == req.remote_addr) {
      detectors::HeaderMap headers;
      for (const auto& [k, v] : req.headers) {
        if (k != "Authorization") headers.emplace_back(k, v);
      }
      ar.headers = std::move(headers);
    }

    try {
      auto outcome = engine_.analyze(ar);
      send_json(res, outcome.total_failure ? 502 : 200, json(outcome.report));
    } catch (const ConsentRequired& e) {
      send_error(res, 403, "consent_required", e.what());
    }
  });

  srv.Get("/api/v1/history", [this, require](const httplib::Request& req, httplib::Response& res) {
    auto p = require(req, res, std::nullopt);
    if (!p) return;
    std::optional<std::string> target;
    if (req.has_param("target") && !req.get_param_value("target").empty()) {
      try {
        target = parse_target(req.get_param_value("target")).canonical_text();
      } catch (const Error& e) {
        send_error(res, 400, to_string(e.code()), e.what());
        return;
      }
    }
    int limit = 50;
    if (req.has_param("limit")) {
      try {
        limit = std::stoi(req.get_param_value("limit"));
      } catch (const std::exception&) {
        limit = 0;
      }
    }
    if (limit < 1 || limit > 1000) {
      send_error(res, 400, "invalid_argument", "limit must be in 1..1000");
      return;
    }
    json out = json::array();
    for (const auto& e : engine_.store().history(target, limit, p->user.id)) out.push_back(cache::to_json(e));
    send_json(res, 200, out);
  });

  srv.Post("/api/v1/auth/login", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("username") || !body.contains("password") ||
        !body["username"].is_string() || !body["password"].is_string()) {
      unauthorized(res);
      return;
    }
    std::optional<std::string> code;
    if (body.contains("totp_code") && body["totp_code"].is_string()) code = body["totp_code"].get<std::string>();
    auto token = users_.login(body["username"].get<std::string>(), body["password"].get<std::string>(), code,
                              engine_.config().session_ttl);
    if (!token) {
      unauthorized(res);
      return;
    }
    t_user = body["username"].get<std::string>();
    send_json(res, 200, token_json(*token));
  });

  srv.Post("/api/v1/auth/totp/enroll", [this, require](const httplib::Request& req, httplib::Response& res) {
    auto p = require(req, res, std::nullopt);
    if (!p) return;
    const auto e = users_.enroll_totp(p->user.id);
    send_json(res, 200, json{{"secret", e.secret}, {"otpauth_uri", e.otpauth_uri}});
  });

  srv.Post("/api/v1/auth/totp/verify", [this, require](const httplib::Request& req, httplib::Response& res) {
    auto p = require(req, res, std::nullopt);
    if (!p) return;
    auto body = parse_body(req, res);
    if (!body) return;
    const auto code = body->value("code", std::string());
    if (!users_.verify_totp(p->user.id, code)) {
      send_error(res, 400, "invalid_code", "code not accepted; enrollment still pending");
      return;
    }
    send_json(res, 200, json{{"enrolled", true}});
  });

  srv.Get("/api/v1/me", [require](const httplib::Request& req, httplib::Response& res) {
    auto p = require(req, res, std::nullopt);
    if (!p) return;
    auto j = user_json(p->user);
    json scopes = json::array();
    for (auto s : p->scopes) scopes.push_back(users::to_string(s));
    j["scopes"] = scopes;
    send_json(res, 200, j);
  });

  srv.Get("/api/v1/datasets", [this, require](const httplib::Request& req, httplib::Response& res) {
    if (!require(req, res, users::Scope::admin)) return;
    send_json(res, 200, json(engine_.registry().manifests()));
  });

  srv.Post(R"(/api/v1/datasets/([A-Za-z0-9_.-]+)/refresh)",
           [this, require](const httplib::Request& req, httplib::Response& res) {
             if (!require(req, res, users::Scope::admin)) return;
             auto body = parse_body(req, res);
             if (!body) return;
             const std::string id = req.matches[1];
             const auto source = body->value("source_uri", std::string());
             const auto r = engine_.registry().refresh_dataset(id, source, &engine_.meter());
             send_json(res, 200,
                       json{{"id", r.id},
                            {"old_count", r.old_count},
                            {"new_count", r.new_count},
                            {"loaded_at", format_rfc3339(r.loaded_at)}});
           });

  srv.Post("/api/v1/users", [this, require](const httplib::Request& req, httplib::Response& res) {
    if (!require(req, res, users::Scope::admin)) return;
    auto body = parse_body(req, res);
    if (!body) return;
    const auto role = users::role_from_string(body->value("role", std::string("analyst")));
    if (!role) {
      send_error(res, 400, "invalid_argument", "role must be admin or analyst");
      return;
    }
    const auto u = users_.add_user(body->value("username", std::string()), body->value("password", std::string()),
                                   *role);
    send_json(res, 201, user_json(u));
  });

  srv.Post("/api/v1/tokens", [this, require](const httplib::Request& req, httplib::Response& res) {
    auto p = require(req, res, std::nullopt);
    if (!p) return;
    auto body = parse_body(req, res);
    if (!body) return;
    users::Scopes scopes;
    for (const auto& s : body->value("scopes", json::array({"analyze"}))) {
      auto sc = users::scope_from_string(s.is_string() ? s.get<std::string>() : std::string());
      if (!sc) {
        send_error(res, 400, "invalid_argument", "unknown scope: " + s.dump());
        return;
      }
      scopes.insert(*sc);
    }
    std::optional<Timestamp> expires;
    if (body->contains("expires_in_s")) {
      expires = engine_.clock().now() + std::chrono::seconds((*body)["expires_in_s"].get<std::int64_t>());
    }
    send_json(res, 201, token_json(users_.create_token(p->user.id, scopes, expires)));
  });

  if (!engine_.config().console_dir.empty()) srv.set_mount_point("/", engine_.config().console_dir);
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

void Service::wait_until_ready() { server_->wait_until_ready(); }

}  // namespace ipscope::service
