#include "ipscope/cli.hpp"

#include <termios.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "ipscope/aggregator.hpp"
#include "ipscope/config.hpp"
#include "ipscope/engine.hpp"
#include "ipscope/error.hpp"
#include "ipscope/liveness.hpp"
#include "ipscope/port_scan.hpp"
#include "ipscope/service.hpp"
#include "ipscope/socket.hpp"
#include "ipscope/users.hpp"
#include "ipscope/whois.hpp"

namespace ipscope::cli {

namespace {

constexpr const char* kDot = "●";
constexpr const char* kCross = "✗";

std::string glyph(ResultVerdict v) {
  switch (v) {
    case ResultVerdict::positive: return kDot;
    case ResultVerdict::negative: return kCross;
    default: return "?";
  }
}

std::string glyph(Verdict v) {
  switch (v) {
    case Verdict::positive: return kDot;
    case Verdict::negative: return kCross;
    default: return "?";
  }
}

std::string pad(std::string s, std::size_t w) {
  // Glyphs are multibyte; count code points for alignment.
  std::size_t cols = 0;
  for (unsigned char c : s) cols += (c & 0xc0) != 0x80;
  if (cols < w) s.append(w - cols, ' ');
  return s;
}

std::string fmt_ms(double ms) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1) << ms << " ms";
  return o.str();
}

std::string default_read_secret(std::string_view prompt) {
  std::string line;
  if (::isatty(STDIN_FILENO)) {
    std::cerr << prompt << std::flush;
    termios old{};
    ::tcgetattr(STDIN_FILENO, &old);
    termios quiet = old;
    quiet.c_lflag &= ~static_cast<tcflag_t>(ECHO);
    ::tcsetattr(STDIN_FILENO, TCSANOW, &quiet);
    std::getline(std::cin, line);
    ::tcsetattr(STDIN_FILENO, TCSANOW, &old);
    std::cerr << '\n';
  } else {
    std::getline(std::cin, line);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::parse:
    case ErrorCode::invalid_argument:
    case ErrorCode::unsupported_target:
    case ErrorCode::unknown_port_set:
    case ErrorCode::unknown_dataset: return kUsage;
    case ErrorCode::consent_required: return kConsent;
    case ErrorCode::conflict: return kConflict;
    default: return kFailure;
  }
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  Env& env;
  bool json_mode = false;
  std::string config_path;

  Config config() const {
    const auto path = resolve_config_path(config_path.empty() ? std::nullopt : std::optional(config_path));
    return path ? load_config(*path) : Config{};
  }

  std::unique_ptr<Engine> engine() const {
    auto e = std::make_unique<Engine>(config(), *env.clock, env.meter);
    for (const auto& w : e->warnings()) err << "warning: " << w << '\n';
    return e;
  }

  void emit(const json& j) const { out << j.dump(2) << '\n'; }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int render_failure(const Context& ctx, const Error& e) {
  ctx.err << "error: " << e.what() << '\n';
  if (ctx.json_mode) ctx.emit(json{{"error", to_string(e.code())}, {"message", e.what()}});
  return exit_code_for(e);
}

// ---- commands --------------------------------------------------------------

struct AnalyzeArgs {
  std::string target;
  std::string features;
  bool offline = false;
  bool force_refresh = false;
  bool no_stale = false;
  bool consent = false;
};

int cmd_analyze(Context& ctx, const AnalyzeArgs& a) {
  AnalyzeRequest req;
  req.target = parse_target(a.target);
  if (!a.features.empty()) req.features = parse_feature_list(a.features);
  req.offline = a.offline;
  req.force_refresh = a.force_refresh;
  req.allow_stale = !a.no_stale;
  req.consent = a.consent;
  req.user_id = "cli";
  auto engine = ctx.engine();
  const auto outcome = engine->analyze(req);
  if (ctx.json_mode) {
    ctx.emit(json(outcome.report));
  } else {
    ctx.out << render_report(outcome.report);
  }
  if (outcome.total_failure) {
    ctx.err << "error: every requested feature failed\n";
    return kFailure;
  }
  for (auto f : outcome.failed) ctx.err << "warning: " << to_string(f) << " unavailable\n";
  return kOk;
}

struct ScanArgs {
  std::string target;
  std::string ports = "top20";
  int timeout_ms = 0;
  int parallelism = 0;
  bool consent = false;
};

int cmd_scan(Context& ctx, const ScanArgs& a) {
  const auto target = parse_target(a.target);
  const auto cfg = ctx.config();
  probes::ScanOptions opts;
  opts.timeout_ms = a.timeout_ms > 0 ? a.timeout_ms : cfg.probes.scan_timeout_ms;
  opts.parallelism = a.parallelism > 0 ? a.parallelism : cfg.probes.scan_parallelism;
  opts.port_set_name = a.ports;
  opts.consent = a.consent;
  const auto ports = probes::parse_port_spec(a.ports);
  const auto result = probes::scan_ports(target, ports, opts, *ctx.env.clock, ctx.env.meter);
  if (ctx.json_mode) {
    ctx.emit(json(result));
    return kOk;
  }
  ctx.out << "scan " << target.canonical_text() << "  " << result.entries.size() << " ports\n";
  ctx.out << pad("PORT", 8) << pad("STATE", 10) << "LATENCY\n";
  for (const auto& e : result.entries) {
    ctx.out << pad(std::to_string(e.port), 8) << pad(std::string(to_string(e.state)), 10)
            << (e.latency_ms ? fmt_ms(*e.latency_ms) : "-") << '\n';
  }
  return kOk;
}

struct PingArgs {
  std::string target;
  int attempts = 0;
  int timeout_ms = 0;
  bool tcp_only = false;
  bool consent = false;
};

int cmd_ping(Context& ctx, const PingArgs& a) {
  const auto target = parse_target(a.target);
  const auto cfg = ctx.config();
  probes::LivenessOptions opts;
  opts.attempts = a.attempts > 0 ? a.attempts : cfg.probes.ping_attempts;
  opts.timeout_ms = a.timeout_ms > 0 ? a.timeout_ms : cfg.probes.ping_timeout_ms;
  opts.allow_icmp = cfg.probes.allow_icmp && !a.tcp_only;
  opts.consent = a.consent;
  const auto r = probes::check_liveness(target, opts, ctx.env.meter);
  if (ctx.json_mode) {
    ctx.emit(json(r));
  } else {
    ctx.out << (r.reachable ? kDot : kCross) << ' ' << target.canonical_text() << ' '
            << (r.reachable ? "reachable" : "unreachable") << " via " << to_string(r.method);
    if (r.rtt_ms) ctx.out << ", median rtt " << fmt_ms(*r.rtt_ms);
    ctx.out << " (" << r.attempts << " attempts)\n";
  }
  return r.reachable ? kOk : kFailure;
}

struct WhoisArgs {
  std::string query;
  std::string server;
};

void print_whois(std::ostream& out, const WhoisRecord& w) {
  out << "query      " << w.queried << '\n';
  out << "servers    ";
  for (std::size_t i = 0; i < w.server_chain.size(); ++i) out << (i ? " -> " : "") << w.server_chain[i];
  out << '\n';
  out << "registrar  " << w.registrar.value_or("-") << '\n';
  out << "nameservers";
  if (w.nameservers.empty()) out << " -";
  for (const auto& ns : w.nameservers) out << ' ' << ns;
  out << '\n';
  auto date = [](const std::optional<Timestamp>& t) { return t ? format_rfc3339(*t) : std::string("-"); };
  out << "created    " << date(w.created) << '\n';
  out << "updated    " << date(w.updated) << '\n';
  out << "expires    " << date(w.expires) << '\n';
}

int cmd_whois(Context& ctx, const WhoisArgs& a) {
  const auto query = parse_target(a.query);
  auto opts = ctx.config().whois;
  if (!a.server.empty()) {
    const auto ep = net::Endpoint::parse(a.server, 43);
    opts.root_server = ep.host;
    if (ep.port != 43) opts.server_overrides[ep.host] = ep.to_string();
  }
  try {
    const auto rec = probes::whois_lookup(query, opts, ctx.env.meter);
    if (ctx.json_mode) {
      ctx.emit(json(rec));
    } else {
      print_whois(ctx.out, rec);
    }
    return kOk;
  } catch (const probes::ReferralLoop& e) {
    ctx.err << "error: " << e.what() << '\n';
    if (ctx.json_mode) {
      ctx.emit(json{{"error", "referral_loop"}, {"message", e.what()}, {"partial", json(e.partial())}});
    } else {
      print_whois(ctx.out, e.partial());
    }
    return kFailure;
  }
}

int cmd_blocklist(Context& ctx, const std::string& text) {
  const auto target = parse_target(text);
  if (target.kind() != TargetKind::ipv4) throw UnsupportedTarget("blocklist lookups need an IPv4 address");
  auto engine = ctx.engine();
  if (engine->config().dnsbl_zones.empty()) ctx.err << "warning: no DNSBL zones configured\n";
  const auto evidence =
      engine->detectors().check_blocklists(target, engine->config().dnsbl_zones, engine->resolver());
  const auto result = aggregator::confidence_score(evidence, FeatureKind::blocklist);
  if (ctx.json_mode) {
    ctx.emit(json(result));
    return kOk;
  }
  for (const auto& e : evidence) {
    ctx.out << glyph(e.verdict) << ' ' << pad(e.provider_id, 32) << to_string(e.verdict) << '\n';
  }
  ctx.out << "overall " << glyph(result.verdict) << ' ' << to_string(result.verdict);
  if (result.confidence) ctx.out << " (" << *result.confidence << "%)";
  ctx.out << '\n';
  return kOk;
}

struct CompareArgs {
  std::string targets_file;
  std::string features = "proxy,vpn,bot";
  std::string csv;
};

int cmd_compare(Context& ctx, const CompareArgs& a) {
  std::ifstream in(a.targets_file);
  if (!in) {
    ctx.err << "error: cannot read " << a.targets_file << '\n';
    if (ctx.json_mode) ctx.emit(json{{"error", "io_error"}, {"message", "cannot read targets file"}});
    return kUsage;
  }
  std::vector<Target> targets;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    const auto end = line.find_last_not_of(" \t\r");
    try {
      targets.push_back(parse_target(line.substr(start, end - start + 1)));
    } catch (const ParseError& e) {
      throw ParseError(a.targets_file + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (targets.empty()) throw InvalidArgument("targets file has no targets");
  const auto features = parse_feature_list(a.features);
  const auto cfg = ctx.config();
  std::vector<reputation::ProviderClientPtr> providers;
  for (const auto& p : cfg.providers) {
    if (p.enabled) providers.push_back(std::make_shared<reputation::ProviderClient>(p, *ctx.env.clock, ctx.env.meter));
  }
  if (providers.empty()) throw InvalidArgument("no providers configured");
  const auto m = aggregator::comparison_matrix(targets, providers, features, *ctx.env.clock);

  if (!a.csv.empty()) {
    if (a.csv == "-") {
      ctx.out << m.to_csv();
      return kOk;
    }
    std::ofstream f(a.csv);
    if (!f || !(f << m.to_csv())) throw IoError("cannot write " + a.csv);
  }
  if (ctx.json_mode) {
    ctx.emit(m.to_json());
  } else {
    ctx.out << m.render();
  }
  return kOk;
}

int cmd_serve(Context& ctx, const std::string& listen_override) {
  auto engine = ctx.engine();
  users::UserStore users(engine->config().users_path, *ctx.env.clock);
  service::Service svc(*engine, users, &ctx.err);
  std::string listen = listen_override.empty() ? engine->config().listen : listen_override;
  // Endpoint parsing rejects port 0, which here means "any free port".
  const bool any_port = listen.size() > 2 && listen.ends_with(":0");
  if (any_port) listen.resize(listen.size() - 2);
  auto ep = net::Endpoint::parse(listen, 8080);
  if (any_port) ep.port = 0;
  const int port = svc.bind(ep.host, ep.port);
  if (port < 0) throw IoError("cannot listen on " + ep.to_string());
  ctx.err << "serving on " << ep.host << ':' << port << '\n';
  std::thread notifier;
  if (ctx.env.on_serving) {
    notifier = std::thread([&] {
      svc.wait_until_ready();
      ctx.env.on_serving(svc, port);
    });
  }
  svc.run();
  if (notifier.joinable()) notifier.join();
  return kOk;
}

int cmd_datasets_refresh(Context& ctx, const std::string& id, const std::string& source) {
  auto engine = ctx.engine();
  const auto r = engine->registry().refresh_dataset(id, source, &engine->meter());
  if (ctx.json_mode) {
    ctx.emit(json{{"id", r.id},
                  {"old_count", r.old_count},
                  {"new_count", r.new_count},
                  {"loaded_at", format_rfc3339(r.loaded_at)}});
  } else {
    ctx.out << r.id << ": " << r.old_count << " -> " << r.new_count << " entries\n";
  }
  return kOk;
}

int cmd_datasets_list(Context& ctx) {
  auto engine = ctx.engine();
  const auto manifests = engine->registry().manifests();
  if (ctx.json_mode) {
    ctx.emit(json(manifests));
    return kOk;
  }
  for (const auto& m : manifests) {
    ctx.out << pad(m.id, 14) << pad(std::string(datasets::to_string(m.kind)), 14) << pad(std::to_string(m.entry_count), 10)
            << format_rfc3339(m.loaded_at) << '\n';
  }
  return kOk;
}

users::UserStore open_users(Context& ctx) { return users::UserStore(ctx.config().users_path, *ctx.env.clock); }

int cmd_user_add(Context& ctx, const std::string& name, const std::string& role_text) {
  const auto role = users::role_from_string(role_text);
  if (!role) throw InvalidArgument("role must be admin or analyst");
  auto store = open_users(ctx);
  const auto password = ctx.env.read_secret("Password: ");
  const auto u = store.add_user(name, password, *role);
  if (ctx.json_mode) {
    ctx.emit(json{{"id", u.id}, {"username", u.username}, {"role", users::to_string(u.role)}});
  } else {
    ctx.out << "added " << u.username << " (" << users::to_string(u.role) << ")\n";
  }
  return kOk;
}

int cmd_user_token(Context& ctx, const std::string& name, const std::string& scopes_text, std::int64_t expires_in) {
  auto store = open_users(ctx);
  const auto u = store.find(name);
  if (!u) throw InvalidArgument("no such user: " + name);
  users::Scopes scopes;
  for (const auto& s : split_list(scopes_text)) {
    auto sc = users::scope_from_string(s);
    if (!sc) throw InvalidArgument("unknown scope: " + s);
    scopes.insert(*sc);
  }
  if (scopes.empty()) scopes = users::role_scopes(u->role);
  std::optional<Timestamp> expires;
  if (expires_in > 0) expires = ctx.env.clock->now() + std::chrono::seconds(expires_in);
  const auto t = store.create_token(u->id, scopes, expires);
  if (ctx.json_mode) {
    json sc = json::array();
    for (auto s : t.scopes) sc.push_back(users::to_string(s));
    ctx.emit(json{{"token", t.token}, {"token_id", t.token_id}, {"scopes", sc}});
  } else {
    ctx.out << t.token << '\n';
  }
  return kOk;
}

int cmd_user_totp(Context& ctx, const std::string& name, const std::string& code) {
  auto store = open_users(ctx);
  const auto u = store.find(name);
  if (!u) throw InvalidArgument("no such user: " + name);
  if (!code.empty()) {
    if (!store.verify_totp(u->id, code)) throw InvalidArgument("code not accepted; enrollment still pending");
    if (ctx.json_mode) {
      ctx.emit(json{{"enrolled", true}});
    } else {
      ctx.out << "two-factor enabled for " << u->username << '\n';
    }
    return kOk;
  }
  const auto e = store.enroll_totp(u->id);
  if (ctx.json_mode) {
    ctx.emit(json{{"secret", e.secret}, {"otpauth_uri", e.otpauth_uri}});
  } else {
    ctx.out << "secret " << e.secret << '\n' << e.otpauth_uri << '\n';
    ctx.out << "confirm with: ipscope user totp " << u->username << " --code <code>\n";
  }
  return kOk;
}

int cmd_cache(Context& ctx, const std::string& action, const std::string& file, std::int64_t grace) {
  auto store = cache::open_sqlite_store(ctx.config().store_path, *ctx.env.clock);
  std::int64_t n = 0;
  if (action == "purge") {
    n = store->purge_expired(grace);
  } else if (action == "export") {
    if (file.empty() || file == "-") {
      n = store->export_jsonl(ctx.out);
      return kOk;
    }
    std::ofstream f(file);
    if (!f) throw IoError("cannot write " + file);
    n = store->export_jsonl(f);
  } else {
    std::ifstream f(file);
    if (!f) throw IoError("cannot read " + file);
    n = store->import_jsonl(f);
  }
  if (ctx.json_mode) {
    ctx.emit(json{{"action", action}, {"count", n}});
  } else {
    ctx.out << action << ": " << n << " entries\n";
  }
  return kOk;
}

}  // namespace

std::string render_report(const AnalysisReport& r) {
  std::ostringstream o;
  o << r.target.canonical_text() << "  " << to_string(r.target.kind()) << "  generated " << format_rfc3339(r.generated_at)
    << '\n';
  if (!r.results.empty()) {
    o << pad("FEATURE", 12) << pad("VERDICT", 13) << pad("CONF", 6) << pad("SOURCES", 9) << "CACHE\n";
    for (const auto& [f, res] : r.results) {
      int decisive = 0;
      for (const auto& e : res.evidence) decisive += e.verdict != Verdict::unknown && e.weight > 0;
      const auto fc = r.from_cache.find(f);
      const auto st = r.stale.find(f);
      const std::string cache = st != r.stale.end() && st->second   ? "stale"
                                : fc != r.from_cache.end() && fc->second ? "cached"
                                                                         : "live";
      o << pad(std::string(to_string(f)), 12) << pad(glyph(res.verdict) + " " + std::string(to_string(res.verdict)), 13)
        << pad(res.confidence ? std::to_string(*res.confidence) : "-", 6)
        << pad(std::to_string(decisive) + "/" + std::to_string(res.evidence.size()), 9) << cache << '\n';
    }
  }
  if (r.geo) {
    o << "geo        " << r.geo->country << ' ' << r.geo->city << " (" << r.geo->latitude << ", " << r.geo->longitude
      << ") via " << r.geo->cidr.to_string() << '\n';
  }
  if (r.abuse) {
    o << "abuse      score " << r.abuse->score << ", " << r.abuse->total_reports << " reports in "
      << r.abuse->window_days << " days (" << r.abuse->provider_id << ")\n";
  }
  if (r.liveness) {
    o << "liveness   " << (r.liveness->reachable ? kDot : kCross) << ' '
      << (r.liveness->reachable ? "reachable" : "unreachable") << " via " << to_string(r.liveness->method);
    if (r.liveness->rtt_ms) o << ", median rtt " << fmt_ms(*r.liveness->rtt_ms);
    o << '\n';
  }
  if (r.ports) {
    o << "ports     ";
    int shown = 0;
    for (const auto& e : r.ports->entries) {
      if (e.state != PortState::open) continue;
      o << ' ' << e.port;
      ++shown;
    }
    o << (shown ? " open" : " none open") << " of " << r.ports->entries.size() << " scanned\n";
  }
  if (r.whois) {
    o << "whois      registrar " << r.whois->registrar.value_or("-") << ", nameservers";
    if (r.whois->nameservers.empty()) o << " -";
    for (const auto& ns : r.whois->nameservers) o << ' ' << ns;
    o << '\n';
  }
  return o.str();
}

int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err, Env env) {
  if (!env.read_secret) env.read_secret = default_read_secret;
  Context ctx{out, err, env, false, {}};

  CLI::App app{"IP address and domain analysis", "ipscope"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", ctx.config_path, "Config file (default: $IPSCOPE_CONFIG)");
  app.add_flag("--json", ctx.json_mode, "Emit one JSON document on stdout");

  std::function<int()> action;

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Analyze an IP address or domain");
  analyze->add_option("target", an.target)->required();
  analyze->add_option("--features", an.features, "Comma-separated features");
  analyze->add_flag("--offline", an.offline, "Cache and local datasets only; no network");
  analyze->add_flag("--force-refresh", an.force_refresh, "Ignore fresh cache entries");
  analyze->add_flag("--no-stale", an.no_stale, "Never fall back to expired cache entries");
  analyze->add_flag("--i-own-this", an.consent, "Consent to active probes of a public target");
  analyze->callback([&] { action = [&] { return cmd_analyze(ctx, an); }; });

  ScanArgs sc;
  auto* scan = app.add_subcommand("scan", "TCP connect port scan");
  scan->add_option("target", sc.target)->required();
  scan->add_option("--ports", sc.ports, "top20, proxy, 1-1024, a range or a list");
  scan->add_option("--timeout-ms", sc.timeout_ms);
  scan->add_option("--parallelism", sc.parallelism);
  scan->add_flag("--i-own-this", sc.consent, "Consent to scanning a public target");
  scan->callback([&] { action = [&] { return cmd_scan(ctx, sc); }; });

  PingArgs pa;
  auto* ping = app.add_subcommand("ping", "Liveness check with round-trip time");
  ping->add_option("target", pa.target)->required();
  ping->add_option("--attempts", pa.attempts);
  ping->add_option("--timeout-ms", pa.timeout_ms);
  ping->add_flag("--tcp", pa.tcp_only, "Skip ICMP and use TCP connect");
  ping->add_flag("--i-own-this", pa.consent, "Consent to probing a public target");
  ping->callback([&] { action = [&] { return cmd_ping(ctx, pa); }; });

  WhoisArgs wa;
  auto* whois = app.add_subcommand("whois", "WHOIS lookup with referral following");
  whois->add_option("query", wa.query)->required();
  whois->add_option("--server", wa.server, "Root server as host[:port]");
  whois->callback([&] { action = [&] { return cmd_whois(ctx, wa); }; });

  std::string bl_target;
  auto* blocklist = app.add_subcommand("blocklist", "Check configured DNS blocklists");
  blocklist->add_option("ip", bl_target)->required();
  blocklist->callback([&] { action = [&] { return cmd_blocklist(ctx, bl_target); }; });

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare", "Provider-by-provider verdict matrix");
  compare->add_option("--targets", ca.targets_file, "File with one target per line")->required();
  compare->add_option("--features", ca.features);
  compare->add_option("--csv", ca.csv, "Write CSV to a file, or - for stdout");
  compare->callback([&] { action = [&] { return cmd_compare(ctx, ca); }; });

  std::string listen;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--listen", listen, "host:port (port 0 picks one)");
  serve->callback([&] { action = [&] { return cmd_serve(ctx, listen); }; });

  auto* ds = app.add_subcommand("datasets", "Dataset management");
  ds->require_subcommand(1);
  std::string ds_id, ds_source;
  auto* ds_refresh = ds->add_subcommand("refresh", "Reload a dataset from its source");
  ds_refresh->add_option("id", ds_id)->required();
  ds_refresh->add_option("--source", ds_source, "File path or URL");
  ds_refresh->callback([&] { action = [&] { return cmd_datasets_refresh(ctx, ds_id, ds_source); }; });
  auto* ds_list = ds->add_subcommand("list", "Show loaded datasets");
  ds_list->callback([&] { action = [&] { return cmd_datasets_list(ctx); }; });

  auto* user = app.add_subcommand("user", "User management");
  user->require_subcommand(1);
  std::string u_name, u_role = "analyst", u_scopes, u_code;
  std::int64_t u_expires = 0;
  auto* u_add = user->add_subcommand("add", "Create a user; reads the password from the terminal");
  u_add->add_option("username", u_name)->required();
  u_add->add_option("--role", u_role, "admin or analyst");
  u_add->callback([&] { action = [&] { return cmd_user_add(ctx, u_name, u_role); }; });
  auto* u_token = user->add_subcommand("token", "Issue an API token");
  u_token->add_option("username", u_name)->required();
  u_token->add_option("--scopes", u_scopes, "analyze,scan,admin (default: the role's)");
  u_token->add_option("--expires-in-s", u_expires);
  u_token->callback([&] { action = [&] { return cmd_user_token(ctx, u_name, u_scopes, u_expires); }; });
  auto* u_totp = user->add_subcommand("totp", "Enroll in two-factor auth, or confirm with --code");
  u_totp->add_option("username", u_name)->required();
  u_totp->add_option("--code", u_code);
  u_totp->callback([&] { action = [&] { return cmd_user_totp(ctx, u_name, u_code); }; });

  auto* cache_cmd = app.add_subcommand("cache", "Cache maintenance");
  cache_cmd->require_subcommand(1);
  std::string c_file;
  std::int64_t c_grace = 0;
  auto* c_purge = cache_cmd->add_subcommand("purge", "Delete expired entries");
  c_purge->add_option("--grace-s", c_grace);
  c_purge->callback([&] { action = [&] { return cmd_cache(ctx, "purge", "", c_grace); }; });
  auto* c_export = cache_cmd->add_subcommand("export", "Write entries as JSON lines");
  c_export->add_option("file", c_file);
  c_export->callback([&] { action = [&] { return cmd_cache(ctx, "export", c_file, 0); }; });
  auto* c_import = cache_cmd->add_subcommand("import", "Load entries from JSON lines");
  c_import->add_option("file", c_file)->required();
  c_import->callback([&] { action = [&] { return cmd_cache(ctx, "import", c_file, 0); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    if (ctx.json_mode) ctx.emit(json{{"error", "usage"}, {"message", e.what()}});
    return kUsage;
  }

  if (!action) return kUsage;
  try {
    return action();
  } catch (const Error& e) {
    return render_failure(ctx, e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    if (ctx.json_mode) ctx.emit(json{{"error", "internal_error"}, {"message", e.what()}});
    return kFailure;
  }
}

}  // namespace ipscope::cli
